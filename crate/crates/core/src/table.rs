//! Per-region feature tables as CSV.
//!
//! Columns: `source_id,label,area_m2` followed by the eight feature names.
//! Labels are `high`, `low` or empty. Floats use the shortest decimal form
//! that parses back to the same value.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_NAMES};
use crate::geometry::Label;
use crate::models::{Dataset, ModelError, Sample};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("header must be `{expected}`")]
    Header { expected: String },
    #[error("row `{0}` has no label")]
    MissingLabel(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub source_id: String,
    pub label: Option<Label>,
    pub area_m2: f64,
    pub features: FeatureVector,
}

pub fn header() -> Vec<&'static str> {
    let mut h = vec!["source_id", "label", "area_m2"];
    h.extend(FEATURE_NAMES);
    h
}

pub fn write_table<W: Write>(rows: &[FeatureRow], out: W) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for r in rows {
        let mut rec = vec![
            r.source_id.clone(),
            r.label.map(|l| l.name().to_string()).unwrap_or_default(),
            r.area_m2.to_string(),
        ];
        rec.extend(r.features.to_array().iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<R: Read>(input: R) -> Result<Vec<FeatureRow>, TableError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let expected = header();
    let got: Vec<String> = rd.headers()?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if got != expected {
        return Err(TableError::Header {
            expected: expected.join(","),
        });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |msg: String| TableError::Parse { line, msg };
        let num = |i: usize| -> Result<f64, TableError> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| err(format!("column `{}`: `{}` is not a number", expected[i], &rec[i])))
        };
        let label = match rec[1].trim() {
            "" => None,
            s => Some(Label::parse(s).ok_or_else(|| err(format!("unknown label `{s}`")))?),
        };
        let mut f = [0.0; 8];
        for (j, v) in f.iter_mut().enumerate() {
            *v = num(3 + j)?;
        }
        rows.push(FeatureRow {
            source_id: rec[0].to_string(),
            label,
            area_m2: num(2)?,
            features: FeatureVector::from_array(f),
        });
    }
    Ok(rows)
}

pub fn save_table(rows: &[FeatureRow], path: impl AsRef<Path>) -> Result<(), TableError> {
    let f = std::fs::File::create(path)?;
    write_table(rows, std::io::BufWriter::new(f))
}

pub fn load_table(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>, TableError> {
    read_table(std::fs::File::open(path)?)
}

/// Labeled dataset over all eight features; unlabeled rows are an error.
pub fn to_dataset(rows: &[FeatureRow]) -> Result<Dataset, TableError> {
    let samples = rows
        .iter()
        .map(|r| {
            let label = r.label.ok_or_else(|| TableError::MissingLabel(r.source_id.clone()))?;
            Ok(Sample {
                features: r.features.to_array().to_vec(),
                label: label.as_u8(),
                area_m2: r.area_m2,
                source_id: r.source_id.clone(),
            })
        })
        .collect::<Result<Vec<_>, TableError>>()?;
    Ok(Dataset::new(
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        samples,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, label: Option<Label>, base: f64) -> FeatureRow {
        FeatureRow {
            source_id: id.into(),
            label,
            area_m2: 12_345.5,
            features: FeatureVector::from_array([0.1, base, 1.0 / 3.0, 214.2, 155.8, 0.057, 0.061, 1e-7]),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![row("a,1", Some(Label::High), 128.3), row("b", None, 0.1 + 0.2)];
        let mut buf = Vec::new();
        write_table(&rows, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("source_id,label,area_m2,td,thm,thv,ttd,tthm,tthv,elp,ttsd\n"));
        assert_eq!(read_table(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn errors() {
        assert!(matches!(read_table("a,b\n1,2\n".as_bytes()), Err(TableError::Header { .. })));
        let bad = format!("{}\nx,high,1,1,2,3,4,5,6,7,oops\n", header().join(","));
        assert!(matches!(read_table(bad.as_bytes()), Err(TableError::Parse { line: 2, .. })));
        let unlabeled = vec![row("u", None, 1.0)];
        assert!(matches!(to_dataset(&unlabeled), Err(TableError::MissingLabel(_))));
    }

    #[test]
    fn dataset_columns() {
        let d = to_dataset(&[row("a", Some(Label::Low), 99.0)]).unwrap();
        assert_eq!(d.rows[0].label, 0);
        assert_eq!(d.rows[0].features[1], 99.0);
        assert_eq!(d.feature_names.len(), 8);
    }
}
