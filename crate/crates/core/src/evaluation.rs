//! Classification metrics and the experiment protocols: single-feature
//! thresholds, area-percentile subsets, feature subsets and confidence bins.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::models::{Dataset, ModelError, ModelSpec, TrainedModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no rows to evaluate")]
    Empty,
    #[error("feature `{0}` needs both classes and at least two distinct values")]
    Degenerate(String),
    #[error("bin edges must be increasing and span [0.5, 1]")]
    BinEdges,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Class 1 (high naturalness) is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut c = Self::default();
        for (pred, label) in pairs {
            c.add(pred, label);
        }
        c
    }

    pub fn add(&mut self, pred: u8, label: u8) {
        match (pred, label) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Ratios with a zero denominator are 0 and their `*_defined` flag is false.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub balanced_accuracy: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
    pub balanced_accuracy_defined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics, EvalError> {
    if c.total() == 0 {
        return Err(EvalError::Empty);
    }
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let (precision, precision_defined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_defined) = ratio(c.tp, c.tp + c.fn_);
    let (tnr, tnr_defined) = ratio(c.tn, c.tn + c.fp);
    let (f1, f1_defined) = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let balanced_accuracy_defined = recall_defined && tnr_defined;
    let balanced_accuracy = match (recall_defined, tnr_defined) {
        (true, true) => 0.5 * (recall + tnr),
        (true, false) => recall,
        (false, true) => tnr,
        (false, false) => 0.0,
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        balanced_accuracy,
        precision_defined,
        recall_defined,
        f1_defined,
        balanced_accuracy_defined,
    })
}

pub fn confusion(model: &TrainedModel, data: &Dataset) -> Result<ConfusionCounts, ModelError> {
    let mut c = ConfusionCounts::default();
    for r in &data.rows {
        c.add(model.predict(&r.features)?, r.label);
    }
    Ok(c)
}

pub fn evaluate(model: &TrainedModel, data: &Dataset) -> Result<Metrics, EvalError> {
    metrics(&confusion(model, data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `x > threshold` predicts class 1.
    AboveHigh,
    /// `x <= threshold` predicts class 1.
    BelowHigh,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Orientation::AboveHigh => "above_high",
            Orientation::BelowHigh => "below_high",
        }
    }

    pub fn predict(self, x: f64, threshold: f64) -> u8 {
        match self {
            Orientation::AboveHigh => u8::from(x > threshold),
            Orientation::BelowHigh => u8::from(x <= threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub feature: String,
    pub threshold: f64,
    pub orientation: Orientation,
    pub train_accuracy: f64,
    pub train_hits: usize,
    pub validation_accuracy: Option<f64>,
}

impl ThresholdReport {
    pub fn accuracy_on(&self, data: &Dataset) -> Result<f64, EvalError> {
        let j = data
            .feature_position(&self.feature)
            .ok_or_else(|| ModelError::UnknownFeature(self.feature.clone()))?;
        if data.is_empty() {
            return Err(EvalError::Empty);
        }
        let hits = data
            .rows
            .iter()
            .filter(|r| self.orientation.predict(r.features[j], self.threshold) == r.label)
            .count();
        Ok(hits as f64 / data.len() as f64)
    }
}

/// Single-feature classifier maximizing training accuracy.
///
/// Candidates are midpoints between consecutive distinct values, each tried
/// with both orientations. Ties keep the smallest threshold and prefer
/// [`Orientation::AboveHigh`].
pub fn optimal_threshold(train: &Dataset, feature: &str) -> Result<ThresholdReport, EvalError> {
    let j = train
        .feature_position(feature)
        .ok_or_else(|| ModelError::UnknownFeature(feature.to_string()))?;
    let n = train.len();
    let total_pos = train.rows.iter().filter(|r| r.label == 1).count();
    if total_pos == 0 || total_pos == n {
        return Err(EvalError::Degenerate(feature.to_string()));
    }
    let mut pairs: Vec<(f64, u8)> = train.rows.iter().map(|r| (r.features[j], r.label)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best: Option<(usize, f64, Orientation)> = None;
    let (mut left_pos, mut left_neg) = (0usize, 0usize);
    for k in 0..n - 1 {
        if pairs[k].1 == 1 {
            left_pos += 1;
        } else {
            left_neg += 1;
        }
        if pairs[k].0 == pairs[k + 1].0 {
            continue;
        }
        let t = 0.5 * (pairs[k].0 + pairs[k + 1].0);
        let above = left_neg + (total_pos - left_pos);
        let below = n - above;
        for (hits, o) in [(above, Orientation::AboveHigh), (below, Orientation::BelowHigh)] {
            if best.is_none_or(|(h, _, _)| hits > h) {
                best = Some((hits, t, o));
            }
        }
    }
    let (hits, threshold, orientation) = best.ok_or_else(|| EvalError::Degenerate(feature.to_string()))?;
    Ok(ThresholdReport {
        feature: train.feature_names[j].clone(),
        threshold,
        orientation,
        train_accuracy: hits as f64 / n as f64,
        train_hits: hits,
        validation_accuracy: None,
    })
}

/// One threshold row per feature, with validation accuracy when given.
pub fn threshold_table(
    train: &Dataset,
    validation: Option<&Dataset>,
    features: &[impl AsRef<str> + Sync],
) -> Result<Vec<ThresholdReport>, EvalError> {
    features
        .iter()
        .map(|f| {
            let mut r = optimal_threshold(train, f.as_ref())?;
            if let Some(v) = validation.filter(|v| !v.is_empty()) {
                r.validation_accuracy = Some(r.accuracy_on(v)?);
            }
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaPercentileRow {
    pub percentile_low: f64,
    pub n_train: usize,
    pub a_min: f64,
    pub a_max: f64,
    pub n_validation: usize,
    pub n_test: usize,
    pub validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Why the row has no accuracy, if it has none.
    pub skipped: Option<String>,
}

pub const DEFAULT_PERCENTILES: [f64; 10] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0];

/// Training rows at or above the `p`-th area percentile.
///
/// Rows are ordered by area (ties by input order) and the first
/// `ceil(p·N/100)` are dropped.
pub fn area_subset(train: &Dataset, p: f64) -> Dataset {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&a, &b| train.rows[a].area_m2.total_cmp(&train.rows[b].area_m2));
    let drop = ((p.clamp(0.0, 100.0) * train.len() as f64 / 100.0).ceil() as usize).min(train.len());
    Dataset {
        feature_names: train.feature_names.clone(),
        rows: order[drop..].iter().map(|&i| train.rows[i].clone()).collect(),
    }
}

pub fn area_percentile_experiment(
    train: &Dataset,
    validation: &Dataset,
    test: &Dataset,
    percentile_lows: &[f64],
    spec: &ModelSpec,
) -> Result<Vec<AreaPercentileRow>, EvalError> {
    percentile_lows
        .par_iter()
        .map(|&p| {
            let sub = area_subset(train, p);
            let (a_min, a_max) = match (sub.rows.first(), sub.rows.last()) {
                (Some(a), Some(b)) => (a.area_m2, b.area_m2),
                _ => (f64::NAN, f64::NAN),
            };
            let within = |r: &crate::models::Sample| r.area_m2 >= a_min && r.area_m2 <= a_max;
            let v = validation.filter(within);
            let t = test.filter(within);
            let mut row = AreaPercentileRow {
                percentile_low: p,
                n_train: sub.len(),
                a_min,
                a_max,
                n_validation: v.len(),
                n_test: t.len(),
                validation_accuracy: None,
                test_accuracy: None,
                skipped: None,
            };
            if sub.is_empty() {
                row.skipped = Some("empty training subset".into());
            } else if t.is_empty() {
                row.skipped = Some("empty test subset".into());
            } else {
                let model = spec.fit(&sub, Some(&v))?;
                if !v.is_empty() {
                    row.validation_accuracy = Some(model.accuracy(&v)?);
                }
                row.test_accuracy = Some(model.accuracy(&t)?);
            }
            Ok(row)
        })
        .collect()
}

pub const DEFAULT_FEATURE_SUBSETS: [&[&str]; 4] = [
    &["td", "thm", "thv", "ttd", "tthm", "tthv", "elp", "ttsd"],
    &["td", "thm", "thv", "ttd", "tthm", "tthv"],
    &["thm", "ttd", "tthm", "elp"],
    &["ttd", "tthm"],
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSubsetRow {
    pub features: Vec<String>,
    pub model: String,
    pub test_accuracy: f64,
    pub test_balanced_accuracy: f64,
}

/// Retrains every model spec on every feature subset.
pub fn feature_subset_experiment(
    train: &Dataset,
    validation: &Dataset,
    test: &Dataset,
    subsets: &[Vec<String>],
    specs: &[ModelSpec],
) -> Result<Vec<FeatureSubsetRow>, EvalError> {
    let jobs: Vec<(&Vec<String>, &ModelSpec)> =
        subsets.iter().flat_map(|s| specs.iter().map(move |m| (s, m))).collect();
    jobs.par_iter()
        .map(|(subset, spec)| {
            let tr = train.select(subset)?;
            let va = validation.select(subset)?;
            let te = test.select(subset)?;
            let model = spec.fit(&tr, Some(&va))?;
            let m = evaluate(&model, &te)?;
            Ok(FeatureSubsetRow {
                features: tr.feature_names.clone(),
                model: spec.kind.name().to_string(),
                test_accuracy: m.accuracy,
                test_balanced_accuracy: m.balanced_accuracy,
            })
        })
        .collect()
}

pub const DEFAULT_BIN_EDGES: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceBin {
    pub lower: f64,
    pub upper: f64,
    pub support: usize,
    pub support_pct: f64,
    /// `None` for an empty bin.
    pub accuracy: Option<f64>,
}

/// Confidence `max(p, 1 − p)` of predictions from probabilities.
pub fn confidence_bins(
    predictions: &[(f64, u8)],
    edges: &[f64],
) -> Result<Vec<ConfidenceBin>, EvalError> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) || edges[0] > 0.5 || edges[edges.len() - 1] < 1.0 {
        return Err(EvalError::BinEdges);
    }
    let nb = edges.len() - 1;
    let mut support = vec![0usize; nb];
    let mut hits = vec![0usize; nb];
    for &(p, label) in predictions {
        let conf = p.max(1.0 - p);
        let pred = u8::from(p >= 0.5);
        // left-closed bins, last bin also closed on the right
        let b = edges[1..nb].partition_point(|&e| e <= conf);
        support[b] += 1;
        hits[b] += usize::from(pred == label);
    }
    let n = predictions.len();
    Ok((0..nb)
        .map(|b| ConfidenceBin {
            lower: edges[b],
            upper: edges[b + 1],
            support: support[b],
            support_pct: if n == 0 { 0.0 } else { 100.0 * support[b] as f64 / n as f64 },
            accuracy: (support[b] > 0).then(|| hits[b] as f64 / support[b] as f64),
        })
        .collect())
}

pub fn confidence_bins_experiment(
    model: &TrainedModel,
    test: &Dataset,
    edges: &[f64],
) -> Result<Vec<ConfidenceBin>, EvalError> {
    let preds = test
        .rows
        .iter()
        .map(|r| Ok((model.predict_proba(&r.features)?, r.label)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    confidence_bins(&preds, edges)
}

/// Non-decreasing accuracy across non-empty bins.
pub fn bins_monotone(bins: &[ConfidenceBin]) -> bool {
    let acc: Vec<f64> = bins.iter().filter_map(|b| b.accuracy).collect();
    acc.windows(2).all(|w| w[0] <= w[1])
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn threshold_csv(rows: &[ThresholdReport]) -> Result<String, EvalError> {
    to_csv(
        &["feature", "threshold", "orientation", "train_accuracy", "validation_accuracy"],
        rows.iter().map(|r| {
            vec![
                r.feature.clone(),
                r.threshold.to_string(),
                r.orientation.name().into(),
                r.train_accuracy.to_string(),
                opt(r.validation_accuracy),
            ]
        }),
    )
}

pub fn area_percentile_csv(model: &str, rows: &[AreaPercentileRow]) -> Result<String, EvalError> {
    to_csv(
        &[
            "model",
            "percentile_low",
            "n_train",
            "a_min_m2",
            "a_max_m2",
            "n_validation",
            "n_test",
            "validation_accuracy",
            "test_accuracy",
            "skipped",
        ],
        rows.iter().map(|r| {
            vec![
                model.to_string(),
                r.percentile_low.to_string(),
                r.n_train.to_string(),
                r.a_min.to_string(),
                r.a_max.to_string(),
                r.n_validation.to_string(),
                r.n_test.to_string(),
                opt(r.validation_accuracy),
                opt(r.test_accuracy),
                r.skipped.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn feature_subset_csv(rows: &[FeatureSubsetRow]) -> Result<String, EvalError> {
    to_csv(
        &["features", "model", "test_accuracy", "test_balanced_accuracy"],
        rows.iter().map(|r| {
            vec![
                r.features.join("+"),
                r.model.clone(),
                r.test_accuracy.to_string(),
                r.test_balanced_accuracy.to_string(),
            ]
        }),
    )
}

pub fn confidence_bins_csv(model: &str, rows: &[ConfidenceBin]) -> Result<String, EvalError> {
    to_csv(
        &["model", "lower", "upper", "support", "support_pct", "accuracy"],
        rows.iter().map(|r| {
            vec![
                model.to_string(),
                r.lower.to_string(),
                r.upper.to_string(),
                r.support.to_string(),
                r.support_pct.to_string(),
                opt(r.accuracy),
            ]
        }),
    )
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String, std::io::Error> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Plain-text record of a run: command, seed, input hashes and the full
/// configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
    pub config: String,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: String) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            ..Default::default()
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<(), std::io::Error> {
        let p = path.as_ref();
        self.inputs.push((p.display().to_string(), sha256_file(p)?));
        Ok(())
    }

    pub fn add_output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.push((name.to_string(), sha256_hex(bytes)));
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command: {}", self.command);
        let _ = writeln!(s, "version: {}", env!("CARGO_PKG_VERSION"));
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed: {seed}");
        }
        for (p, h) in &self.inputs {
            let _ = writeln!(s, "input: {p} sha256={h}");
        }
        for (p, h) in &self.outputs {
            let _ = writeln!(s, "output: {p} sha256={h}");
        }
        let _ = writeln!(s, "config:");
        for line in self.config.lines() {
            let _ = writeln!(s, "  {line}");
        }
        s
    }
}
