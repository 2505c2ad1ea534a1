use serde::{Deserialize, Serialize};

use super::ModelError;

/// One labeled region described by a chosen feature subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u8,
    pub area_m2: f64,
    pub source_id: String,
}

/// Tabular training data: rows of features plus a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Sample>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<Sample>) -> Result<Self, ModelError> {
        check_names(&feature_names)?;
        for (i, r) in rows.iter().enumerate() {
            if r.features.len() != feature_names.len() {
                return Err(ModelError::Dimension {
                    expected: feature_names.len(),
                    got: r.features.len(),
                });
            }
            if r.label > 1 {
                return Err(ModelError::InvalidLabel { row: i, label: r.label });
            }
        }
        Ok(Self { feature_names, rows })
    }

    /// Dataset from bare feature rows; area and ids are filled with placeholders.
    pub fn from_xy(
        feature_names: Vec<String>,
        x: Vec<Vec<f64>>,
        y: Vec<u8>,
    ) -> Result<Self, ModelError> {
        let rows = x
            .into_iter()
            .zip(y)
            .enumerate()
            .map(|(i, (features, label))| Sample {
                features,
                label,
                area_m2: 0.0,
                source_id: format!("row-{i}"),
            })
            .collect();
        Self::new(feature_names, rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.features[j]).collect()
    }

    pub fn feature_position(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n.eq_ignore_ascii_case(name))
    }

    /// Restricts to the named columns, in the given order.
    pub fn select(&self, names: &[impl AsRef<str>]) -> Result<Dataset, ModelError> {
        let wanted: Vec<String> = names.iter().map(|n| n.as_ref().trim().to_ascii_lowercase()).collect();
        check_names(&wanted)?;
        let idx: Vec<usize> = wanted
            .iter()
            .map(|n| {
                self.feature_position(n)
                    .ok_or_else(|| ModelError::UnknownFeature(n.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Dataset {
            feature_names: wanted,
            rows: self
                .rows
                .iter()
                .map(|r| Sample {
                    features: idx.iter().map(|&j| r.features[j]).collect(),
                    ..r.clone()
                })
                .collect(),
        })
    }

    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Applies a normalizer to every row.
    pub fn normalized(&self, normalizer: &Normalizer) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| Sample {
                    features: normalizer.transform(&r.features),
                    ..r.clone()
                })
                .collect(),
        }
    }

    /// Fraction of rows with label 1.
    pub fn positive_rate(&self) -> f64 {
        self.rows.iter().filter(|r| r.label == 1).count() as f64 / self.rows.len() as f64
    }
}

fn check_names(names: &[String]) -> Result<(), ModelError> {
    for (i, n) in names.iter().enumerate() {
        if names[..i].iter().any(|m| m.eq_ignore_ascii_case(n)) {
            return Err(ModelError::DuplicateFeature(n.clone()));
        }
    }
    Ok(())
}

/// Per-feature min-max scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(data: &Dataset) -> Result<Self, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let d = data.n_features();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in &data.rows {
            for j in 0..d {
                min[j] = min[j].min(r.features[j]);
                max[j] = max[j].max(r.features[j]);
            }
        }
        Ok(Self { min, max })
    }

    /// Maps into `[0, 1]`, clamping out-of-range values; constant features map to 0.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalizer_contract() {
        let d = Dataset::from_xy(
            names(&["a", "b"]),
            vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![2.0, 5.0]],
            vec![0, 1, 0],
        )
        .unwrap();
        let n = Normalizer::fit(&d).unwrap();
        assert_eq!(n.transform(&[1.0, 5.0]), vec![0.0, 0.0]);
        assert_eq!(n.transform(&[3.0, 5.0]), vec![1.0, 0.0]);
        assert_eq!(n.transform(&[2.0, 9.0]), vec![0.5, 0.0]);
        assert_eq!(n.transform(&[-10.0, 1.0]), vec![0.0, 0.0]);
        assert_eq!(n.transform(&[10.0, 1.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn selection_errors() {
        let d = Dataset::from_xy(names(&["td", "thm"]), vec![vec![1.0, 2.0]], vec![1]).unwrap();
        assert_eq!(d.select(&["thm"]).unwrap().rows[0].features, vec![2.0]);
        assert!(matches!(d.select(&["thm", "THM"]), Err(ModelError::DuplicateFeature(_))));
        assert!(matches!(d.select(&["ttd"]), Err(ModelError::UnknownFeature(_))));
        assert!(matches!(
            Dataset::from_xy(names(&["a"]), vec![vec![1.0, 2.0]], vec![0]),
            Err(ModelError::Dimension { .. })
        ));
        assert!(matches!(
            Dataset::from_xy(names(&["a"]), vec![vec![1.0]], vec![2]),
            Err(ModelError::InvalidLabel { .. })
        ));
    }
}
