//! Interpretable binary classifiers and their on-disk format.
//!
//! All three models report `p_high`, the probability of label 1, and
//! predict label 1 exactly when `p_high >= 0.5`.

mod dataset;
pub mod logistic;
pub mod perceptron;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{Dataset, Normalizer, Sample};
pub use logistic::{train_logistic, LogisticModel, LogisticParams};
pub use perceptron::{train_perceptron, PerceptronModel, PerceptronParams};
pub use tree::{train_tree, DecisionTreeModel, TreeNode, TreeParams};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("row {row}: label {label} is not 0 or 1")]
    InvalidLabel { row: usize, label: u8 },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` listed twice")]
    DuplicateFeature(String),
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error("model schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u64, expected: u32 },
    #[error("cannot load model: {0}")]
    Load(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Heaviside step with `Θ(0) = 1`.
#[inline]
pub fn heaviside(s: f64) -> u8 {
    u8::from(s >= 0.0)
}

/// Keeps a linear model's probability on the same side of 0.5 as its score,
/// so rounding in the link function cannot disagree with `Θ`.
pub(crate) fn align_with_sign(p: f64, score: f64) -> f64 {
    if score >= 0.0 {
        p.max(0.5)
    } else {
        p.min(0.5f64.next_down())
    }
}

pub(crate) fn accuracy_of(data: &Dataset, mut predict: impl FnMut(&[f64]) -> u8) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data
        .rows
        .iter()
        .filter(|r| predict(&r.features) == r.label)
        .count();
    hits as f64 / data.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Perceptron,
    Logistic,
    Tree,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Perceptron, ModelKind::Logistic, ModelKind::Tree];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Perceptron => "perceptron",
            ModelKind::Logistic => "logistic",
            ModelKind::Tree => "tree",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "perceptron" => Ok(ModelKind::Perceptron),
            "logistic" | "logreg" | "logistic_regression" => Ok(ModelKind::Logistic),
            "tree" | "cart" | "decision_tree" => Ok(ModelKind::Tree),
            other => Err(ModelError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ModelParams {
    Perceptron(PerceptronModel),
    Logistic(LogisticModel),
    Tree(DecisionTreeModel),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub n_train: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_validation: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// A fitted classifier together with its feature subset and scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub feature_names: Vec<String>,
    /// Absent for the tree, which splits on raw feature values.
    pub normalizer: Option<Normalizer>,
    #[serde(flatten)]
    pub params: ModelParams,
    pub training: TrainingMeta,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::Perceptron(_) => ModelKind::Perceptron,
            ModelParams::Logistic(_) => ModelKind::Logistic,
            ModelParams::Tree(_) => ModelKind::Tree,
        }
    }

    /// `p_high` for raw (unnormalized) features in `feature_names` order.
    pub fn predict_proba(&self, features: &[f64]) -> Result<f64, ModelError> {
        if features.len() != self.feature_names.len() {
            return Err(ModelError::Dimension {
                expected: self.feature_names.len(),
                got: features.len(),
            });
        }
        let scaled;
        let x = match &self.normalizer {
            Some(n) => {
                scaled = n.transform(features);
                &scaled[..]
            }
            None => features,
        };
        Ok(match &self.params {
            ModelParams::Perceptron(m) => m.predict_proba(x),
            ModelParams::Logistic(m) => m.predict_proba(x),
            ModelParams::Tree(m) => m.predict_proba(x),
        })
    }

    pub fn predict(&self, features: &[f64]) -> Result<u8, ModelError> {
        self.predict_proba(features).map(|p| u8::from(p >= 0.5))
    }

    /// `(p_low, p_high)`.
    pub fn class_probabilities(&self, features: &[f64]) -> Result<(f64, f64), ModelError> {
        self.predict_proba(features).map(|p| (1.0 - p, p))
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64, ModelError> {
        let mut hits = 0usize;
        for r in &data.rows {
            hits += usize::from(self.predict(&r.features)? == r.label);
        }
        Ok(if data.is_empty() { 0.0 } else { hits as f64 / data.len() as f64 })
    }
}

/// Model kind plus hyperparameters for all trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub perceptron: PerceptronParams,
    pub logistic: LogisticParams,
    pub tree: TreeParams,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::new(ModelKind::Logistic)
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            perceptron: PerceptronParams::default(),
            logistic: LogisticParams::default(),
            tree: TreeParams::default(),
        }
    }

    /// Trains on `train`; `validation` drives perceptron early stopping.
    pub fn fit(&self, train: &Dataset, validation: Option<&Dataset>) -> Result<TrainedModel, ModelError> {
        if train.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        if let Some(v) = validation {
            if v.feature_names != train.feature_names {
                return Err(ModelError::Dimension {
                    expected: train.n_features(),
                    got: v.n_features(),
                });
            }
        }
        let mut meta = TrainingMeta {
            n_train: train.len(),
            n_validation: validation.map(Dataset::len),
            ..Default::default()
        };
        let (normalizer, params) = match self.kind {
            ModelKind::Perceptron => {
                let norm = Normalizer::fit(train)?;
                let t = train.normalized(&norm);
                let v = validation.filter(|v| !v.is_empty()).map(|v| v.normalized(&norm));
                let m = train_perceptron(&t, &self.perceptron, v.as_ref())?;
                meta.seed = Some(self.perceptron.seed);
                meta.epochs = Some(m.epochs_run);
                meta.best_epoch = Some(m.best_epoch);
                (Some(norm), ModelParams::Perceptron(m))
            }
            ModelKind::Logistic => {
                let norm = Normalizer::fit(train)?;
                let m = train_logistic(&train.normalized(&norm), &self.logistic)?;
                meta.lambda = Some(m.lambda);
                meta.epochs = Some(m.iterations);
                if !m.converged {
                    let w = format!(
                        "logistic regression did not converge in {} iterations (gradient norm {:e})",
                        m.iterations, m.gradient_norm
                    );
                    log::warn!("{w}");
                    meta.warnings.push(w);
                }
                (Some(norm), ModelParams::Logistic(m))
            }
            ModelKind::Tree => {
                let m = train_tree(train, &self.tree)?;
                meta.depth = Some(m.depth());
                (None, ModelParams::Tree(m))
            }
        };
        Ok(TrainedModel {
            feature_names: train.feature_names.clone(),
            normalizer,
            params,
            training: meta,
        })
    }
}

#[derive(Serialize)]
struct ModelFileOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    model: &'a TrainedModel,
}

pub fn model_to_json(model: &TrainedModel) -> String {
    let file = ModelFileOut {
        schema_version: MODEL_SCHEMA_VERSION,
        model,
    };
    serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
}

pub fn model_from_json(text: &str) -> Result<TrainedModel, ModelError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ModelError::Load(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| ModelError::Load("top level is not an object".into()))?;
    let version = obj
        .remove("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ModelError::Load("missing schema_version".into()))?;
    if version != MODEL_SCHEMA_VERSION as u64 {
        return Err(ModelError::SchemaVersion {
            found: version,
            expected: MODEL_SCHEMA_VERSION,
        });
    }
    if let Some(kind) = obj.get("kind").and_then(|k| k.as_str()) {
        if !ModelKind::ALL.iter().any(|k| k.name() == kind) {
            return Err(ModelError::UnknownKind(kind.to_string()));
        }
    }
    let model: TrainedModel = serde_json::from_value(value).map_err(|e| ModelError::Load(e.to_string()))?;
    let dim = model.feature_names.len();
    let expected_params = match &model.params {
        ModelParams::Perceptron(m) => m.weights.len() == dim + 1,
        ModelParams::Logistic(m) => m.coefficients.len() == dim + 1,
        ModelParams::Tree(m) => m.nodes.iter().all(|n| match n {
            TreeNode::Split { feature, left, right, .. } => {
                *feature < dim && *left < m.nodes.len() && *right < m.nodes.len()
            }
            TreeNode::Leaf { counts } => counts[0] + counts[1] > 0,
        }) && !m.nodes.is_empty(),
    };
    let norm_ok = model
        .normalizer
        .as_ref()
        .is_none_or(|n| n.min.len() == dim && n.max.len() == dim);
    if !expected_params || !norm_ok {
        return Err(ModelError::Load("parameters do not match the feature list".into()));
    }
    Ok(model)
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, model_to_json(model) + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel, ModelError> {
    model_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(0.0..50.0), rng.random_range(100.0..300.0), rng.random()])
            .collect();
        let y = x
            .iter()
            .map(|v| u8::from(v[0] / 50.0 + (v[1] - 100.0) / 400.0 + 0.4 * rng.random::<f64>() > 0.9))
            .collect();
        Dataset::from_xy(vec!["td".into(), "thm".into(), "elp".into()], x, y).unwrap()
    }

    fn all_models() -> Vec<TrainedModel> {
        let train = random_dataset(1, 150);
        let valid = random_dataset(2, 50);
        ModelKind::ALL
            .iter()
            .map(|&k| ModelSpec::new(k).fit(&train, Some(&valid)).unwrap())
            .collect()
    }

    #[test]
    fn tie_rule_and_zero_models() {
        assert_eq!(heaviside(0.0), 1);
        assert_eq!(heaviside(-0.0), 1);
        let lr = LogisticModel {
            coefficients: vec![0.0; 3],
            lambda: 1.0,
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
        };
        assert_eq!(lr.predict_proba(&[0.3, 0.7]), 0.5);
        let p = PerceptronModel {
            weights: vec![0.0, 0.0],
            margin_scale: 1.0,
            epochs_run: 0,
            best_epoch: 0,
        };
        assert_eq!(p.predict_proba(&[0.4]), 0.5);
        let model = TrainedModel {
            feature_names: vec!["td".into()],
            normalizer: None,
            params: ModelParams::Perceptron(p),
            training: TrainingMeta::default(),
        };
        assert_eq!(model.predict(&[0.4]).unwrap(), 1);
    }

    #[test]
    fn predict_matches_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in all_models() {
            for _ in 0..1000 {
                let x = [rng.random_range(-10.0..60.0), rng.random_range(50.0..350.0), rng.random()];
                let (lo, hi) = m.class_probabilities(&x).unwrap();
                assert!((0.0..=1.0).contains(&hi));
                assert_eq!(m.predict(&x).unwrap(), u8::from(hi >= lo), "{}", m.kind());
                if let ModelParams::Perceptron(p) = &m.params {
                    let xs = m.normalizer.as_ref().unwrap().transform(&x);
                    assert_eq!(m.predict(&x).unwrap(), heaviside(p.score(&xs)));
                }
                if let ModelParams::Logistic(l) = &m.params {
                    let xs = m.normalizer.as_ref().unwrap().transform(&x);
                    assert_eq!(m.predict(&x).unwrap(), heaviside(l.score(&xs)));
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = &all_models()[0];
        assert!(matches!(m.predict(&[1.0]), Err(ModelError::Dimension { expected: 3, got: 1 })));
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for m in all_models() {
            let path = dir.path().join(format!("{}.json", m.kind()));
            save_model(&m, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, m);
            for _ in 0..100 {
                let x = [rng.random_range(0.0..50.0), rng.random_range(100.0..300.0), rng.random()];
                assert_eq!(
                    back.predict_proba(&x).unwrap().to_bits(),
                    m.predict_proba(&x).unwrap().to_bits()
                );
            }
        }
    }

    #[test]
    fn load_errors() {
        let m = &all_models()[1];
        let text = model_to_json(m);
        assert!(matches!(model_from_json(&text[..text.len() / 2]), Err(ModelError::Load(_))));
        let wrong_kind = text.replace("\"logistic\"", "\"svm\"");
        assert!(matches!(model_from_json(&wrong_kind), Err(ModelError::UnknownKind(_))));
        let wrong_version = text.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(model_from_json(&wrong_version), Err(ModelError::SchemaVersion { found: 2, .. })));
    }

    #[test]
    fn trainers_are_deterministic() {
        assert_eq!(all_models(), all_models());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("CART".parse::<ModelKind>().unwrap(), ModelKind::Tree);
        assert!("forest".parse::<ModelKind>().is_err());
    }
}
