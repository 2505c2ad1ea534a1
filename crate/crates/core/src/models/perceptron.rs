use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy_of, heaviside, Dataset, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptronParams {
    pub eta: f64,
    pub max_epochs: usize,
    /// Epochs without a selection-accuracy improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for PerceptronParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            max_epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

/// Linear threshold unit; `weights[0]` is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptronModel {
    pub weights: Vec<f64>,
    /// Population std of the training weighted sums, scales the erf link.
    pub margin_scale: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

impl PerceptronModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        weighted_sum(&self.weights, x)
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let s = self.score(x);
        let p = 0.5 * (1.0 + libm::erf(s / (self.margin_scale * std::f64::consts::SQRT_2)));
        super::align_with_sign(p, s)
    }
}

#[inline]
fn weighted_sum(w: &[f64], x: &[f64]) -> f64 {
    w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

fn accuracy(w: &[f64], data: &Dataset) -> f64 {
    accuracy_of(data, |x| heaviside(weighted_sum(w, x)))
}

/// Online perceptron training on normalized features.
///
/// Weights start at zero. Every epoch visits the rows in a fresh seeded
/// shuffle and applies `w ← w + η (d − y) x` with `x₀ = 1`. After each epoch
/// the selection accuracy (on `early_stop` if given, else on `train`) is
/// recorded; the best snapshot is returned. Training ends after
/// `max_epochs`, after `patience` epochs without improvement, or once an
/// epoch makes no mistakes.
pub fn train_perceptron(
    train: &Dataset,
    params: &PerceptronParams,
    early_stop: Option<&Dataset>,
) -> Result<PerceptronModel, ModelError> {
    train_perceptron_traced(train, params, early_stop).map(|(m, _)| m)
}

/// Same as [`train_perceptron`], also returning the weight norm after every epoch.
pub fn train_perceptron_traced(
    train: &Dataset,
    params: &PerceptronParams,
    early_stop: Option<&Dataset>,
) -> Result<(PerceptronModel, Vec<f64>), ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let d = train.n_features();
    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut best_w = w.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0usize;
    let mut epochs_run = 0;
    let mut norms = Vec::new();

    for epoch in 1..=params.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut mistakes = 0usize;
        for &k in &order {
            let row = &train.rows[k];
            let y = heaviside(weighted_sum(&w, &row.features));
            if y != row.label {
                mistakes += 1;
                let step = params.eta * (row.label as f64 - y as f64);
                w[0] += step;
                for (wi, xi) in w[1..].iter_mut().zip(&row.features) {
                    *wi += step * xi;
                }
            }
        }
        norms.push(w.iter().map(|v| v * v).sum::<f64>().sqrt());

        let acc = accuracy(&w, early_stop.unwrap_or(train));
        if acc > best_acc {
            best_acc = acc;
            best_w.clone_from(&w);
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        if mistakes == 0 || stale >= params.patience {
            break;
        }
    }

    let scores: Vec<f64> = train.rows.iter().map(|r| weighted_sum(&best_w, &r.features)).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64).sqrt();
    let margin_scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };

    Ok((
        PerceptronModel {
            weights: best_w,
            margin_scale,
            epochs_run,
            best_epoch,
        },
        norms,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ds(x: Vec<Vec<f64>>, y: Vec<u8>) -> Dataset {
        let n = x[0].len();
        Dataset::from_xy((0..n).map(|i| format!("f{i}")).collect(), x, y).unwrap()
    }

    #[test]
    fn separable_1d_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..20 {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for _ in 0..60 {
                // centered at 0.5 after normalization, margin 0.1 either side
                let v: f64 = rng.random_range(0.0..0.4);
                if rng.random_bool(0.5) {
                    x.push(vec![0.6 + v]);
                    y.push(1);
                } else {
                    x.push(vec![0.4 - v]);
                    y.push(0);
                }
            }
            let d = ds(x, y);
            let params = PerceptronParams { max_epochs: 100, patience: 100, seed, ..Default::default() };
            let m = train_perceptron(&d, &params, None).unwrap();
            assert_eq!(accuracy(&m.weights, &d), 1.0, "seed {seed}");
            assert!(m.epochs_run <= 100);
        }
    }

    #[test]
    fn constant_labels() {
        for label in [0u8, 1] {
            let d = ds(vec![vec![0.0], vec![0.3], vec![1.0]], vec![label; 3]);
            let params = PerceptronParams { max_epochs: 1, ..Default::default() };
            let m = train_perceptron(&d, &params, None).unwrap();
            for r in &d.rows {
                assert_eq!(heaviside(m.score(&r.features)), label);
            }
        }
    }

    #[test]
    fn xor_is_not_learnable() {
        let d = ds(
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![0, 1, 1, 0],
        );
        for seed in 0..10 {
            let params = PerceptronParams { seed, ..Default::default() };
            let m = train_perceptron(&d, &params, None).unwrap();
            assert!(accuracy(&m.weights, &d) <= 0.75);
        }
    }

    #[test]
    fn weights_stay_bounded_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..80).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<u8> = x.iter().map(|v| u8::from(v[0] + 0.3 * rng.random::<f64>() > 0.6)).collect();
        let d = ds(x, y);
        let params = PerceptronParams { max_epochs: 2000, patience: usize::MAX, eta: 0.1, seed: 3 };
        let (_, norms) = train_perceptron_traced(&d, &params, None).unwrap();
        assert_eq!(norms.len(), 2000);
        // each mistake adds at most η²‖(1, x)‖² to ‖w‖²
        let r2 = d.rows.iter().map(|r| 1.0 + r.features.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
        let first: f64 = norms[..1000].iter().cloned().fold(0.0, f64::max);
        let second: f64 = norms[1000..].iter().cloned().fold(0.0, f64::max);
        assert!(second <= 1.5 * first + params.eta * r2.sqrt(), "{first} {second}");
        let bound = params.eta * (r2 * (2000 * d.len()) as f64).sqrt();
        assert!(norms.iter().all(|&n| n < bound));
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        let y: Vec<u8> = (0..50).map(|_| rng.random_range(0..2)).collect();
        let d = ds(x, y);
        let p = PerceptronParams { seed: 17, ..Default::default() };
        let a = train_perceptron(&d, &p, Some(&d)).unwrap();
        let b = train_perceptron(&d, &p, Some(&d)).unwrap();
        assert_eq!(a, b);
    }
}
