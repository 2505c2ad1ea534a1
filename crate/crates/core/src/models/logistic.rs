use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dataset, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    /// L2 strength on the non-intercept coefficients.
    pub lambda: f64,
    /// Stop once the Euclidean gradient norm is at most this.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tolerance: 1e-8,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept first, then one coefficient per feature.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

impl LogisticModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        linear(&self.coefficients, x)
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let s = self.score(x);
        super::align_with_sign(sigmoid(s), s)
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn linear(beta: &[f64], x: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Penalized negative log-likelihood `Σ [ln(1+e^z) − y z] + λ/2 ‖β₁..‖²`.
pub fn logistic_loss(data: &Dataset, beta: &[f64], lambda: f64) -> f64 {
    let nll: f64 = data
        .rows
        .iter()
        .map(|r| {
            let z = linear(beta, &r.features);
            softplus(z) - r.label as f64 * z
        })
        .sum();
    nll + 0.5 * lambda * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

pub fn logistic_gradient(data: &Dataset, beta: &[f64], lambda: f64) -> Vec<f64> {
    let mut g = vec![0.0; beta.len()];
    for r in &data.rows {
        let e = sigmoid(linear(beta, &r.features)) - r.label as f64;
        g[0] += e;
        for (gj, xj) in g[1..].iter_mut().zip(&r.features) {
            *gj += e * xj;
        }
    }
    for j in 1..beta.len() {
        g[j] += lambda * beta[j];
    }
    g
}

fn hessian(data: &Dataset, beta: &[f64], lambda: f64) -> DMatrix<f64> {
    let d = beta.len();
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut xa = vec![0.0; d];
    for r in &data.rows {
        let p = sigmoid(linear(beta, &r.features));
        let wgt = p * (1.0 - p);
        xa[0] = 1.0;
        xa[1..].copy_from_slice(&r.features);
        for i in 0..d {
            let wi = wgt * xa[i];
            for j in i..d {
                h[(i, j)] += wi * xa[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
        if i > 0 {
            h[(i, i)] += lambda;
        }
    }
    h
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// L2-regularized logistic regression by damped Newton iterations with
/// a backtracking line search. The intercept is not penalized.
pub fn train_logistic(train: &Dataset, params: &LogisticParams) -> Result<LogisticModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let d = train.n_features() + 1;
    let lambda = params.lambda;
    let mut beta = vec![0.0; d];
    let mut loss = logistic_loss(train, &beta, lambda);
    let mut grad = logistic_gradient(train, &beta, lambda);
    let mut iterations = 0;

    while norm(&grad) > params.tolerance && iterations < params.max_iters {
        iterations += 1;
        let h = hessian(train, &beta, lambda);
        let g = DVector::from_column_slice(&grad);
        let step = newton_step(h, &g).unwrap_or_else(|| -g.clone());
        let slope = g.dot(&step);
        let step = if slope < 0.0 { step } else { -g.clone() };
        let slope = g.dot(&step);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let cl = logistic_loss(train, &cand, lambda);
            if cl <= loss + 1e-4 * t * slope {
                beta = cand;
                loss = cl;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        grad = logistic_gradient(train, &beta, lambda);
        if !accepted {
            break;
        }
    }
    let gradient_norm = norm(&grad);
    Ok(LogisticModel {
        converged: gradient_norm <= params.tolerance && beta.iter().all(|b| b.is_finite()),
        coefficients: beta,
        lambda,
        iterations,
        gradient_norm,
    })
}

fn newton_step(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    for ridge in [0.0, 1e-12, 1e-9, 1e-6] {
        let mut m = h.clone();
        for i in 0..n {
            m[(i, i)] += ridge * scale;
        }
        if let Some(ch) = m.cholesky() {
            let s = ch.solve(&(-g));
            if s.iter().all(|v| v.is_finite()) {
                return Some(s);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ds(x: Vec<Vec<f64>>, y: Vec<u8>) -> Dataset {
        let n = x[0].len();
        Dataset::from_xy((0..n).map(|i| format!("f{i}")).collect(), x, y).unwrap()
    }

    fn noisy(seed: u64, n: usize, d: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
        let y = x
            .iter()
            .map(|v| {
                let z = 4.0 * (v[0] - 0.5) - 2.0 * (v[d - 1] - 0.5);
                u8::from(rng.random::<f64>() < sigmoid(z))
            })
            .collect();
        ds(x, y)
    }

    #[test]
    fn symmetric_data_gives_half_at_midpoint() {
        let x = vec![vec![0.0], vec![0.2], vec![0.4], vec![0.6], vec![0.8], vec![1.0]];
        let y = vec![0, 0, 1, 0, 1, 1];
        let m = train_logistic(&ds(x, y), &LogisticParams::default()).unwrap();
        assert!(m.converged);
        assert!((m.predict_proba(&[0.5]) - 0.5).abs() < 1e-6);
        assert!((m.coefficients[0] + 0.5 * m.coefficients[1]).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let data = noisy(seed, 120, 4);
            let m = train_logistic(&data, &LogisticParams::default()).unwrap();
            assert!(m.converged, "gradient norm {}", m.gradient_norm);
            let analytic = logistic_gradient(&data, &m.coefficients, 1.0);
            let h = 1e-5;
            for j in 0..m.coefficients.len() {
                let mut up = m.coefficients.clone();
                let mut dn = m.coefficients.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (logistic_loss(&data, &up, 1.0) - logistic_loss(&data, &dn, 1.0)) / (2.0 * h);
                assert!((fd - analytic[j]).abs() <= 1e-5, "coef {j}: fd {fd} analytic {}", analytic[j]);
            }
        }
    }

    #[test]
    fn heavy_regularization_shrinks_to_prior() {
        let data = noisy(3, 200, 3);
        let params = LogisticParams { lambda: 1e12, ..Default::default() };
        let m = train_logistic(&data, &params).unwrap();
        assert!(m.coefficients[1..].iter().all(|b| b.abs() < 1e-8));
        let prior = data.positive_rate();
        assert!((sigmoid(m.coefficients[0]) - prior).abs() < 1e-6);
        let majority = u8::from(prior >= 0.5);
        for r in &data.rows {
            assert_eq!(u8::from(m.predict_proba(&r.features) >= 0.5), majority);
        }
    }

    #[test]
    fn separable_without_penalty_reports_non_convergence() {
        let data = ds(vec![vec![0.0], vec![0.1], vec![0.9], vec![1.0]], vec![0, 0, 1, 1]);
        let params = LogisticParams { lambda: 0.0, max_iters: 15, ..Default::default() };
        let m = train_logistic(&data, &params).unwrap();
        assert!(!m.converged);
        assert!(m.predict_proba(&[1.0]) > 0.99);
    }

    #[test]
    fn probability_is_monotone_in_score() {
        let m = LogisticModel {
            coefficients: vec![0.3, -2.0],
            lambda: 1.0,
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
        };
        let mut last = f64::INFINITY;
        for k in 0..=100 {
            let p = m.predict_proba(&[k as f64 / 100.0]);
            assert!(p <= last);
            last = p;
        }
    }
}
