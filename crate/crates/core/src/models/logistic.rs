//! Ridge-penalised logistic regression,
//! `ψ_i(ω) = −[b_i a_iᵀω − ln(1 + e^{a_iᵀω})] + (λ/2)|ω|²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ObjectiveModel;
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, dot, KahanSum, SymMatrix};
use crate::rng::fill_normal;

#[derive(Debug, Clone)]
pub struct LogisticModel {
    dim: usize,
    n: usize,
    seed: u64,
    lambda: f64,
    true_param: Vec<f64>,
    /// Row-major `n × d`.
    features: Vec<f64>,
    /// `b_i ∈ {0, 1}` stored as floats.
    labels: Vec<f64>,
}

/// Logistic sigmoid, evaluated without overflow on either tail.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)`.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    /// Features `a_i ~ N(0, I_d)`, labels `b_i ~ Bernoulli(σ(a_iᵀω*))`.
    pub fn generate(dim: usize, n: usize, true_param: &[f64], lambda: f64, seed: u64) -> Result<Self> {
        if dim == 0 || n == 0 {
            return Err(Error::invalid("logistic model needs d >= 1 and n >= 1"));
        }
        if true_param.len() != dim {
            return Err(Error::invalid(format!(
                "true_param has length {}, expected {dim}",
                true_param.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        let mut frng = ChaCha8Rng::seed_from_u64(seed);
        frng.set_stream(0);
        let mut lrng = ChaCha8Rng::seed_from_u64(seed);
        lrng.set_stream(1);

        let mut features = vec![0.0; n * dim];
        fill_normal(&mut frng, &mut features);
        let labels = (0..n)
            .map(|i| {
                let p = sigmoid(dot(&features[i * dim..(i + 1) * dim], true_param));
                let u: f64 = lrng.random();
                if u < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_parts(dim, n, seed, lambda, true_param.to_vec(), features, labels)
    }

    pub fn from_parts(
        dim: usize,
        n: usize,
        seed: u64,
        lambda: f64,
        true_param: Vec<f64>,
        features: Vec<f64>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        if true_param.len() != dim || features.len() != n * dim || labels.len() != n {
            return Err(Error::invalid("logistic model arrays have inconsistent sizes"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        if features.iter().chain(&true_param).any(|v| !v.is_finite()) {
            return Err(Error::invalid("logistic model arrays must be finite"));
        }
        if labels.iter().any(|&b| b != 0.0 && b != 1.0) {
            return Err(Error::invalid("logistic labels must be 0 or 1"));
        }
        Ok(Self { dim, n, seed, lambda, true_param, features, labels })
    }

    /// Single-sample model with explicit data, mostly for tests.
    pub fn from_data(features: Vec<f64>, labels: Vec<f64>, dim: usize, lambda: f64) -> Result<Self> {
        let n = labels.len();
        Self::from_parts(dim, n, 0, lambda, vec![0.0; dim], features, labels)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn true_param(&self) -> &[f64] {
        &self.true_param
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label_mean(&self) -> f64 {
        compensated_sum(self.labels.iter().copied()) / self.n as f64
    }

    /// `(1/n) Σ |a_i|^p`.
    pub fn feature_moment(&self, p: f64) -> f64 {
        compensated_sum((0..self.n).map(|i| dot(self.feature(i), self.feature(i)).powf(p / 2.0)))
            / self.n as f64
    }

    pub fn max_feature_norm(&self) -> f64 {
        (0..self.n).map(|i| dot(self.feature(i), self.feature(i)).sqrt()).fold(0.0, f64::max)
    }
}

impl ObjectiveModel for LogisticModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_components(&self) -> usize {
        self.n
    }

    fn component_gradient_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let a = self.feature(i);
        let r = sigmoid(dot(a, x)) - self.labels[i];
        for ((o, ai), xi) in out.iter_mut().zip(a).zip(x) {
            *o = ai * r + self.lambda * xi;
        }
    }

    /// `(1/n) Σ σ'(a_iᵀx) a_i a_iᵀ + λ I`.
    fn hessian(&self, x: &[f64]) -> SymMatrix {
        let d = self.dim;
        let mut acc = vec![KahanSum::default(); d * d];
        for i in 0..self.n {
            let a = self.feature(i);
            let s = sigmoid(dot(a, x));
            let w = s * (1.0 - s);
            for r in 0..d {
                for c in r..d {
                    acc[r * d + c].add(w * a[r] * a[c]);
                }
            }
        }
        SymMatrix::from_fn(d, |r, c| {
            let v = acc[r * d + c].total() / self.n as f64;
            if r == c {
                v + self.lambda
            } else {
                v
            }
        })
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        let loss = compensated_sum((0..self.n).map(|i| {
            let z = dot(self.feature(i), x);
            softplus(z) - self.labels[i] * z
        })) / self.n as f64;
        Some(loss + 0.5 * self.lambda * dot(x, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fd_hessian;

    #[test]
    fn single_sample_gradient_at_origin() {
        let m = LogisticModel::from_data(vec![1.0, 0.0], vec![1.0], 2, 1.0).unwrap();
        assert_eq!(m.component_gradient(0, &[0.0, 0.0]), vec![-0.5, 0.0]);
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(LogisticModel::generate(2, 10, &[0.0, 0.0], 0.0, 1).is_err());
        assert!(LogisticModel::generate(2, 10, &[0.0, 0.0], -1.0, 1).is_err());
    }

    #[test]
    fn symmetric_link_gives_balanced_labels() {
        let n = 20_000;
        let m = LogisticModel::generate(3, n, &[0.0; 3], 0.1, 11).unwrap();
        assert!((m.label_mean() - 0.5).abs() <= 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn analytic_hessian_matches_differences() {
        let m = LogisticModel::generate(3, 200, &[1.0, 0.0, -1.0], 0.2, 4).unwrap();
        let x = [0.3, -0.2, 0.8];
        let h = m.hessian(&x);
        let f = fd_hessian(&m, &x);
        assert!(h.sub(&f).max_abs() < 1e-7);
    }

    #[test]
    fn sigmoid_tails() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert_eq!(softplus(800.0), 800.0);
    }
}
