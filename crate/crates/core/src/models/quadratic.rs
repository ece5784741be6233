//! Rotated random-curvature quadratic ("alternate model").
//!
//! `ψ_i(ω) = ½ (Q̃ᵀω)ᵀ [D + diag(a_i)] (Q̃ᵀω)` with `Q̃` Haar-orthogonal,
//! `D` a fixed positive diagonal and `a_i ~ N(0, I_d)`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ObjectiveModel;
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, dot, SymMatrix};
use crate::rng::fill_normal;

#[derive(Debug, Clone)]
pub struct QuadraticModel {
    dim: usize,
    n: usize,
    seed: u64,
    /// Row-major orthogonal `Q̃`.
    qmat: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Row-major `n × d`, row `i` is `a_i`.
    samples: Vec<f64>,
    derived: Derived,
}

/// Sufficient statistics of the samples, recomputed from the raw data.
#[derive(Debug, Clone)]
struct Derived {
    /// `Q̃ [D + diag(ā)] Q̃ᵀ`, the exact Hessian of `P`.
    hessian: SymMatrix,
    /// `(1/n) Σ (a_i − ā)(a_i − ā)ᵀ`.
    sample_cov: SymMatrix,
    /// `M_jk = (1/n) Σ_i (D_j + a_ij)² (D_k + a_ik)²`.
    fourth: SymMatrix,
}

impl QuadraticModel {
    /// Draws `Q̃` (QR of a Gaussian matrix, `R` diagonal made positive) and the
    /// `a_i` from independent streams of `seed`.
    pub fn generate(dim: usize, n: usize, eigenvalues: &[f64], seed: u64) -> Result<Self> {
        if dim == 0 || n == 0 {
            return Err(Error::invalid("quadratic model needs d >= 1 and n >= 1"));
        }
        if eigenvalues.len() != dim {
            return Err(Error::invalid(format!(
                "expected {dim} eigenvalues, got {}",
                eigenvalues.len()
            )));
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("quadratic model eigenvalues must be positive and finite"));
        }
        let mut qrng = ChaCha8Rng::seed_from_u64(seed);
        qrng.set_stream(0);
        let mut srng = ChaCha8Rng::seed_from_u64(seed);
        srng.set_stream(1);

        let qmat = haar_orthogonal(dim, &mut qrng);
        let mut samples = vec![0.0; n * dim];
        fill_normal(&mut srng, &mut samples);
        Self::from_parts(dim, n, seed, qmat, eigenvalues.to_vec(), samples)
    }

    /// Rebuilds a model from its raw arrays (e.g. after deserialization).
    pub fn from_parts(
        dim: usize,
        n: usize,
        seed: u64,
        qmat: Vec<f64>,
        eigenvalues: Vec<f64>,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if qmat.len() != dim * dim || eigenvalues.len() != dim || samples.len() != n * dim {
            return Err(Error::invalid("quadratic model arrays have inconsistent sizes"));
        }
        if qmat.iter().chain(&eigenvalues).chain(&samples).any(|v| !v.is_finite()) {
            return Err(Error::invalid("quadratic model arrays must be finite"));
        }
        let derived = Derived::compute(dim, n, &qmat, &eigenvalues, &samples);
        Ok(Self { dim, n, seed, qmat, eigenvalues, samples, derived })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn qmat(&self) -> &[f64] {
        &self.qmat
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    /// `H = Q̃ D Q̃ᵀ` (without the sample noise).
    pub fn base_hessian(&self) -> SymMatrix {
        SymMatrix::from_basis(&self.qmat, &self.eigenvalues)
    }

    pub fn sample_covariance(&self) -> &SymMatrix {
        &self.derived.sample_cov
    }

    /// `Q̃ᵀ v`.
    pub fn rotate_in(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d).map(|j| (0..d).map(|k| self.qmat[k * d + j] * v[k]).sum()).collect()
    }

    /// `Q̃ w`.
    pub fn rotate_out(&self, w: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d).map(|i| dot(&self.qmat[i * d..(i + 1) * d], w)).collect()
    }

    /// Large-`n` limit of `Σ(x, y)`: `Q̃ diag(Q̃ᵀ(x−y))² Q̃ᵀ`.
    pub fn sigma_closed_form(&self, x: &[f64], y: &[f64]) -> SymMatrix {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let w = self.rotate_in(&diff);
        let sq: Vec<f64> = w.iter().map(|v| v * v).collect();
        SymMatrix::from_basis(&self.qmat, &sq)
    }

    /// The same limit with the rotation applied the other way round,
    /// `Q̃ diag(Q̃(x−y))² Q̃ᵀ`. Kept to compare both orientations numerically.
    pub fn sigma_closed_form_transposed(&self, x: &[f64], y: &[f64]) -> SymMatrix {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let w = self.rotate_out(&diff);
        let sq: Vec<f64> = w.iter().map(|v| v * v).collect();
        SymMatrix::from_basis(&self.qmat, &sq)
    }

    /// Large-`n` limit of `Q_{η,δ}(x, y)`:
    /// `Q̃ [diag(Q̃ᵀ(x−y))² + (δ/η) I]^{1/2} Q̃ᵀ`.
    pub fn q_closed_form(&self, x: &[f64], y: &[f64], ridge: f64) -> SymMatrix {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let w = self.rotate_in(&diff);
        let s: Vec<f64> = w.iter().map(|v| (v * v + ridge).sqrt()).collect();
        SymMatrix::from_basis(&self.qmat, &s)
    }
}

impl Derived {
    fn compute(d: usize, n: usize, qmat: &[f64], eig: &[f64], samples: &[f64]) -> Self {
        let row = |i: usize| &samples[i * d..(i + 1) * d];
        let nf = n as f64;
        let mean: Vec<f64> =
            (0..d).map(|j| compensated_sum((0..n).map(|i| row(i)[j])) / nf).collect();
        let sample_cov = SymMatrix::from_fn(d, |j, k| {
            compensated_sum((0..n).map(|i| (row(i)[j] - mean[j]) * (row(i)[k] - mean[k]))) / nf
        });
        let fourth = SymMatrix::from_fn(d, |j, k| {
            compensated_sum((0..n).map(|i| {
                let cj = eig[j] + row(i)[j];
                let ck = eig[k] + row(i)[k];
                cj * cj * ck * ck
            })) / nf
        });
        let diag: Vec<f64> = eig.iter().zip(&mean).map(|(l, m)| l + m).collect();
        let hessian = SymMatrix::from_basis(qmat, &diag);
        Self { hessian, sample_cov, fourth }
    }
}

impl ObjectiveModel for QuadraticModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_components(&self) -> usize {
        self.n
    }

    fn component_gradient_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let a = self.sample(i);
        // w = [D + diag(a_i)] Q̃ᵀ x, then out = Q̃ w
        let mut w = [0.0_f64; 16];
        let mut heap;
        let w: &mut [f64] = if d <= 16 {
            &mut w[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for j in 0..d {
            let mut s = 0.0;
            for (k, xk) in x.iter().enumerate() {
                s += self.qmat[k * d + j] * xk;
            }
            w[j] = (self.eigenvalues[j] + a[j]) * s;
        }
        for (r, o) in out.iter_mut().enumerate().take(d) {
            *o = dot(&self.qmat[r * d..(r + 1) * d], w);
        }
    }

    /// `Ĥ x`, identical in exact arithmetic to the component average.
    fn full_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.derived.hessian.mul_vec_into(x, out);
    }

    /// `Q̃ diag(w) Ĉ diag(w) Q̃ᵀ` with `w = Q̃ᵀ(x−y)`: the centred components are
    /// `g_i − ḡ = Q̃ diag(w)(a_i − ā)`, so this equals the enumeration exactly.
    fn sigma(&self, x: &[f64], y: &[f64]) -> SymMatrix {
        let d = self.dim;
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let w = self.rotate_in(&diff);
        let c = &self.derived.sample_cov;
        let inner = SymMatrix::from_fn(d, |j, k| w[j] * c.get(j, k) * w[k]);
        let qt = crate::linalg::transpose(&self.qmat, d);
        inner.conjugate(&qt)
    }

    fn hessian(&self, _x: &[f64]) -> SymMatrix {
        self.derived.hessian.clone()
    }

    fn gradient_diff_fourth_moment(&self, x: &[f64], y: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let w = self.rotate_in(&diff);
        let w2: Vec<f64> = w.iter().map(|v| v * v).collect();
        let m = &self.derived.fourth;
        let d = self.dim;
        let mut acc = 0.0;
        for j in 0..d {
            for k in 0..d {
                acc += w2[j] * w2[k] * m.get(j, k);
            }
        }
        acc
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        Some(0.5 * dot(x, &self.derived.hessian.mul_vec(x)))
    }
}

/// Haar-distributed orthogonal matrix (row-major).
pub(crate) fn haar_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    fill_normal(rng, &mut g);
    let qr = DMatrix::from_row_slice(d, d, &g).qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = vec![0.0; d * d];
    for j in 0..d {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            out[i * d + j] = s * q[(i, j)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::enumerate_sigma;

    #[test]
    fn one_dimensional_unrolled() {
        let m = QuadraticModel::generate(1, 1, &[2.0], 9).unwrap();
        let a = m.sample(0)[0];
        let q = m.qmat()[0];
        assert!((q.abs() - 1.0).abs() < 1e-15);
        let mut g = [0.0];
        m.component_gradient_into(0, &[1.5], &mut g);
        assert!((g[0] - (2.0 + a) * 1.5).abs() < 1e-14);
    }

    #[test]
    fn rotation_is_orthogonal() {
        let m = QuadraticModel::generate(5, 3, &[1.0, 2.0, 3.0, 4.0, 5.0], 1).unwrap();
        let d = 5;
        let q = m.qmat();
        for a in 0..d {
            for b in 0..d {
                let s: f64 = (0..d).map(|k| q[k * d + a] * q[k * d + b]).sum();
                let t = if a == b { 1.0 } else { 0.0 };
                assert!((s - t).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let a = QuadraticModel::generate(3, 50, &[1.0, 1.0, 2.0], 77).unwrap();
        let b = QuadraticModel::generate(3, 50, &[1.0, 1.0, 2.0], 77).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert_eq!(a.qmat(), b.qmat());
    }

    #[test]
    fn rejects_nonpositive_eigenvalue() {
        assert!(QuadraticModel::generate(2, 5, &[1.0, 0.0], 1).is_err());
        assert!(QuadraticModel::generate(2, 5, &[1.0], 1).is_err());
    }

    #[test]
    fn sufficient_statistic_sigma_matches_enumeration() {
        let m = QuadraticModel::generate(3, 200, &[1.0, 2.0, 0.5], 4).unwrap();
        let x = [0.3, -1.0, 2.0];
        let y = [1.1, 0.4, -0.7];
        let fast = m.sigma(&x, &y);
        let slow = enumerate_sigma(&m, &x, &y);
        assert!(fast.sub(&slow).frobenius_norm() <= 1e-12 * (1.0 + slow.frobenius_norm()));
    }

    #[test]
    fn fourth_moment_matches_enumeration() {
        let m = QuadraticModel::generate(2, 300, &[1.0, 3.0], 8).unwrap();
        let x = [0.5, -0.25];
        let y = [-1.0, 0.75];
        let slow = crate::models::enumerate_fourth_moment(&m, &x, &y);
        let fast = m.gradient_diff_fourth_moment(&x, &y);
        assert!((fast - slow).abs() <= 1e-10 * slow);
    }
}
