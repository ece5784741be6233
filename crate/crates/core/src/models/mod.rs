//! Finite-sum objectives `P(ω) = (1/n) Σ ψ_i(ω)` and their gradient-noise
//! covariance.

mod io;
mod logistic;
mod quadratic;

pub use io::{read_model, write_model, ModelFormat};
pub use logistic::LogisticModel;
pub use quadratic::QuadraticModel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{directional_derivative, eig_sym, norm, psd_sqrt, KahanSum, SymMatrix};

/// A finite-sum objective.
///
/// Only `dim`, `n_components` and `component_gradient_into` are required; the
/// rest defaults to exact enumeration over the components in ascending order.
pub trait ObjectiveModel: Sync + Send {
    fn dim(&self) -> usize;

    fn n_components(&self) -> usize;

    /// `∇ψ_i(x)` written into `out`.
    fn component_gradient_into(&self, i: usize, x: &[f64], out: &mut [f64]);

    fn component_gradient(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.component_gradient_into(i, x, &mut out);
        out
    }

    /// `∇P(x) = (1/n) Σ ∇ψ_i(x)`.
    fn full_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        enumerate_full_gradient(self, x, out);
    }

    fn full_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.full_gradient_into(x, &mut out);
        out
    }

    /// Covariance of `∇ψ_I(x) − ∇ψ_I(y)` under uniform `I`.
    fn sigma(&self, x: &[f64], y: &[f64]) -> SymMatrix {
        enumerate_sigma(self, x, y)
    }

    /// `∇²P(x)`; finite differences of `∇P` unless overridden.
    fn hessian(&self, x: &[f64]) -> SymMatrix {
        fd_hessian(self, x)
    }

    /// `E_I |∇ψ_I(x) − ∇ψ_I(y)|⁴`.
    fn gradient_diff_fourth_moment(&self, x: &[f64], y: &[f64]) -> f64 {
        enumerate_fourth_moment(self, x, y)
    }

    /// `P(x)` when available in closed form.
    fn objective(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// Ascending-index compensated average of the component gradients.
pub fn enumerate_full_gradient<M: ObjectiveModel + ?Sized>(model: &M, x: &[f64], out: &mut [f64]) {
    let d = model.dim();
    let n = model.n_components();
    let mut acc = vec![KahanSum::default(); d];
    let mut g = vec![0.0; d];
    for i in 0..n {
        model.component_gradient_into(i, x, &mut g);
        for (a, v) in acc.iter_mut().zip(&g) {
            a.add(*v);
        }
    }
    for (o, a) in out.iter_mut().zip(&acc) {
        *o = a.total() / n as f64;
    }
}

/// `Σ(x, y) = (1/n) Σ g_i g_iᵀ − ḡ ḡᵀ` with `g_i = ∇ψ_i(x) − ∇ψ_i(y)`.
///
/// Evaluated in the centred two-pass form `(1/n) Σ (g_i − ḡ)(g_i − ḡ)ᵀ`, which is
/// the same quantity but stays positive semidefinite under round-off.
pub fn enumerate_sigma<M: ObjectiveModel + ?Sized>(model: &M, x: &[f64], y: &[f64]) -> SymMatrix {
    let d = model.dim();
    let n = model.n_components();
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let diff = |i: usize, gx: &mut [f64], gy: &mut [f64]| {
        model.component_gradient_into(i, x, gx);
        model.component_gradient_into(i, y, gy);
        for (a, b) in gx.iter_mut().zip(gy.iter()) {
            *a -= b;
        }
    };
    let mut mean_acc = vec![KahanSum::default(); d];
    for i in 0..n {
        diff(i, &mut gx, &mut gy);
        for (a, v) in mean_acc.iter_mut().zip(&gx) {
            a.add(*v);
        }
    }
    let mean: Vec<f64> = mean_acc.iter().map(|a| a.total() / n as f64).collect();
    let mut cov = vec![KahanSum::default(); d * (d + 1) / 2];
    for i in 0..n {
        diff(i, &mut gx, &mut gy);
        for (a, m) in gx.iter_mut().zip(&mean) {
            *a -= m;
        }
        let mut k = 0;
        for r in 0..d {
            for c in r..d {
                cov[k].add(gx[r] * gx[c]);
                k += 1;
            }
        }
    }
    let mut out = vec![0.0; d * d];
    let mut k = 0;
    for r in 0..d {
        for c in r..d {
            let v = cov[k].total() / n as f64;
            out[r * d + c] = v;
            out[c * d + r] = v;
            k += 1;
        }
    }
    SymMatrix::from_row_major(d, out)
}

/// `(1/n) Σ |∇ψ_i(x) − ∇ψ_i(y)|⁴` by enumeration.
pub fn enumerate_fourth_moment<M: ObjectiveModel + ?Sized>(model: &M, x: &[f64], y: &[f64]) -> f64 {
    let d = model.dim();
    let n = model.n_components();
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let mut acc = KahanSum::default();
    for i in 0..n {
        model.component_gradient_into(i, x, &mut gx);
        model.component_gradient_into(i, y, &mut gy);
        let sq: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b) * (a - b)).sum();
        acc.add(sq * sq);
    }
    acc.total() / n as f64
}

/// Hessian of `P` by central differences of `∇P` along the coordinate axes,
/// symmetrised.
pub fn fd_hessian<M: ObjectiveModel + ?Sized>(model: &M, x: &[f64]) -> SymMatrix {
    let d = model.dim();
    let mut cols = vec![0.0; d * d];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col = directional_derivative(|p| model.full_gradient(p), x, &[&e])
            .expect("unit coordinate direction");
        for i in 0..d {
            cols[i * d + j] = col[i];
        }
    }
    SymMatrix::from_fn(d, |i, j| 0.5 * (cols[i * d + j] + cols[j * d + i]))
}

/// One of the two shipped example models.
#[derive(Debug, Clone)]
pub enum Model {
    Quadratic(QuadraticModel),
    Logistic(LogisticModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Quadratic(_) => ModelKind::Quadratic,
            Model::Logistic(_) => ModelKind::Logistic,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Model::Quadratic(m) => m.seed(),
            Model::Logistic(m) => m.seed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Quadratic,
    Logistic,
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::Quadratic($m) => $e,
            Model::Logistic($m) => $e,
        }
    };
}

impl ObjectiveModel for Model {
    fn dim(&self) -> usize {
        delegate!(self, m => m.dim())
    }
    fn n_components(&self) -> usize {
        delegate!(self, m => m.n_components())
    }
    fn component_gradient_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.component_gradient_into(i, x, out))
    }
    fn full_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.full_gradient_into(x, out))
    }
    fn sigma(&self, x: &[f64], y: &[f64]) -> SymMatrix {
        delegate!(self, m => m.sigma(x, y))
    }
    fn hessian(&self, x: &[f64]) -> SymMatrix {
        delegate!(self, m => m.hessian(x))
    }
    fn gradient_diff_fourth_moment(&self, x: &[f64], y: &[f64]) -> f64 {
        delegate!(self, m => m.gradient_diff_fourth_moment(x, y))
    }
    fn objective(&self, x: &[f64]) -> Option<f64> {
        delegate!(self, m => m.objective(x))
    }
}

/// Step size, noise scale and the model they act on.
#[derive(Debug)]
pub struct DiffusionSpec<'a, M: ObjectiveModel + ?Sized> {
    pub model: &'a M,
    pub eta: f64,
    pub delta: f64,
}

impl<M: ObjectiveModel + ?Sized> Clone for DiffusionSpec<'_, M> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<M: ObjectiveModel + ?Sized> Copy for DiffusionSpec<'_, M> {}

impl<'a, M: ObjectiveModel + ?Sized> DiffusionSpec<'a, M> {
    /// Requires `η > 0`, `0 ≤ δ ≤ 1` and `η ≤ δ` whenever `δ > 0`.
    pub fn new(model: &'a M, eta: f64, delta: f64) -> Result<Self> {
        validate_eta_delta(eta, delta)?;
        Ok(Self { model, eta, delta })
    }

    /// `δ/η`.
    pub fn ridge(&self) -> f64 {
        self.delta / self.eta
    }

    /// `Q_{η,δ}(x, y) = (Σ(x, y) + (δ/η) I)^{1/2}`.
    pub fn q_factor(&self, x: &[f64], y: &[f64]) -> Result<SymMatrix> {
        psd_sqrt(&self.model.sigma(x, y), self.ridge())
    }
}

pub(crate) fn validate_eta_delta(eta: f64, delta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidConfig(format!("eta must be positive and finite, got {eta}")));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidConfig(format!("delta must lie in [0, 1], got {delta}")));
    }
    if delta > 0.0 && eta > delta {
        return Err(Error::InvalidConfig(format!("eta ({eta}) must not exceed delta ({delta})")));
    }
    Ok(())
}

const NEWTON_MAX_ITERS: usize = 200;
const NEWTON_TOL: f64 = 1e-10;

/// Stationary point of `P` by damped Newton from the origin.
///
/// For the quadratic model the origin is already stationary; for the logistic
/// model the objective is strongly convex and Newton converges quadratically.
pub fn minimizer<M: ObjectiveModel + ?Sized>(model: &M) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut x = vec![0.0; d];
    let mut g = model.full_gradient(&x);
    let mut gnorm = norm(&g);
    for _ in 0..NEWTON_MAX_ITERS {
        if gnorm <= NEWTON_TOL {
            return Ok(x);
        }
        let h = model.hessian(&x);
        let spec = eig_sym(&h)?;
        let step: Vec<f64> = if spec.lambda_min() > 0.0 {
            spec.apply(|l| 1.0 / l).mul_vec(&g)
        } else {
            g.clone()
        };
        let merit = |p: &[f64], gp: &[f64]| model.objective(p).unwrap_or_else(|| norm(gp));
        let f0 = merit(&x, &g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let gt = model.full_gradient(&trial);
            let ft = merit(&trial, &gt);
            let gn = norm(&gt);
            if ft < f0 || gn < gnorm {
                x = trial;
                g = gt;
                gnorm = gn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if gnorm <= NEWTON_TOL {
        Ok(x)
    } else {
        Err(Error::NoConvergence { iterations: NEWTON_MAX_ITERS, residual: gnorm })
    }
}
