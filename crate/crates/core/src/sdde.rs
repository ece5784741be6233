//! Euler–Maruyama integration of the SVRG-LD delay equation
//! `dX = −∇P(X) dt + √η Q_{η,δ}(X, X_anchor) dB`, with the anchor frozen at
//! the state of the last epoch boundary `s·mη`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Component, Ensemble, EpochPath};
use crate::error::{Error, Result};
use crate::linalg::{directional_derivative, dot, norm, SymMatrix};
use crate::models::{DiffusionSpec, ObjectiveModel};
use crate::par::{try_map_indexed, Execution};
use crate::rng::{derive_seed, fill_normal, stream, Purpose};
use crate::svrgld::RunConfig;

/// States beyond this norm are reported as divergence.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Salt mixed into the root seed when the SDDE runs independently of the
/// algorithm.
const INDEPENDENT_SALT: u64 = 0x5dde;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SddeConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    /// EM substeps per algorithm step, integrator step `h = η/κ`.
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

impl SddeConfig {
    pub fn new(run: RunConfig, substeps: usize) -> Self {
        Self { run, substeps }
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if self.substeps == 0 {
            return Err(Error::InvalidConfig("substeps must be at least 1".into()));
        }
        if self.run.coupled && self.substeps != 1 {
            return Err(Error::InvalidConfig(
                "coupled mode shares Gaussian increments and needs substeps = 1".into(),
            ));
        }
        Ok(())
    }

    /// Root seed of the Brownian increments: the algorithm's own seed when
    /// coupled, an unrelated one otherwise.
    pub fn noise_seed(&self) -> u64 {
        if self.run.coupled {
            self.run.seed
        } else {
            derive_seed(self.run.seed, INDEPENDENT_SALT)
        }
    }

    pub fn step(&self) -> f64 {
        self.run.eta / self.substeps as f64
    }
}

/// Seen by an instrumentation hook before every EM substep.
#[derive(Debug)]
pub struct SddeEvent<'a> {
    pub epoch: usize,
    /// Global substep index, starting at 0.
    pub substep: usize,
    pub state: &'a [f64],
    pub anchor: &'a [f64],
}

/// EM integrator for one replica.
struct Integrator<'a, M: ObjectiveModel + ?Sized> {
    spec: DiffusionSpec<'a, M>,
    m: usize,
    substeps: usize,
    h: f64,
    replica: usize,
    rng: ChaCha8Rng,
    state: Vec<f64>,
    anchor: Vec<f64>,
    grad: Vec<f64>,
    z: Vec<f64>,
    /// Algorithm steps completed.
    k: usize,
    sub: usize,
}

impl<'a, M: ObjectiveModel + ?Sized> Integrator<'a, M> {
    fn new(spec: DiffusionSpec<'a, M>, m: usize, substeps: usize, x0: &[f64], replica: usize, rng: ChaCha8Rng) -> Self {
        let d = x0.len();
        Self {
            spec,
            m,
            substeps,
            h: spec.eta / substeps as f64,
            replica,
            rng,
            state: x0.to_vec(),
            anchor: x0.to_vec(),
            grad: vec![0.0; d],
            z: vec![0.0; d],
            k: 0,
            sub: 0,
        }
    }

    /// Advances one algorithm step (`κ` substeps), resetting the anchor first
    /// when the step starts an epoch.
    fn advance<H: FnMut(SddeEvent<'_>)>(&mut self, hook: &mut H) -> Result<()> {
        if self.k.is_multiple_of(self.m) {
            self.anchor.copy_from_slice(&self.state);
        }
        let sqrt_h = self.h.sqrt();
        let scale = self.spec.eta.sqrt() * sqrt_h;
        for _ in 0..self.substeps {
            hook(SddeEvent { epoch: self.k / self.m, substep: self.sub, state: &self.state, anchor: &self.anchor });
            let q = self.spec.q_factor(&self.state, &self.anchor)?;
            self.spec.model.full_gradient_into(&self.state, &mut self.grad);
            fill_normal(&mut self.rng, &mut self.z);
            let qz = q.mul_vec(&self.z);
            for ((x, g), n) in self.state.iter_mut().zip(&self.grad).zip(&qz) {
                *x += -self.h * g + scale * n;
            }
            self.sub += 1;
            self.check()?;
        }
        self.k += 1;
        Ok(())
    }

    fn check(&self) -> Result<()> {
        let r = norm(&self.state);
        if !(r.is_finite() && r <= DIVERGENCE_NORM) {
            return Err(Error::Diverged { replica: self.replica, step: self.k, norm: r });
        }
        Ok(())
    }
}

fn validate_start<M: ObjectiveModel + ?Sized>(model: &M, config: &SddeConfig, x0: &[f64]) -> Result<()> {
    config.validate()?;
    if x0.len() != model.dim() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial point must be finite with the model's dimension"));
    }
    Ok(())
}

/// Integrates one replica over `S` epochs, calling `hook` before each substep.
pub fn run_sdde_replica<M, H>(
    model: &M,
    config: &SddeConfig,
    x0: &[f64],
    replica: usize,
    mut hook: H,
) -> Result<EpochPath>
where
    M: ObjectiveModel + ?Sized,
    H: FnMut(SddeEvent<'_>),
{
    let run = &config.run;
    let spec = DiffusionSpec::new(model, run.eta, run.delta)?;
    let rng = stream(config.noise_seed(), replica as u64, Purpose::Gaussians);
    let mut it = Integrator::new(spec, run.m, config.substeps, x0, replica, rng);
    let mut path = EpochPath::new(model.dim(), x0, run.epochs, run.record_inner.then_some(run.m));
    for _ in 0..run.epochs {
        for _ in 0..run.m {
            it.advance(&mut hook)?;
            path.push_inner(&it.state);
        }
        path.push_state(&it.state);
    }
    Ok(path)
}

pub fn run_sdde_em<M: ObjectiveModel + ?Sized>(model: &M, config: &SddeConfig, x0: &[f64]) -> Result<Ensemble> {
    run_sdde_em_with(model, config, x0, Execution::default())
}

pub fn run_sdde_em_with<M: ObjectiveModel + ?Sized>(
    model: &M,
    config: &SddeConfig,
    x0: &[f64],
    exec: Execution,
) -> Result<Ensemble> {
    validate_start(model, config, x0)?;
    let paths = try_map_indexed(config.run.replicas, exec, |r| run_sdde_replica(model, config, x0, r, |_| {}))?;
    Ok(Ensemble {
        component: Component::Sdde,
        dim: model.dim(),
        eta: config.run.eta,
        delta: config.run.delta,
        m: config.run.m,
        substeps: config.substeps,
        noise_seed: config.noise_seed(),
        coupled: config.run.coupled,
        paths,
    })
}

/// `∇_v X_t` sampled once per algorithm step.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianPath {
    dim: usize,
    /// Flat `(K+1) × d`; row 0 is the direction itself.
    values: Vec<f64>,
}

impl JacobianPath {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEnsemble {
    pub direction: Vec<f64>,
    /// `t_k = kη`.
    pub times: Vec<f64>,
    pub paths: Vec<JacobianPath>,
}

impl JacobianEnsemble {
    /// `(1/R) Σ_r |∇_v X_{t_k}|^p`.
    pub fn moment(&self, k: usize, p: i32) -> f64 {
        let r = self.paths.len() as f64;
        crate::linalg::compensated_sum(self.paths.iter().map(|j| dot(j.at(k), j.at(k)).sqrt().powi(p))) / r
    }
}

/// `D_v F(x)` scaled to a non-unit direction: `|u| · ∇_{u/|u|} F(x)`.
fn scaled_directional<F>(f: F, x: &[f64], u: &[f64], d: usize) -> Result<SymMatrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let r = norm(u);
    if r == 0.0 {
        return Ok(SymMatrix::zeros(d));
    }
    let unit: Vec<f64> = u.iter().map(|v| v / r).collect();
    let deriv = directional_derivative(f, x, &[&unit])?;
    Ok(SymMatrix::from_row_major(d, deriv.into_iter().map(|v| v * r).collect()))
}

/// Joint EM integration of `X` and its Jacobian `J = ∇_v X` along `v`:
///
/// `dJ = −∇²P(X) J dt + √η [D₁Q(X, A)[J] + D₂Q(X, A)[J_A]] dB`,
///
/// where `A` is the frozen anchor and `J_A` the Jacobian at the epoch start.
/// Both equations share the same Brownian increments. `steps` algorithm steps
/// are integrated; `J` is recorded after each of them.
pub fn run_jacobian_flow<M: ObjectiveModel + ?Sized>(
    model: &M,
    config: &SddeConfig,
    x0: &[f64],
    v: &[f64],
    steps: usize,
) -> Result<JacobianEnsemble> {
    validate_start(model, config, x0)?;
    if v.len() != model.dim() || (norm(v) - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("direction must be a unit vector of the model's dimension"));
    }
    let run = &config.run;
    let spec = DiffusionSpec::new(model, run.eta, run.delta)?;
    let d = model.dim();
    let h = config.step();
    let scale = (run.eta * h).sqrt();
    let paths = try_map_indexed(run.replicas, Execution::default(), |r| {
        let mut rng = stream(config.noise_seed(), r as u64, Purpose::Gaussians);
        let mut x = x0.to_vec();
        let mut anchor = x0.to_vec();
        let mut j = v.to_vec();
        let mut j_anchor = v.to_vec();
        let mut z = vec![0.0; d];
        let mut values = Vec::with_capacity((steps + 1) * d);
        values.extend_from_slice(v);
        for k in 0..steps {
            if k % run.m == 0 {
                anchor.copy_from_slice(&x);
                j_anchor.copy_from_slice(&j);
            }
            for _ in 0..config.substeps {
                let q = spec.q_factor(&x, &anchor)?;
                let q_of_x = |p: &[f64]| spec.q_factor(p, &anchor).map(SymMatrix::into_vec).unwrap_or_else(|_| vec![f64::NAN; d * d]);
                let q_of_a = |p: &[f64]| spec.q_factor(&x, p).map(SymMatrix::into_vec).unwrap_or_else(|_| vec![f64::NAN; d * d]);
                let dq = scaled_directional(q_of_x, &x, &j, d)?.add(&scaled_directional(q_of_a, &anchor, &j_anchor, d)?);
                let hess = model.hessian(&x);
                let grad = model.full_gradient(&x);
                fill_normal(&mut rng, &mut z);
                let qz = q.mul_vec(&z);
                let dqz = dq.mul_vec(&z);
                let hj = hess.mul_vec(&j);
                for i in 0..d {
                    x[i] += -h * grad[i] + scale * qz[i];
                    j[i] += -h * hj[i] + scale * dqz[i];
                }
            }
            let rx = norm(&x);
            let rj = norm(&j);
            if !(rx.is_finite() && rx <= DIVERGENCE_NORM && rj.is_finite() && rj <= DIVERGENCE_NORM) {
                return Err(Error::Diverged { replica: r, step: k + 1, norm: rx.max(rj) });
            }
            values.extend_from_slice(&j);
        }
        Ok(JacobianPath { dim: d, values })
    })?;
    Ok(JacobianEnsemble {
        direction: v.to_vec(),
        times: (0..=steps).map(|k| k as f64 * run.eta).collect(),
        paths,
    })
}

/// Lipschitz-1 test functions for the semigroup gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `clamp(⟨u, x⟩, −c, c)` with `|u| ≤ 1`; unclamped when `clip` is `None`.
    Linear { u: Vec<f64>, clip: Option<f64> },
    /// `|x − c|`.
    Distance { center: Vec<f64> },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Linear { u, clip } => {
                let v = dot(u, x);
                match clip {
                    Some(c) => v.clamp(-c, *c),
                    None => v,
                }
            }
            TestFunction::Distance { center } => {
                x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            TestFunction::Linear { u, clip } => {
                if u.len() != d || norm(u) > 1.0 + 1e-12 {
                    return Err(Error::invalid("linear test function needs |u| <= 1 and matching dimension"));
                }
                if clip.is_some_and(|c| !(c > 0.0)) {
                    return Err(Error::invalid("clip level must be positive"));
                }
            }
            TestFunction::Distance { center } => {
                if center.len() != d {
                    return Err(Error::invalid("distance test function has the wrong dimension"));
                }
            }
        }
        Ok(())
    }
}

/// Estimate of `∇_v E h(X_t^x)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub epsilon: f64,
}

/// Central difference `[Ê h(X_t^{x+εv}) − Ê h(X_t^{x−εv})] / 2ε` with
/// `ε = 10⁻³(1 + |x|)`, the two ensembles sharing every Brownian increment.
/// `t` must be a multiple of `η`.
pub fn semigroup_gradient<M: ObjectiveModel + ?Sized>(
    model: &M,
    config: &SddeConfig,
    x0: &[f64],
    v: &[f64],
    test: &TestFunction,
    t: f64,
) -> Result<GradientEstimate> {
    validate_start(model, config, x0)?;
    test.validate(model.dim())?;
    if v.len() != model.dim() || (norm(v) - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("direction must be a unit vector of the model's dimension"));
    }
    let run = &config.run;
    let steps_f = t / run.eta;
    let steps = steps_f.round();
    if !(t >= 0.0) || (steps_f - steps).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::invalid(format!("t = {t} is not a multiple of eta = {}", run.eta)));
    }
    let steps = steps as usize;
    let eps = 1e-3 * (1.0 + norm(x0));
    let plus: Vec<f64> = x0.iter().zip(v).map(|(a, b)| a + eps * b).collect();
    let minus: Vec<f64> = x0.iter().zip(v).map(|(a, b)| a - eps * b).collect();
    let spec = DiffusionSpec::new(model, run.eta, run.delta)?;
    let diffs = try_map_indexed(run.replicas, Execution::default(), |r| {
        let rng = stream(config.noise_seed(), r as u64, Purpose::Gaussians);
        let mut a = Integrator::new(spec, run.m, config.substeps, &plus, r, rng.clone());
        let mut b = Integrator::new(spec, run.m, config.substeps, &minus, r, rng);
        for _ in 0..steps {
            a.advance(&mut |_| {})?;
            b.advance(&mut |_| {})?;
        }
        Ok((test.eval(&a.state) - test.eval(&b.state)) / (2.0 * eps))
    })?;
    let n = diffs.len() as f64;
    let mean = crate::linalg::compensated_sum(diffs.iter().copied()) / n;
    let var = if diffs.len() > 1 {
        crate::linalg::compensated_sum(diffs.iter().map(|x| (x - mean) * (x - mean))) / (n - 1.0)
    } else {
        0.0
    };
    Ok(GradientEstimate { estimate: mean, stderr: (var / n).sqrt(), epsilon: eps })
}
