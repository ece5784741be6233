//! The SVRG-LD iteration.
//!
//! Inner step `k` of epoch `s`:
//! `ω_k = ω_{k−1} − η[ĝ(ω_{k−1}) − ĝ(ω̃_s) + ∇P(ω̃_s)] + √(ηδ) W_k`, where `ĝ` is
//! the batch average of component gradients and `ω̃_s` is the state at the
//! start of the epoch. The outer chain is `ω̃_s = ω_{sm}`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Component, Ensemble, EpochPath};
use crate::error::{Error, Result};
use crate::models::{validate_eta_delta, ObjectiveModel};
use crate::par::{map_indexed, Execution};
use crate::rng::{fill_normal, ReplicaStreams};

/// How the `B` component indices of a step are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `B` i.i.d. uniform draws from `[n]`.
    #[default]
    WithReplacement,
    /// A uniformly random subset of size `B`.
    WithoutReplacement,
}

/// Hyperparameters shared by the algorithm and the SDDE integrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub eta: f64,
    pub delta: f64,
    /// Epoch length.
    pub m: usize,
    #[serde(default = "one")]
    pub batch: usize,
    pub epochs: usize,
    pub replicas: usize,
    pub seed: u64,
    #[serde(default)]
    pub record_inner: bool,
    #[serde(default)]
    pub sampling: Sampling,
    /// Drive the SDDE with the algorithm's own Gaussian streams.
    #[serde(default)]
    pub coupled: bool,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn new(eta: f64, delta: f64, m: usize, epochs: usize, replicas: usize, seed: u64) -> Self {
        Self {
            eta,
            delta,
            m,
            batch: 1,
            epochs,
            replicas,
            seed,
            record_inner: false,
            sampling: Sampling::WithReplacement,
            coupled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_eta_delta(self.eta, self.delta)?;
        if self.m == 0 || self.batch == 0 || self.replicas == 0 {
            return Err(Error::InvalidConfig("m, batch and replicas must be at least 1".into()));
        }
        Ok(())
    }

    fn validate_for<M: ObjectiveModel + ?Sized>(&self, model: &M, x0: &[f64]) -> Result<()> {
        self.validate()?;
        if x0.len() != model.dim() {
            return Err(Error::invalid(format!(
                "initial point has dimension {}, model has {}",
                x0.len(),
                model.dim()
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial point must be finite"));
        }
        if self.sampling == Sampling::WithoutReplacement && self.batch > model.n_components() {
            return Err(Error::InvalidConfig(format!(
                "batch {} exceeds n = {} without replacement",
                self.batch,
                model.n_components()
            )));
        }
        Ok(())
    }
}

/// Scratch buffers reused across steps.
#[derive(Debug, Clone)]
pub struct StepWorkspace {
    gx: Vec<f64>,
    ga: Vec<f64>,
    acc: Vec<f64>,
    noise: Vec<f64>,
}

impl StepWorkspace {
    pub fn new(dim: usize) -> Self {
        Self { gx: vec![0.0; dim], ga: vec![0.0; dim], acc: vec![0.0; dim], noise: vec![0.0; dim] }
    }
}

/// Everything one inner step needs besides the random streams.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub eta: f64,
    pub delta: f64,
    pub batch: usize,
    pub sampling: Sampling,
}

impl From<&RunConfig> for StepParams {
    fn from(c: &RunConfig) -> Self {
        Self { eta: c.eta, delta: c.delta, batch: c.batch, sampling: c.sampling }
    }
}

/// One inner step, updating `state` in place.
///
/// `anchor_grad` must be `∇P(anchor)`. The Gaussian `W` is drawn even when
/// `δ = 0`, so Gaussian streams stay aligned across configurations.
pub fn svrgld_step_in_place<M: ObjectiveModel + ?Sized>(
    model: &M,
    params: StepParams,
    state: &mut [f64],
    anchor: &[f64],
    anchor_grad: &[f64],
    streams: &mut ReplicaStreams,
    ws: &mut StepWorkspace,
) {
    let n = model.n_components();
    ws.acc.iter_mut().for_each(|v| *v = 0.0);
    let add = |i: usize, ws: &mut StepWorkspace| {
        model.component_gradient_into(i, state, &mut ws.gx);
        model.component_gradient_into(i, anchor, &mut ws.ga);
        for ((a, gx), ga) in ws.acc.iter_mut().zip(&ws.gx).zip(&ws.ga) {
            *a += gx - ga;
        }
    };
    match params.sampling {
        Sampling::WithReplacement => {
            for _ in 0..params.batch {
                let i = streams.indices.random_range(0..n);
                add(i, ws);
            }
        }
        Sampling::WithoutReplacement => {
            for i in index::sample(&mut streams.indices, n, params.batch) {
                add(i, ws);
            }
        }
    }
    fill_normal(&mut streams.gaussians, &mut ws.noise);
    let inv_b = 1.0 / params.batch as f64;
    let scale = (params.eta * params.delta).sqrt();
    for j in 0..state.len() {
        let drift = ws.acc[j] * inv_b + anchor_grad[j];
        state[j] += -params.eta * drift + scale * ws.noise[j];
    }
}

/// One inner step returning the new state.
pub fn svrgld_step<M: ObjectiveModel + ?Sized>(
    model: &M,
    params: StepParams,
    state: &[f64],
    anchor: &[f64],
    anchor_grad: &[f64],
    streams: &mut ReplicaStreams,
) -> Vec<f64> {
    let mut out = state.to_vec();
    let mut ws = StepWorkspace::new(state.len());
    svrgld_step_in_place(model, params, &mut out, anchor, anchor_grad, streams, &mut ws);
    out
}

/// Observation passed to an instrumentation hook before every inner step.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub epoch: usize,
    /// Step index within the epoch, `1..=m`.
    pub step: usize,
    pub state: &'a [f64],
    pub anchor: &'a [f64],
    pub anchor_grad: &'a [f64],
}

/// Runs a single replica, calling `hook` before every inner step.
pub fn run_replica<M, H>(model: &M, config: &RunConfig, x0: &[f64], replica: usize, mut hook: H) -> EpochPath
where
    M: ObjectiveModel + ?Sized,
    H: FnMut(StepEvent<'_>),
{
    let d = model.dim();
    let params = StepParams::from(config);
    let mut streams = ReplicaStreams::new(config.seed, replica as u64);
    let mut ws = StepWorkspace::new(d);
    let mut path = EpochPath::new(d, x0, config.epochs, config.record_inner.then_some(config.m));
    let mut state = x0.to_vec();
    let mut anchor = x0.to_vec();
    let mut anchor_grad = vec![0.0; d];
    for s in 0..config.epochs {
        anchor.copy_from_slice(&state);
        model.full_gradient_into(&anchor, &mut anchor_grad);
        for k in 1..=config.m {
            hook(StepEvent { epoch: s, step: k, state: &state, anchor: &anchor, anchor_grad: &anchor_grad });
            svrgld_step_in_place(model, params, &mut state, &anchor, &anchor_grad, &mut streams, &mut ws);
            path.push_inner(&state);
        }
        path.push_state(&state);
    }
    path
}

/// Runs all replicas with the default execution policy.
pub fn run_svrgld<M: ObjectiveModel + ?Sized>(model: &M, config: &RunConfig, x0: &[f64]) -> Result<Ensemble> {
    run_svrgld_with(model, config, x0, Execution::default())
}

pub fn run_svrgld_with<M: ObjectiveModel + ?Sized>(
    model: &M,
    config: &RunConfig,
    x0: &[f64],
    exec: Execution,
) -> Result<Ensemble> {
    config.validate_for(model, x0)?;
    let paths = map_indexed(config.replicas, exec, |r| run_replica(model, config, x0, r, |_| {}));
    Ok(Ensemble {
        component: Component::Svrgld,
        dim: model.dim(),
        eta: config.eta,
        delta: config.delta,
        m: config.m,
        substeps: 1,
        noise_seed: config.seed,
        coupled: config.coupled,
        paths,
    })
}
