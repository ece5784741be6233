//! Replica ensembles of epoch-boundary paths.

use serde::{Deserialize, Serialize};

use crate::metrics::EmpiricalMeasure;

/// Which process produced an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Svrgld,
    Sdde,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Svrgld => "svrgld",
            Component::Sdde => "sdde",
        }
    }
}

/// States at epoch boundaries for one replica, flat `(S+1) × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPath {
    dim: usize,
    states: Vec<f64>,
    /// Flat `S × m × d` inner iterates, when recorded.
    inner: Option<Vec<f64>>,
}

impl EpochPath {
    pub(crate) fn new(dim: usize, x0: &[f64], epochs: usize, record_inner: Option<usize>) -> Self {
        let mut states = Vec::with_capacity((epochs + 1) * dim);
        states.extend_from_slice(x0);
        let inner = record_inner.map(|m| Vec::with_capacity(epochs * m * dim));
        Self { dim, states, inner }
    }

    pub(crate) fn push_state(&mut self, x: &[f64]) {
        self.states.extend_from_slice(x);
    }

    pub(crate) fn push_inner(&mut self, x: &[f64]) {
        if let Some(inner) = self.inner.as_mut() {
            inner.extend_from_slice(x);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of recorded epochs `S` (there are `S + 1` states).
    pub fn epochs(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    /// `ω̃_s` (or `X̃_s`).
    pub fn state(&self, s: usize) -> &[f64] {
        &self.states[s * self.dim..(s + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn inner(&self) -> Option<&[f64]> {
        self.inner.as_deref()
    }

    /// Inner iterate `k ∈ 1..=m` of epoch `s`.
    pub fn inner_state(&self, m: usize, s: usize, k: usize) -> Option<&[f64]> {
        let inner = self.inner.as_ref()?;
        let start = ((s * m) + (k - 1)) * self.dim;
        inner.get(start..start + self.dim)
    }
}

/// An ensemble of replica paths plus what is needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub component: Component,
    pub dim: usize,
    pub eta: f64,
    pub delta: f64,
    pub m: usize,
    /// EM substeps per algorithm step (1 for SVRG-LD).
    pub substeps: usize,
    /// Root seed of the Gaussian streams actually used.
    pub noise_seed: u64,
    /// Whether the Gaussian streams are shared with the partner process.
    pub coupled: bool,
    pub paths: Vec<EpochPath>,
}

impl Ensemble {
    pub fn replicas(&self) -> usize {
        self.paths.len()
    }

    pub fn epochs(&self) -> usize {
        self.paths.first().map_or(0, EpochPath::epochs)
    }

    /// All replicas' states at epoch `s`, flat `R × d`.
    pub fn epoch_states(&self, s: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.paths.len() * self.dim);
        for p in &self.paths {
            out.extend_from_slice(p.state(s));
        }
        out
    }

    pub fn measure(&self, s: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::new(self.epoch_states(s), self.dim)
            .expect("ensemble states are finite and non-empty")
    }
}
