//! Experiment configuration: one TOML file, overridable key by key.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use svrg_sdde::models::{LogisticModel, ModelFormat, QuadraticModel};
use svrg_sdde::rng::derive_seed;
use svrg_sdde::svrgld::Sampling;
use svrg_sdde::verify::VerifyOptions;
use svrg_sdde::{Model, RunConfig, SddeConfig};

const MODEL_SALT: u64 = 0x6d_6f64_656c;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every stream in an experiment is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelType {
    #[default]
    Quadratic,
    Logistic,
    File,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    #[default]
    Binary,
    Text,
}

impl From<FileFormat> for ModelFormat {
    fn from(f: FileFormat) -> Self {
        match f {
            FileFormat::Binary => ModelFormat::Binary,
            FileFormat::Text => ModelFormat::Text,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(rename = "type")]
    pub kind: ModelType,
    pub d: usize,
    pub n: usize,
    /// Quadratic: diagonal of `H` (default all ones).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    pub lambda: f64,
    /// Logistic: the parameter generating the labels (default zero).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_param: Option<Vec<f64>>,
    /// Generator seed; derived from the root seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Model file for `type = "file"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Format written by `gen-model`.
    pub format: FileFormat,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelType::Quadratic,
            d: 1,
            n: 100,
            eigenvalues: None,
            lambda: 0.1,
            true_param: None,
            seed: None,
            path: None,
            format: FileFormat::Binary,
        }
    }
}

impl ModelSection {
    pub fn generator_seed(&self, root: u64) -> u64 {
        self.seed.unwrap_or_else(|| derive_seed(root, MODEL_SALT))
    }

    pub fn build(&self, root: u64) -> Result<Model> {
        let seed = self.generator_seed(root);
        let model = match self.kind {
            ModelType::Quadratic => {
                let eig = self.eigenvalues.clone().unwrap_or_else(|| vec![1.0; self.d]);
                Model::Quadratic(QuadraticModel::generate(self.d, self.n, &eig, seed)?)
            }
            ModelType::Logistic => {
                let p = self.true_param.clone().unwrap_or_else(|| vec![0.0; self.d]);
                Model::Logistic(LogisticModel::generate(self.d, self.n, &p, self.lambda, seed)?)
            }
            ModelType::File => {
                let path = self.path.as_deref().context("model.path is required for type = \"file\"")?;
                Model::load(path)?
            }
        };
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Svrgld,
    Sdde,
    #[default]
    Both,
}

impl Which {
    pub fn svrgld(self) -> bool {
        self != Which::Sdde
    }

    pub fn sdde(self) -> bool {
        self != Which::Svrgld
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub eta: f64,
    pub delta: f64,
    pub m: usize,
    pub batch: usize,
    pub epochs: usize,
    pub replicas: usize,
    pub substeps: usize,
    pub coupled: bool,
    pub record_inner: bool,
    pub sampling: Sampling,
    /// Initial point (default all ones).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub which: Which,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            eta: 0.01,
            delta: 0.1,
            m: 10,
            batch: 1,
            epochs: 20,
            replicas: 1000,
            substeps: 1,
            coupled: false,
            record_inner: false,
            sampling: Sampling::WithReplacement,
            x0: None,
            which: Which::Both,
        }
    }
}

impl RunSection {
    pub fn run_config(&self, seed: u64) -> RunConfig {
        let mut c = RunConfig::new(self.eta, self.delta, self.m, self.epochs, self.replicas, seed);
        c.batch = self.batch;
        c.record_inner = self.record_inner;
        c.sampling = self.sampling;
        c.coupled = self.coupled;
        c
    }

    pub fn sdde_config(&self, seed: u64) -> SddeConfig {
        SddeConfig::new(self.run_config(seed), self.substeps)
    }

    pub fn initial_point(&self, d: usize) -> Result<Vec<f64>> {
        match &self.x0 {
            Some(x) if x.len() != d => bail!("run.x0 has {} entries, the model has dimension {d}", x.len()),
            Some(x) => Ok(x.clone()),
            None => Ok(vec![1.0; d]),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Every `(η, δ)` combination with `η ≤ δ`.
    #[default]
    Product,
    /// `(eta_grid[i], delta_grid[i])`.
    Zip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub eta_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    #[serde(default)]
    pub pairing: Pairing,
    /// Epochs at which W1 is reported (default: the last).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<usize>>,
    /// Projections for the sliced estimator when `d > 1`.
    #[serde(default = "default_projections")]
    pub projections: usize,
    /// Replica blocks for the batch-means standard error when `d = 1`.
    #[serde(default = "default_blocks")]
    pub blocks: usize,
}

fn default_projections() -> usize {
    128
}

fn default_blocks() -> usize {
    10
}

impl SweepSection {
    /// The `(η, δ)` cells in sweep order.
    pub fn cells(&self) -> Result<Vec<(f64, f64)>> {
        if self.eta_grid.is_empty() || self.delta_grid.is_empty() {
            bail!("sweep.eta_grid and sweep.delta_grid must be non-empty");
        }
        let cells: Vec<(f64, f64)> = match self.pairing {
            Pairing::Zip => {
                if self.eta_grid.len() != self.delta_grid.len() {
                    bail!("zip pairing needs grids of equal length");
                }
                self.eta_grid.iter().copied().zip(self.delta_grid.iter().copied()).collect()
            }
            Pairing::Product => self
                .eta_grid
                .iter()
                .flat_map(|&e| self.delta_grid.iter().map(move |&d| (e, d)))
                .filter(|&(e, d)| e <= d)
                .collect(),
        };
        if cells.is_empty() {
            bail!("no sweep cell satisfies eta <= delta");
        }
        if let Some(&(e, d)) = cells.iter().find(|(e, d)| e > d) {
            bail!("sweep cell eta = {e} exceeds delta = {d}");
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub trials: usize,
    pub derivative_trials: usize,
    pub radius: f64,
    pub concentration_repetitions: usize,
    /// Also fail unless `run.eta` satisfies the theorem's step-size condition.
    pub require_theorem_regime: bool,
}

impl Default for VerifySection {
    fn default() -> Self {
        let o = VerifyOptions::default();
        Self {
            trials: o.trials,
            derivative_trials: o.derivative_trials,
            radius: o.radius,
            concentration_repetitions: o.concentration_repetitions,
            require_theorem_regime: false,
        }
    }
}

impl VerifySection {
    pub fn options(&self, seed: u64) -> VerifyOptions {
        VerifyOptions {
            trials: self.trials,
            derivative_trials: self.derivative_trials,
            radius: self.radius,
            concentration_repetitions: self.concentration_repetitions,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), formats: vec![Format::Csv, Format::Json] }
    }
}

impl OutputSection {
    pub fn csv(&self) -> bool {
        self.formats.contains(&Format::Csv)
    }

    pub fn json(&self) -> bool {
        self.formats.contains(&Format::Json)
    }
}

/// Sets `a.b.c = value` in a TOML table, creating intermediate tables.
/// The value is parsed as a TOML value, falling back to a bare string.
pub fn set_key(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').with_context(|| format!("--set expects key=value, got `{assignment}`"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key `{key}`");
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("`{p}` in `{key}` is not a table"),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads the config file (if any) and applies `overrides` in order.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        set_key(&mut table, o)?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.run.sdde_config(self.seed).validate()?;
        if self.output.formats.is_empty() {
            bail!("output.formats must name at least one of csv, json");
        }
        if let Some(s) = &self.sweep {
            s.cells()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
