use anyhow::{Context, Result};
use serde::Serialize;
use svrg_sdde::export::{moment_rows, write_moments, write_paths, write_sweep, MomentRow, SweepRow};
use svrg_sdde::metrics::{coupled_distance, loglog_slope, mean_stderr, sliced_w1, w1_exact_1d, EmpiricalMeasure};
use svrg_sdde::models::write_model;
use svrg_sdde::sdde::run_sdde_em;
use svrg_sdde::svrgld::run_svrgld;
use svrg_sdde::verify::assumption_report;
use svrg_sdde::{Ensemble, Model, ObjectiveModel};

use crate::config::{ExperimentConfig, FileFormat, SweepSection, Which};
use crate::output::{generator, hex_sha256, RunDir};

#[derive(Debug, Serialize)]
struct ModelInfo {
    kind: &'static str,
    d: usize,
    n: usize,
    seed: u64,
}

impl ModelInfo {
    fn of(model: &Model) -> Self {
        let kind = match model {
            Model::Quadratic(_) => "quadratic",
            Model::Logistic(_) => "logistic",
        };
        Self { kind, d: model.dim(), n: model.n_components(), seed: model.seed() }
    }
}

fn start(cfg: &ExperimentConfig, command: &str) -> Result<RunDir> {
    let mut dir = RunDir::create(&cfg.output.dir, command)?;
    dir.write("config.toml", cfg.to_toml().as_bytes())?;
    Ok(dir)
}

fn csv_bytes(f: impl FnOnce(Vec<u8>) -> std::io::Result<Vec<u8>>) -> Result<Vec<u8>> {
    f(Vec::new()).context("formatting CSV")
}

pub fn gen_model(cfg: &ExperimentConfig) -> Result<RunDir> {
    let model = cfg.model.build(cfg.seed)?;
    let mut dir = start(cfg, "gen-model")?;
    let mut bytes = Vec::new();
    write_model(&model, &mut bytes, cfg.model.format.into()).context("serializing model")?;
    let name = match cfg.model.format {
        FileFormat::Binary => "model.bin",
        FileFormat::Text => "model.txt",
    };
    dir.write(name, &bytes)?;

    #[derive(Serialize)]
    struct Provenance {
        schema: &'static str,
        generator: String,
        file: &'static str,
        sha256: String,
        #[serde(flatten)]
        model: ModelInfo,
        #[serde(skip_serializing_if = "Option::is_none")]
        label_mean: Option<f64>,
    }
    let label_mean = match &model {
        Model::Logistic(l) => Some(l.label_mean()),
        Model::Quadratic(_) => None,
    };
    let prov = Provenance {
        schema: "svsd-provenance v1",
        generator: generator(),
        file: name,
        sha256: hex_sha256(&bytes),
        model: ModelInfo::of(&model),
        label_mean,
    };
    dir.write_json("provenance.json", &prov)?;
    Ok(dir)
}

struct Ensembles {
    svrgld: Option<Ensemble>,
    sdde: Option<Ensemble>,
}

impl Ensembles {
    fn list(&self) -> Vec<&Ensemble> {
        self.svrgld.iter().chain(self.sdde.iter()).collect()
    }
}

fn simulate(model: &Model, cfg: &ExperimentConfig, which: Which, coupled: bool) -> Result<Ensembles> {
    let x0 = cfg.run.initial_point(model.dim())?;
    let mut run = cfg.run.run_config(cfg.seed);
    run.coupled = coupled;
    let mut sdde = cfg.run.sdde_config(cfg.seed);
    sdde.run.coupled = coupled;
    Ok(Ensembles {
        svrgld: which.svrgld().then(|| run_svrgld(model, &run, &x0)).transpose()?,
        sdde: which.sdde().then(|| run_sdde_em(model, &sdde, &x0)).transpose()?,
    })
}

/// W1 between two clouds with a standard error: exact 1-D transport with
/// batch means over replica blocks, or the sliced estimator for `d > 1`.
fn w1_estimate(a: &EmpiricalMeasure, b: &EmpiricalMeasure, sweep: &SweepSection, seed: u64) -> Result<(f64, f64)> {
    if a.dim() > 1 {
        return Ok(sliced_w1(a, b, sweep.projections, seed)?);
    }
    let w = w1_exact_1d(a, b, seed)?;
    let blocks = sweep.blocks.min(a.len().min(b.len()));
    if blocks < 2 {
        return Ok((w, f64::NAN));
    }
    let block = |m: &EmpiricalMeasure, k: usize| {
        let size = m.len() / blocks;
        EmpiricalMeasure::from_scalars(m.samples()[k * size..(k + 1) * size].to_vec())
    };
    let per_block = (0..blocks)
        .map(|k| Ok(w1_exact_1d(&block(a, k)?, &block(b, k)?, seed)?))
        .collect::<Result<Vec<f64>>>()?;
    // the standard error of the block mean stands in for that of the full estimate
    let (_, se_block) = mean_stderr(&per_block);
    Ok((w, se_block))
}

fn default_sweep() -> SweepSection {
    SweepSection { eta_grid: vec![], delta_grid: vec![], pairing: Default::default(), s: None, projections: 128, blocks: 10 }
}

#[derive(Debug, Serialize)]
struct Comparison {
    s: usize,
    w1: f64,
    w1_stderr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    coupled_distance: Option<f64>,
}

pub fn run(cfg: &ExperimentConfig, which: Which) -> Result<RunDir> {
    let model = cfg.model.build(cfg.seed)?;
    let ens = simulate(&model, cfg, which, cfg.run.coupled)?;
    let mut dir = start(cfg, "run")?;
    let mut moments: Vec<MomentRow> = Vec::new();
    for e in ens.list() {
        moments.extend(moment_rows(e)?);
    }
    if cfg.output.csv() {
        dir.write("paths.csv", &csv_bytes(|w| write_paths(w, &ens.list()))?)?;
        dir.write("moments.csv", &csv_bytes(|w| write_moments(w, &moments))?)?;
    }
    if cfg.output.json() {
        let mut comparison = Vec::new();
        if let (Some(a), Some(b)) = (&ens.svrgld, &ens.sdde) {
            let sweep = cfg.sweep.clone().unwrap_or_else(default_sweep);
            for s in 0..=a.epochs() {
                let (w1, w1_stderr) = w1_estimate(&a.measure(s), &b.measure(s), &sweep, cfg.seed)?;
                let coupled = cfg.run.coupled.then(|| coupled_distance(a, b, s, 1)).transpose()?;
                comparison.push(Comparison { s, w1, w1_stderr, coupled_distance: coupled });
            }
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            schema: &'static str,
            config: &'a ExperimentConfig,
            model: ModelInfo,
            x0: Vec<f64>,
            moments: &'a [MomentRow],
            comparison: Vec<Comparison>,
        }
        let summary = Summary {
            schema: "svsd-run-summary v1",
            config: cfg,
            model: ModelInfo::of(&model),
            x0: cfg.run.initial_point(model.dim())?,
            moments: &moments,
            comparison,
        };
        dir.write_json("summary.json", &summary)?;
    }
    Ok(dir)
}

pub fn moments(cfg: &ExperimentConfig, which: Which) -> Result<RunDir> {
    let model = cfg.model.build(cfg.seed)?;
    let ens = simulate(&model, cfg, which, cfg.run.coupled)?;
    let mut dir = start(cfg, "moments")?;
    let mut rows = Vec::new();
    for e in ens.list() {
        rows.extend(moment_rows(e)?);
    }
    if cfg.output.csv() {
        dir.write("moments.csv", &csv_bytes(|w| write_moments(w, &rows))?)?;
    }
    if cfg.output.json() {
        dir.write_json("moments.json", &serde_json::json!({ "schema": "svsd-moments v1", "rows": rows }))?;
    }
    Ok(dir)
}

#[derive(Debug, Serialize)]
struct SlopeFit {
    s: usize,
    cells: usize,
    /// Least-squares slope of `ln w1` against `ln(ηδ)`.
    slope: f64,
}

#[derive(Debug, Serialize)]
struct QuarterRatio {
    s: usize,
    from: (f64, f64),
    to: (f64, f64),
    ratio: f64,
}

pub fn w1_sweep(cfg: &ExperimentConfig) -> Result<RunDir> {
    let sweep = cfg.sweep.clone().context("w1-sweep needs a [sweep] section")?;
    let cells = sweep.cells()?;
    let model = cfg.model.build(cfg.seed)?;
    let epochs: Vec<usize> = sweep.s.clone().unwrap_or_else(|| vec![cfg.run.epochs]);
    if let Some(&s) = epochs.iter().find(|&&s| s > cfg.run.epochs) {
        anyhow::bail!("sweep.s contains {s}, beyond run.epochs = {}", cfg.run.epochs);
    }
    let mut rows = Vec::new();
    for &(eta, delta) in &cells {
        let mut c = cfg.clone();
        c.run.eta = eta;
        c.run.delta = delta;
        let ens = simulate(&model, &c, Which::Both, false)
            .with_context(|| format!("sweep cell eta = {eta}, delta = {delta}"))?;
        let (a, b) = (ens.svrgld.as_ref().expect("both"), ens.sdde.as_ref().expect("both"));
        for &s in &epochs {
            let (w1, stderr) = w1_estimate(&a.measure(s), &b.measure(s), &sweep, cfg.seed)?;
            rows.push(SweepRow { eta, delta, s, w1, stderr });
        }
    }

    let mut fits = Vec::new();
    let mut ratios = Vec::new();
    for &s in &epochs {
        let at_s: Vec<&SweepRow> = rows.iter().filter(|r| r.s == s).collect();
        if at_s.len() >= 2 {
            let x: Vec<f64> = at_s.iter().map(|r| r.eta * r.delta).collect();
            let y: Vec<f64> = at_s.iter().map(|r| r.w1).collect();
            fits.push(SlopeFit { s, cells: at_s.len(), slope: loglog_slope(&x, &y) });
        }
        for a in &at_s {
            for b in &at_s {
                let q = (a.eta * a.delta) / (b.eta * b.delta);
                if (q - 4.0).abs() < 1e-9 {
                    ratios.push(QuarterRatio { s, from: (a.eta, a.delta), to: (b.eta, b.delta), ratio: b.w1 / a.w1 });
                }
            }
        }
    }

    let mut dir = start(cfg, "w1-sweep")?;
    if cfg.output.csv() {
        dir.write("sweep.csv", &csv_bytes(|w| write_sweep(w, &rows))?)?;
    }
    if cfg.output.json() {
        let summary = serde_json::json!({
            "schema": "svsd-w1-sweep-summary v1",
            "model": ModelInfo::of(&model),
            "rows": rows,
            "slopes": fits,
            "quarter_ratios": ratios,
        });
        dir.write_json("sweep.json", &summary)?;
    }
    Ok(dir)
}

/// Writes the report and returns whether every check passed.
pub fn verify(cfg: &ExperimentConfig) -> Result<(RunDir, bool)> {
    let model = cfg.model.build(cfg.seed)?;
    let report = assumption_report(&model, cfg.run.eta, cfg.run.delta, &cfg.verify.options(cfg.seed))?;
    let passed = report.passed() && (report.theorem_regime || !cfg.verify.require_theorem_regime);
    let mut dir = start(cfg, "verify")?;
    dir.write_json(
        "report.json",
        &serde_json::json!({
            "schema": "svsd-assumption-report v1",
            "model": ModelInfo::of(&model),
            "eta": cfg.run.eta,
            "delta": cfg.run.delta,
            "passed": passed,
            "report": report,
        }),
    )?;
    Ok((dir, passed))
}
