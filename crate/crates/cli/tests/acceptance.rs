//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion names (e.g. `AC4`) as
//! arguments to run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;
use svrg_sdde::linalg::{eig_sym, norm, SymMatrix};
use svrg_sdde::metrics::{linear_fit, loglog_slope, moment, w1_exact_1d, EmpiricalMeasure};
use svrg_sdde::models::{enumerate_sigma, minimizer, LogisticModel, ObjectiveModel, QuadraticModel};
use svrg_sdde::rng::{fill_normal, in_ball, stream, Purpose, ReplicaStreams};
use svrg_sdde::sdde::{run_jacobian_flow, run_sdde_em, semigroup_gradient, TestFunction};
use svrg_sdde::svrgld::{run_svrgld, svrgld_step, StepParams};
use svrg_sdde::verify::{
    check_assumption4, estimate_assumption4, estimate_dissipativity, estimate_smoothness, minimizer_envelope,
    sigma_residual_ceiling, theorem_regime,
};
use svrg_sdde::{DiffusionSpec, Model, RunConfig, SddeConfig};

type Outcome = Result<String, String>;

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|err| err.to_string())
}

fn ac1_sigma_closed_form() -> Outcome {
    let (d, n) = (4, 200_000);
    let model = e(QuadraticModel::generate(d, n, &[1.0, 2.0, 3.0, 4.0], 101))?;
    let ceiling = sigma_residual_ceiling(d, n);
    let mut rng = stream(102, 0, Purpose::Auxiliary);
    let residuals: Vec<f64> = (0..20)
        .map(|_| {
            let x = in_ball(&mut rng, d, 2.0);
            let y: Vec<f64> = x.iter().zip(in_ball(&mut rng, d, 2.0)).map(|(a, b)| a + b).collect();
            enumerate_sigma(&model, &x, &y).sub(&model.sigma_closed_form(&x, &y)).frobenius_norm()
        })
        .collect();
    let within = residuals.iter().filter(|r| **r <= ceiling).count();
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    let msg = format!("{within}/20 pairs within {ceiling:.3e} (worst {worst:.3e})");
    ensure(within >= 19, || msg.clone())?;
    Ok(msg)
}

fn ac2_sqrt_reconstruction() -> Outcome {
    let mut pool: Vec<Model> = Vec::new();
    for (k, d) in [1usize, 2, 3, 4].into_iter().enumerate() {
        let eig: Vec<f64> = (1..=d).map(|i| i as f64).collect();
        for n in [50, 500] {
            pool.push(Model::Quadratic(e(QuadraticModel::generate(d, n, &eig, 200 + k as u64))?));
        }
    }
    for (k, d) in [1usize, 2, 3].into_iter().enumerate() {
        let truth: Vec<f64> = (0..d).map(|i| 1.0 - 0.5 * i as f64).collect();
        pool.push(Model::Logistic(e(LogisticModel::generate(d, 100, &truth, 0.1, 210 + k as u64))?));
    }
    let mut rng = stream(203, 0, Purpose::Auxiliary);
    let mut worst = 0.0f64;
    for draw in 0..1000 {
        let model = &pool[rng.random_range(0..pool.len())];
        let d = model.dim();
        let eta = 10f64.powf(rng.random_range(-4.0..-1.0));
        let delta = rng.random_range(eta..1.0);
        let x = in_ball(&mut rng, d, 3.0);
        let y = in_ball(&mut rng, d, 3.0);
        let spec = e(DiffusionSpec::new(model, eta, delta))?;
        let q = e(spec.q_factor(&x, &y))?;
        let sigma = model.sigma(&x, &y);
        let q2 = SymMatrix::from_row_major(d, q.matmul(&q));
        let residual = q2.sub(&sigma).add_identity(-spec.ridge()).frobenius_norm();
        let tol = 1e-10 * (1.0 + sigma.frobenius_norm() + delta * (d as f64).sqrt() / eta);
        ensure(residual <= tol, || format!("draw {draw}: residual {residual:.3e} > {tol:.3e}"))?;
        worst = worst.max(residual / tol);
    }
    Ok(format!("1000 draws, worst residual/tolerance {worst:.3e}"))
}

fn ac3_noise_identities() -> Outcome {
    let model = e(LogisticModel::generate(3, 100, &[1.0, -0.5, 0.25], 0.1, 301))?;
    let (eta, delta) = (0.01, 0.1);
    let params = StepParams { eta, delta, batch: 1, sampling: Default::default() };
    let x = [0.5, -0.3, 0.8];
    let anchor = [0.1, 0.2, -0.4];
    let anchor_grad = model.full_gradient(&anchor);
    let grad = model.full_gradient(&x);
    let draws = 1_000_000;
    let mut streams = ReplicaStreams::new(302, 0);
    let scale = eta.sqrt();
    let v: Vec<[f64; 3]> = (0..draws)
        .map(|_| {
            let y = svrgld_step(&model, params, &x, &anchor, &anchor_grad, &mut streams);
            [0, 1, 2].map(|j| (y[j] - (x[j] - eta * grad[j])) / scale)
        })
        .collect();
    let nf = draws as f64;
    let mean = [0, 1, 2].map(|j| v.iter().map(|r| r[j]).sum::<f64>() / nf);
    let mut worst_mean = 0.0f64;
    for j in 0..3 {
        let sd = (v.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        let z = mean[j].abs() / (sd / nf.sqrt());
        ensure(z <= 5.0, || format!("mean component {j} is {z:.2} stderr from 0"))?;
        worst_mean = worst_mean.max(z);
    }
    let target = model.sigma(&x, &anchor).scaled(eta).add_identity(delta);
    let mut worst_cov = 0.0f64;
    for j in 0..3 {
        for k in j..3 {
            let prods: Vec<f64> = v.iter().map(|r| (r[j] - mean[j]) * (r[k] - mean[k])).collect();
            let c = prods.iter().sum::<f64>() / nf;
            let sd = (prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
            let z = (c - target.get(j, k)).abs() / (sd / nf.sqrt());
            ensure(z <= 5.0, || format!("cov[{j},{k}] = {c:.6e} vs {:.6e} ({z:.2} stderr)", target.get(j, k)))?;
            worst_cov = worst_cov.max(z);
        }
    }
    Ok(format!("max |mean|/se {worst_mean:.2}, max |cov - target|/se {worst_cov:.2}"))
}

fn ac4_w1_scaling() -> Outcome {
    let model = e(QuadraticModel::generate(1, 100, &[4.0], 7))?;
    let grid = [0.04, 0.02, 0.01, 0.005];
    let s = 50;
    let mut w1 = Vec::new();
    for &eta in &grid {
        let run = RunConfig::new(eta, eta, 10, s, 20_000, 11);
        let a = e(run_svrgld(&model, &run, &[0.0]))?;
        let b = e(run_sdde_em(&model, &SddeConfig::new(run, 8), &[0.0]))?;
        w1.push(e(w1_exact_1d(&a.measure(s), &b.measure(s), 0))?);
    }
    let x: Vec<f64> = grid.iter().map(|v| v * v).collect();
    let slope = loglog_slope(&x, &w1);
    let ratios: Vec<f64> = w1.windows(2).map(|w| w[1] / w[0]).collect();
    let w1s: Vec<String> = w1.iter().map(|w| format!("{w:.3e}")).collect();
    let msg = format!("w1 [{}], slope {slope:.3}, ratios {ratios:.3?}", w1s.join(", "));
    ensure((0.3..=0.7).contains(&slope) && ratios.iter().all(|r| *r <= 0.8), || msg.clone())?;
    Ok(msg)
}

fn ac5_minimizer_convergence() -> Outcome {
    let model = e(QuadraticModel::generate(2, 1000, &[1.0, 2.0], 501))?;
    let smooth = e(estimate_smoothness(&model, 2000, 2.0, 502))?;
    let diss = e(estimate_dissipativity(&model, 2000, 2.0, 503))?;
    let (eta, delta, m, epochs) = (0.001, 0.01, 20, 30);
    let x0 = [2.0, -1.0];
    let star = e(minimizer(&model))?;
    let dist0: f64 = x0.iter().zip(&star).map(|(a, b)| (a - b) * (a - b)).sum();
    let run = RunConfig::new(eta, delta, m, epochs, 10_000, 504);
    let ens = e(run_sdde_em(&model, &SddeConfig::new(run, 4), &x0))?;
    let mut tightest = 0.0f64;
    for s in 0..=epochs {
        let xs = ens.epoch_states(s);
        let msd = xs.chunks(2).map(|p| (p[0] - star[0]).powi(2) + (p[1] - star[1]).powi(2)).sum::<f64>()
            / ens.replicas() as f64;
        let env = minimizer_envelope(diss.gamma_hat, smooth.l_hat, diss.k_hat, eta, delta, m, 2, s, dist0)
            .ok_or_else(|| format!("envelope undefined (gamma {}, L {})", diss.gamma_hat, smooth.l_hat))?;
        ensure(msd <= 1.2 * env, || format!("s = {s}: E|X - x*|^2 = {msd:.4e} > 1.2 * {env:.4e}"))?;
        tightest = tightest.max(msd / env);
    }
    Ok(format!("gamma {:.3}, L {:.3}, K {:.1e}; max ratio to envelope {tightest:.3}", diss.gamma_hat, smooth.l_hat, diss.k_hat))
}

fn ac6_jacobian_decay() -> Outcome {
    let model = e(QuadraticModel::generate(2, 200, &[1.0, 2.0], 601))?;
    let diss = e(estimate_dissipativity(&model, 2000, 2.0, 602))?;
    let (eta, steps) = (0.01, 500);
    let v = [0.6, 0.8];
    let run = RunConfig::new(eta, 0.05, 10, steps, 1000, 603);
    let jac = e(run_jacobian_flow(&model, &SddeConfig::new(run, 1), &[1.0, -1.0], &v, steps))?;
    let ks: Vec<usize> = (0..=steps).step_by(10).collect();
    let t: Vec<f64> = ks.iter().map(|&k| jac.times[k]).collect();
    let log_m8: Vec<f64> = ks.iter().map(|&k| jac.moment(k, 8).ln()).collect();
    let (slope, _) = linear_fit(&t, &log_m8);
    let rate = -slope;
    ensure(rate >= diss.gamma_hat / 2.0, || format!("decay rate {rate:.3} < gamma/2 = {:.3}", diss.gamma_hat / 2.0))?;

    // one component, no noise: the flow is the linear ODE J' = -H J
    let single = e(QuadraticModel::generate(2, 1, &[1.0, 2.0], 604))?;
    let h_mat = single.hessian(&[0.0, 0.0]);
    let spectrum = e(eig_sym(&h_mat))?;
    let h_norm = spectrum.lambda_max().abs().max(spectrum.lambda_min().abs());
    let mut run = RunConfig::new(eta, 0.0, 10, steps, 1, 605);
    run.coupled = true;
    let det = e(run_jacobian_flow(&single, &SddeConfig::new(run, 1), &[0.5, 0.5], &v, steps))?;
    let mut worst = 0.0f64;
    for k in (50..=steps).step_by(50) {
        let tk = det.times[k];
        let exact = spectrum.apply(|l| (-l * tk).exp()).mul_vec(&v);
        let got = det.paths[0].at(k);
        let err = norm(&[got[0] - exact[0], got[1] - exact[1]]);
        let tol = 2.0 * eta * tk * h_norm * (h_norm * tk).exp();
        ensure(err <= tol, || format!("t = {tk}: |J - exp(-Ht)v| = {err:.3e} > {tol:.3e}"))?;
        worst = worst.max(err / tol);
    }
    Ok(format!("decay rate {rate:.3} vs gamma/2 = {:.3}; deterministic error/tolerance {worst:.3e}", diss.gamma_hat / 2.0))
}

fn ac7_semigroup_gradient() -> Outcome {
    let model = e(QuadraticModel::generate(1, 100, &[1.0], 701))?;
    let diss = e(estimate_dissipativity(&model, 2000, 2.0, 702))?;
    let test = TestFunction::Linear { u: vec![1.0], clip: None };
    let mut parts = Vec::new();
    for t in [1.0, 2.0, 4.0] {
        let eta = 0.02;
        let run = RunConfig::new(eta, 0.05, 10, 1, 100_000, 703);
        let g = e(semigroup_gradient(&model, &SddeConfig::new(run, 1), &[1.0], &[1.0], &test, t))?;
        let bound = (-diss.gamma_hat * t / 8.0).exp();
        ensure(g.estimate <= bound + 3.0 * g.stderr, || {
            format!("t = {t}: {:.4} > {bound:.4} + 3 * {:.1e}", g.estimate, g.stderr)
        })?;
        parts.push(format!("t={t}: {:.4} <= {bound:.4}", g.estimate));
    }
    Ok(parts.join(", "))
}

fn ac8_fourth_moment() -> Outcome {
    let model = e(QuadraticModel::generate(1, 200, &[1.0], 801))?;
    let delta = 0.01;
    let smooth = e(estimate_smoothness(&model, 2000, 2.0, 802))?;
    let diss = e(estimate_dissipativity(&model, 2000, 2.0, 803))?;
    let spec = e(DiffusionSpec::new(&model, delta, delta))?;
    let a3 = e(estimate_assumption4(spec, 64, 2.0, 804))?.a[2];
    let eta = 0.9 * theorem_regime(delta, delta, smooth.l_hat, diss.gamma_hat, a3).eta_max;
    let regime = theorem_regime(eta, delta, smooth.l_hat, diss.gamma_hat, a3);
    ensure(regime.satisfied, || format!("eta {eta:.3e} is outside the theorem regime"))?;
    let epochs = 50;
    let run = RunConfig::new(eta, delta, 500, epochs, 2000, 805);
    let ens = e(run_svrgld(&model, &run, &[3.0]))?;
    let m4: Vec<f64> = (0..=epochs).map(|s| moment(&ens.measure(s), 4)).collect::<Result<_, _>>().map_err(|x| x.to_string())?;
    let (rho, c) = linear_fit(&m4[..epochs], &m4[1..]);
    let envelope = m4[0] + c.max(0.0) / (1.0 - rho);
    let sup = m4.iter().copied().fold(0.0, f64::max);
    let msg = format!("eta {eta:.3e}, rho {rho:.4}, C {c:.3e}, sup {sup:.3e} <= envelope {envelope:.3e}");
    ensure(rho < 1.0 && sup <= envelope && envelope.is_finite(), || msg.clone())?;
    Ok(msg)
}

/// Exhaustive minimum over matchings of the mean transport cost.
fn assignment_oracle(a: &[f64], b: &[f64]) -> f64 {
    fn go(a: &[f64], b: &mut Vec<f64>, k: usize, acc: f64, best: &mut f64) {
        if k == a.len() {
            *best = best.min(acc);
            return;
        }
        for i in k..b.len() {
            b.swap(k, i);
            go(a, b, k + 1, acc + (a[k] - b[k]).abs(), best);
            b.swap(k, i);
        }
    }
    let mut best = f64::INFINITY;
    go(a, &mut b.to_vec(), 0, 0.0, &mut best);
    best / a.len() as f64
}

fn ac9_w1_calibration() -> Outcome {
    let n = 100_000;
    let mut rng = stream(901, 0, Purpose::Auxiliary);
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    fill_normal(&mut rng, &mut a);
    fill_normal(&mut rng, &mut b);
    b.iter_mut().for_each(|v| *v += 0.5);
    let w = e(w1_exact_1d(&e(EmpiricalMeasure::from_scalars(a))?, &e(EmpiricalMeasure::from_scalars(b))?, 0))?;
    ensure((w - 0.5).abs() <= 0.02, || format!("W1 = {w:.4}"))?;
    for trial in 0..200 {
        let size = 1 + trial % 8;
        // multiples of 1/8 keep every partial sum exact
        let mut draw = |_| rng.random_range(-40i32..40) as f64 / 8.0;
        let a: Vec<f64> = (0..size).map(&mut draw).collect();
        let b: Vec<f64> = (0..size).map(&mut draw).collect();
        let exact = e(w1_exact_1d(&e(EmpiricalMeasure::from_scalars(a.clone()))?, &e(EmpiricalMeasure::from_scalars(b.clone()))?, 0))?;
        let oracle = assignment_oracle(&a, &b);
        ensure(exact == oracle, || format!("N = {size}: {exact} vs oracle {oracle}"))?;
    }
    Ok(format!("W1 = {w:.4}; 200 small clouds match the assignment oracle"))
}

fn ac10_derivative_ceilings() -> Outcome {
    let (eta, delta) = (0.01, 0.1);
    let q = Model::Quadratic(e(QuadraticModel::generate(3, 5000, &[1.0, 2.0, 3.0], 1001))?);
    let rq = e(check_assumption4(e(DiffusionSpec::new(&q, eta, delta))?, 32, 2.0, 1002))?;
    let l = Model::Logistic(e(LogisticModel::generate(3, 200, &[1.0, -1.0, 0.5], 0.1, 1003))?);
    let rl = e(check_assumption4(e(DiffusionSpec::new(&l, eta, delta))?, 32, 2.0, 1004))?;
    let mut parts = Vec::new();
    for (name, report, keys) in [("quadratic", &rq, &["A1", "A2", "dQ_x"][..]), ("logistic", &rl, &["dQ_x", "A2"][..])] {
        for key in keys {
            let c = report.ceilings.get(*key).ok_or_else(|| format!("{name}: no {key} check"))?;
            ensure(c.pass, || format!("{name} {key}: {:.4e} > {:.4e}", c.value, c.ceiling))?;
            parts.push(format!("{name} {key} {:.2e}/{:.2e}", c.value, c.ceiling));
        }
    }
    Ok(parts.join(", "))
}

fn cli(out: &Path, args: &[&str]) -> Result<PathBuf, String> {
    let res = e(Command::new(env!("CARGO_BIN_EXE_svrg-sdde")).arg("--out").arg(out).args(args).output())?;
    let status = res.status.code();
    ensure(matches!(status, Some(0) | Some(1)), || {
        format!("{args:?} exited with {status:?}: {}", String::from_utf8_lossy(&res.stderr))
    })?;
    let stdout = String::from_utf8_lossy(&res.stdout);
    let dir = stdout.lines().last().ok_or_else(|| format!("{args:?} printed no run directory"))?;
    Ok(PathBuf::from(dir.trim()))
}

fn file_hashes(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let manifest: Value = e(serde_json::from_str(&e(fs::read_to_string(dir.join("manifest.json")))?))?;
    let files = manifest["files"].as_array().ok_or("manifest without files")?;
    Ok(files
        .iter()
        .map(|f| (f["name"].as_str().unwrap_or_default().to_string(), f["sha256"].as_str().unwrap_or_default().to_string()))
        .collect())
}

fn ac11_determinism() -> Outcome {
    let out = std::env::temp_dir().join(format!("svsd-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&out);
    let small = ["--replicas", "200", "--set", "run.epochs=5"];
    let sweep = [
        "--set",
        "sweep.eta_grid=[0.01, 0.02]",
        "--set",
        "sweep.delta_grid=[0.04, 0.08]",
        "--set",
        "sweep.pairing=\"zip\"",
    ];
    let verify = ["--set", "verify.trials=200", "--set", "verify.derivative_trials=8", "--set", "verify.concentration_repetitions=100"];
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-model"],
        vec!["--set", "model.type=\"logistic\"", "--set", "model.d=2", "--set", "model.format=\"text\"", "gen-model"],
        [&small[..], &["run"]].concat(),
        [&small[..], &["--set", "run.coupled=true", "run"]].concat(),
        [&small[..], &["moments"]].concat(),
        [&small[..], &sweep[..], &["w1-sweep"]].concat(),
        [&verify[..], &["verify"]].concat(),
    ];
    let mut checked = 0;
    for args in &commands {
        let first = cli(&out, args)?;
        let second = cli(&out, args)?;
        ensure(first != second, || "re-run reused its directory".to_string())?;
        let (a, b) = (file_hashes(&first)?, file_hashes(&second)?);
        ensure(!a.is_empty() && a == b, || format!("{args:?}: outputs differ\n{a:?}\n{b:?}"))?;
        for name in a.keys() {
            let same = e(fs::read(first.join(name)))? == e(fs::read(second.join(name)))?;
            ensure(same, || format!("{args:?}: {name} differs"))?;
            checked += 1;
        }
    }
    let _ = fs::remove_dir_all(&out);
    Ok(format!("{} commands, {checked} files reproduced bit-identically", commands.len()))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: "AC1", title: "sigma closed form", budget: Duration::from_secs(30), run: ac1_sigma_closed_form },
        Criterion { id: "AC2", title: "square-root reconstruction", budget: Duration::from_secs(10), run: ac2_sqrt_reconstruction },
        Criterion { id: "AC3", title: "noise identities", budget: Duration::from_secs(60), run: ac3_noise_identities },
        Criterion { id: "AC4", title: "W1 scaling", budget: Duration::from_secs(600), run: ac4_w1_scaling },
        Criterion { id: "AC5", title: "minimizer convergence", budget: Duration::from_secs(300), run: ac5_minimizer_convergence },
        Criterion { id: "AC6", title: "Jacobian-flow decay", budget: Duration::from_secs(120), run: ac6_jacobian_decay },
        Criterion { id: "AC7", title: "semigroup gradient", budget: Duration::from_secs(120), run: ac7_semigroup_gradient },
        Criterion { id: "AC8", title: "fourth-moment contraction", budget: Duration::from_secs(120), run: ac8_fourth_moment },
        Criterion { id: "AC9", title: "W1 estimator calibration", budget: Duration::from_secs(10), run: ac9_w1_calibration },
        Criterion { id: "AC10", title: "derivative ceilings", budget: Duration::from_secs(60), run: ac10_derivative_ceilings },
        Criterion { id: "AC11", title: "determinism", budget: Duration::from_secs(120), run: ac11_determinism },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.iter().any(|f| f == c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > c.budget => Err(format!("{msg}; over the {:.0} s budget", c.budget.as_secs_f64())),
            other => other,
        };
        let (tag, msg) = match &outcome {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!("{:<5}{tag} {} ({:.1} s): {msg}", c.id, c.title, took.as_secs_f64());
        failed += outcome.is_err() as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
