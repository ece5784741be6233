//! Numerical checks of the standing assumptions on concrete models.
//!
//! Every estimate is a maximum (or a fit) over a fixed, seeded sample of
//! points, so it is a lower bound on the true supremum. Comparisons against
//! analytic ceilings are therefore necessary conditions only.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    directional_derivative, dot, eig_sym, fd_step, norm, psd_sqrt, sqrt_frechet_derivative, SymMatrix,
};
use crate::models::{DiffusionSpec, Model, ObjectiveModel, QuadraticModel};
use crate::par::{map_indexed, try_map_indexed, Execution};
use crate::rng::{derive_seed, in_ball, stream, unit_vector, Purpose};

/// Slack applied to every analytic ceiling that is compared against a
/// finite-difference estimate.
pub const CEILING_SLACK: f64 = 1.1;

fn aux(seed: u64, t: usize) -> rand_chacha::ChaCha8Rng {
    stream(seed, t as u64, Purpose::Auxiliary)
}

fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

// ---------------------------------------------------------------------------
// smoothness

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Smoothness {
    /// `max (E_I|∇ψ_I(x)−∇ψ_I(y)|⁴)^{1/4} / |x−y|`.
    pub l_hat: f64,
    /// `max |∇P(x)−∇P(y)| / |x−y|`.
    pub gradient_lipschitz: f64,
}

/// A pair written as midpoint, unit direction and separation.
#[derive(Debug, Clone)]
struct Pair {
    c: Vec<f64>,
    u: Vec<f64>,
    r: f64,
}

impl Pair {
    fn ends(&self) -> (Vec<f64>, Vec<f64>) {
        let x = self.c.iter().zip(&self.u).map(|(c, u)| c + 0.5 * self.r * u).collect();
        let y = self.c.iter().zip(&self.u).map(|(c, u)| c - 0.5 * self.r * u).collect();
        (x, y)
    }

    fn inside(&self, radius: f64) -> bool {
        let (x, y) = self.ends();
        norm(&x) <= radius && norm(&y) <= radius
    }
}

fn random_pair<R: Rng>(rng: &mut R, d: usize, radius: f64) -> Option<Pair> {
    let x = in_ball(rng, d, radius);
    let y = in_ball(rng, d, radius);
    let diff = sub(&x, &y);
    let r = norm(&diff);
    if r < 1e-12 {
        return None;
    }
    let c = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
    Some(Pair { c, u: diff.iter().map(|v| v / r).collect(), r })
}

/// Maximises `ratio` over pairs in the ball: a seeded random search followed
/// by a shrinking-step hill climb from the best sample.
fn maximise_ratio<F>(d: usize, trials: usize, radius: f64, seed: u64, ratio: F) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    let samples = map_indexed(trials, Execution::Auto, |t| {
        let mut rng = aux(seed, t);
        random_pair(&mut rng, d, radius).map(|p| {
            let (x, y) = p.ends();
            (ratio(&x, &y), p)
        })
    });
    let Some((mut best_val, mut best)) = samples
        .into_iter()
        .flatten()
        .filter(|(v, _)| v.is_finite())
        .max_by(|a, b| a.0.total_cmp(&b.0))
    else {
        return 0.0;
    };
    let mut rng = stream(derive_seed(seed, 0x11ab), 0, Purpose::Auxiliary);
    let steps = trials.clamp(1, 4000);
    let mut sigma = 0.5;
    let decay = (1e-6f64 / sigma).powf(1.0 / steps as f64);
    for _ in 0..steps {
        let mut cand = best.clone();
        let du = unit_vector(&mut rng, d);
        for (u, e) in cand.u.iter_mut().zip(&du) {
            *u += sigma * e;
        }
        let nu = norm(&cand.u);
        cand.u.iter_mut().for_each(|u| *u /= nu);
        let dc = unit_vector(&mut rng, d);
        for (c, e) in cand.c.iter_mut().zip(&dc) {
            *c += sigma * radius * e * rng.random::<f64>();
        }
        cand.r = (cand.r * (1.0 + sigma * (rng.random::<f64>() - 0.5))).max(1e-9);
        if cand.inside(radius) {
            let (x, y) = cand.ends();
            let v = ratio(&x, &y);
            if v > best_val {
                best_val = v;
                best = cand;
            }
        }
        sigma *= decay;
    }
    best_val
}

/// Smoothness constants estimated over pairs in `ball(radius)`.
pub fn estimate_smoothness<M: ObjectiveModel + ?Sized>(
    model: &M,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<Smoothness> {
    if trials == 0 || !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("estimate_smoothness needs trials >= 1 and a positive radius"));
    }
    let d = model.dim();
    let l_hat = maximise_ratio(d, trials, radius, seed, |x, y| {
        model.gradient_diff_fourth_moment(x, y).powf(0.25) / norm(&sub(x, y))
    });
    let gradient_lipschitz = maximise_ratio(d, trials, radius, derive_seed(seed, 1), |x, y| {
        let g = sub(&model.full_gradient(x), &model.full_gradient(y));
        norm(&g) / norm(&sub(x, y))
    });
    Ok(Smoothness { l_hat, gradient_lipschitz })
}

// ---------------------------------------------------------------------------
// dissipativity

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dissipativity {
    pub gamma_hat: f64,
    pub k_hat: f64,
    /// False when no supporting line of positive slope exists for the sample.
    pub dissipative: bool,
    /// `min ⟨∇P(x)−∇P(y), x−y⟩ / |x−y|²` over sampled pairs, a strong
    /// monotonicity estimate reported alongside the fit.
    pub monotonicity: f64,
}

/// Lower convex hull of points sorted by abscissa.
fn lower_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        if hull.last().is_some_and(|h| h.0 == p.0) {
            continue;
        }
        hull.push(p);
    }
    hull
}

/// Fits `⟨∇P(x), x⟩ ≥ γ|x|² − K` to the scatter `{(|x|², ⟨∇P(x), x⟩)}`.
///
/// Every supporting line of the lower convex hull is admissible; the one
/// chosen minimises `K/γ`, the squared radius beyond which the drift is
/// inward, with ties going to the larger `γ`. The origin is always part of
/// the scatter, so `K ≥ 0`.
pub fn estimate_dissipativity<M: ObjectiveModel + ?Sized>(
    model: &M,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<Dissipativity> {
    if trials == 0 || !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("estimate_dissipativity needs trials >= 1 and a positive radius"));
    }
    let d = model.dim();
    let mut pts = map_indexed(trials, Execution::Auto, |t| {
        let mut rng = aux(seed, t);
        // radius uniform rather than volume-uniform, so small |x| is covered
        let r = radius * rng.random::<f64>();
        let x: Vec<f64> = unit_vector(&mut rng, d).into_iter().map(|u| u * r).collect();
        (dot(&x, &x), dot(&model.full_gradient(&x), &x))
    });
    pts.push((0.0, 0.0));
    let monotonicity = map_indexed(trials, Execution::Auto, |t| {
        let mut rng = aux(derive_seed(seed, 0x3a), t);
        random_pair(&mut rng, d, radius).map_or(f64::INFINITY, |p| {
            let (x, y) = p.ends();
            let g = sub(&model.full_gradient(&x), &model.full_gradient(&y));
            dot(&g, &p.u) / p.r
        })
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let hull = lower_hull(pts);
    let mut best: Option<(f64, f64, f64)> = None;
    for w in hull.windows(2) {
        let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
        if !(slope > 0.0 && slope.is_finite()) {
            continue;
        }
        let k = (slope * w[0].0 - w[0].1).max(0.0);
        let ratio = k / slope;
        let better = match best {
            None => true,
            Some((g, _, r)) => {
                let tie = (ratio - r).abs() <= 1e-12 * (1.0 + r.abs());
                (tie && slope > g) || (!tie && ratio < r)
            }
        };
        if better {
            best = Some((slope, k, ratio));
        }
    }
    Ok(match best {
        Some((gamma_hat, k_hat, _)) => Dissipativity { gamma_hat, k_hat, dissipative: true, monotonicity },
        None => Dissipativity { gamma_hat: 0.0, k_hat: 0.0, dissipative: false, monotonicity },
    })
}

// ---------------------------------------------------------------------------
// higher-order derivative bounds

/// Sampled maxima of the derivative norms bounded by the fourth assumption.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption4Estimate {
    /// `A₁..A₅`: `|∇²∇P|`, `|∇³∇P|`, then the squared HS norms of the first,
    /// second and third `Q` derivatives (first: max over both arguments).
    pub a: [f64; 5],
    /// `‖∇_{1,v}Q‖_HS` (not squared).
    pub dq_x: f64,
    /// `‖∇_{2,v}Q‖_HS`.
    pub dq_y: f64,
    /// `‖∇_{1,v₁}∇_{1,v₂}Q‖_HS`.
    pub d2q: f64,
    /// `‖∇_{1,v₁}∇_{1,v₂}∇_{1,v₃}Q‖_HS`.
    pub d3q: f64,
    /// `A₃·δ/η`, absent for `δ = 0`.
    pub a3_normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub value: f64,
    pub ceiling: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(value: f64, ceiling: f64) -> Self {
        Self { value, ceiling, pass: value.is_finite() && value <= ceiling }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption4Report {
    pub estimate: Assumption4Estimate,
    /// Comparisons against the closed-form ceilings known for the model.
    pub ceilings: BTreeMap<String, Check>,
}

impl Assumption4Report {
    pub fn passed(&self) -> bool {
        self.ceilings.values().all(|c| c.pass)
    }
}

fn flat_q<M: ObjectiveModel + ?Sized>(spec: &DiffusionSpec<'_, M>, x: &[f64], y: &[f64]) -> Vec<f64> {
    match spec.q_factor(x, y) {
        Ok(q) => q.into_vec(),
        Err(_) => vec![f64::NAN; x.len() * x.len()],
    }
}

fn finite_norm(v: &[f64], what: &str) -> Result<f64> {
    let n = norm(v);
    if n.is_finite() {
        Ok(n)
    } else {
        Err(Error::invalid(format!("non-finite {what} encountered during verification")))
    }
}

/// Maxima over `trials` seeded draws of `(x, y, v₁, v₂, v₃)` with `x, y` in
/// `ball(radius)`.
pub fn estimate_assumption4<M: ObjectiveModel + ?Sized>(
    spec: DiffusionSpec<'_, M>,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<Assumption4Estimate> {
    if trials == 0 || !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("check_assumption4 needs trials >= 1 and a positive radius"));
    }
    let d = spec.model.dim();
    let rows = try_map_indexed(trials, Execution::Auto, |t| {
        let mut rng = aux(seed, t);
        let x = in_ball(&mut rng, d, radius);
        let y = in_ball(&mut rng, d, radius);
        let v: Vec<Vec<f64>> = (0..3).map(|_| unit_vector(&mut rng, d)).collect();
        let (v1, v2, v3) = (&v[0][..], &v[1][..], &v[2][..]);
        let grad = |p: &[f64]| spec.model.full_gradient(p);
        let g2 = finite_norm(&directional_derivative(grad, &x, &[v1, v2])?, "∇²∇P")?;
        let g3 = finite_norm(&directional_derivative(grad, &x, &[v1, v2, v3])?, "∇³∇P")?;
        let qx = |p: &[f64]| flat_q(&spec, p, &y);
        let qy = |p: &[f64]| flat_q(&spec, &x, p);
        let q1x = finite_norm(&directional_derivative(qx, &x, &[v1])?, "∇₁Q")?;
        let q1y = finite_norm(&directional_derivative(qy, &y, &[v1])?, "∇₂Q")?;
        let q2 = finite_norm(&directional_derivative(qx, &x, &[v1, v2])?, "∇₁∇₁Q")?;
        let q3 = finite_norm(&directional_derivative(qx, &x, &[v1, v2, v3])?, "∇₁∇₁∇₁Q")?;
        Ok([g2, g3, q1x, q1y, q2, q3])
    })?;
    let mut m = [0.0f64; 6];
    for row in rows {
        for (a, b) in m.iter_mut().zip(row) {
            *a = a.max(b);
        }
    }
    let [g2, g3, dq_x, dq_y, d2q, d3q] = m;
    let a3 = dq_x.max(dq_y).powi(2);
    Ok(Assumption4Estimate {
        a: [g2, g3, a3, d2q * d2q, d3q * d3q],
        dq_x,
        dq_y,
        d2q,
        d3q,
        a3_normalized: (spec.delta > 0.0).then(|| a3 * spec.delta / spec.eta),
    })
}

/// Threshold below which a finite-difference estimate counts as zero.
pub const ZERO_DERIVATIVE_TOLERANCE: f64 = 1e-4;

/// [`estimate_assumption4`] plus the closed-form ceilings of the two worked
/// examples.
pub fn check_assumption4(
    spec: DiffusionSpec<'_, Model>,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<Assumption4Report> {
    let estimate = estimate_assumption4(spec, trials, radius, seed)?;
    let d = spec.model.dim() as f64;
    let ratio = if spec.delta > 0.0 { Some(spec.eta / spec.delta) } else { None };
    let mut ceilings = BTreeMap::new();
    let mut put = |name: &str, value: f64, ceiling: f64| {
        ceilings.insert(name.to_string(), Check::new(value, ceiling));
    };
    match spec.model {
        Model::Quadratic(_) => {
            put("A1", estimate.a[0], ZERO_DERIVATIVE_TOLERANCE);
            put("A2", estimate.a[1], ZERO_DERIVATIVE_TOLERANCE);
            put("dQ_x", estimate.dq_x, 1.05 * d * d);
            put("dQ_y", estimate.dq_y, 1.05 * d * d);
            if let Some(r) = ratio {
                put("d2Q", estimate.d2q, CEILING_SLACK * r.sqrt() * d.powf(2.5));
                put("d3Q", estimate.d3q, CEILING_SLACK * 3.0 * r * d.powi(3));
            }
        }
        Model::Logistic(l) => {
            let e = |p: f64| l.feature_moment(p);
            put("A1", estimate.a[0], CEILING_SLACK * 3.0 * e(3.0));
            put("A2", estimate.a[1], CEILING_SLACK * 13.0 * e(4.0));
            if let Some(r) = ratio {
                let s = r.sqrt();
                put("dQ_x", estimate.dq_x, CEILING_SLACK * 2.0 * e(3.0) * s);
                put("dQ_y", estimate.dq_y, CEILING_SLACK * 2.0 * e(3.0) * s);
                put("d2Q", estimate.d2q, CEILING_SLACK * 4.0 * s * (2.0 * e(4.0) + e(6.0) * d.sqrt() * r));
                let third = 12.0 * d.sqrt() * e(7.0) * r + 6.0 * d * e(9.0) * r * r + 11.0 * e(5.0);
                put("d3Q", estimate.d3q, CEILING_SLACK * 4.0 * s * third);
            }
        }
    }
    Ok(Assumption4Report { estimate, ceilings })
}

// ---------------------------------------------------------------------------
// derivatives of the matrix square root

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SqrtLemmaPoint {
    Checked { lambda_min: f64, lhs: [f64; 3], rhs: [f64; 3], pass: [bool; 3] },
    /// `λ_min(Σ̂(x))` fell below the floor.
    Skipped { lambda_min: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SqrtLemmaReport {
    pub points: Vec<SqrtLemmaPoint>,
    /// Largest `lhs / rhs` per order over checked points (0 when `rhs = 0`
    /// and `lhs = 0`).
    pub max_ratio: [f64; 3],
    pub skipped: usize,
}

impl SqrtLemmaReport {
    pub fn passed(&self) -> bool {
        self.points.iter().all(|p| match p {
            SqrtLemmaPoint::Checked { pass, .. } => pass.iter().all(|&b| b),
            SqrtLemmaPoint::Skipped { .. } => true,
        })
    }
}

fn hs(v: &[f64]) -> f64 {
    norm(v)
}

/// Checks the first three derivative bounds of `Σ̂(x)^{1/2}` at each point,
/// with seeded unit directions.
///
/// The first-order left side is the exact Fréchet derivative of the square
/// root applied to the finite-difference `∇_vΣ̂`; higher orders difference
/// the square root directly. A bound passes when
/// `lhs ≤ rhs·(1 + 10h²) + 10ε(1+‖Σ̂^{1/2}‖)/h^k` for the order-`k` step `h`.
pub fn check_sqrt_derivative_lemma<F>(family: F, points: &[Vec<f64>], floor: f64, seed: u64) -> Result<SqrtLemmaReport>
where
    F: Fn(&[f64]) -> Result<SymMatrix> + Sync + Send,
{
    if !(floor > 0.0) {
        return Err(Error::invalid("sqrt lemma check needs a positive eigenvalue floor"));
    }
    let flat = |p: &[f64]| family(p).map(SymMatrix::into_vec).unwrap_or_else(|_| vec![f64::NAN]);
    let flat_sqrt = |p: &[f64]| {
        family(p).and_then(|m| psd_sqrt(&m, 0.0)).map(SymMatrix::into_vec).unwrap_or_else(|_| vec![f64::NAN])
    };
    let out = try_map_indexed(points.len(), Execution::Auto, |i| {
        let x = &points[i];
        let s = family(x)?;
        let lambda = eig_sym(&s)?.lambda_min();
        if lambda < floor {
            return Ok(SqrtLemmaPoint::Skipped { lambda_min: lambda });
        }
        let dm = s.dim() as f64;
        let mut rng = aux(seed, i);
        let v: Vec<Vec<f64>> = (0..3).map(|_| unit_vector(&mut rng, x.len())).collect();
        let (v1, v2, v3) = (&v[0][..], &v[1][..], &v[2][..]);
        let dd = |dirs: &[&[f64]]| directional_derivative(flat, x, dirs);
        let n1 = hs(&dd(&[v1])?);
        let n2 = hs(&dd(&[v2])?);
        let n3 = hs(&dd(&[v3])?);
        let n12 = hs(&dd(&[v1, v2])?);
        let n13 = hs(&dd(&[v1, v3])?);
        let n23 = hs(&dd(&[v2, v3])?);
        let n123 = hs(&dd(&[v1, v2, v3])?);

        let e1 = SymMatrix::from_row_major(s.dim(), dd(&[v1])?);
        let lhs1 = sqrt_frechet_derivative(&s, &e1)?.frobenius_norm();
        let lhs2 = hs(&directional_derivative(flat_sqrt, x, &[v1, v2])?);
        let lhs3 = hs(&directional_derivative(flat_sqrt, x, &[v1, v2, v3])?);

        let (l12, l32, l52) = (lambda.powf(-0.5), lambda.powf(-1.5), lambda.powf(-2.5));
        let rhs1 = 0.5 * l12 * n1;
        let rhs2 = 0.25 * dm.sqrt() * l32 * n1 * n2 + 0.5 * l12 * n12;
        let rhs3 = 0.25 * dm.sqrt() * l32 * (n2 * n13 + n12 * n3)
            + 0.375 * dm * l52 * n1 * n2 * n3
            + 0.25 * dm.sqrt() * l32 * n1 * n23
            + 0.5 * l12 * n123;

        let root_norm = psd_sqrt(&s, 0.0)?.frobenius_norm();
        let lhs = [lhs1, lhs2, lhs3];
        let rhs = [rhs1, rhs2, rhs3];
        let mut pass = [false; 3];
        for k in 0..3 {
            let h = fd_step(k + 1, x);
            let rel = 10.0 * h * h;
            let abs = 10.0 * f64::EPSILON * (1.0 + root_norm) / h.powi(k as i32 + 1);
            pass[k] = lhs[k].is_finite() && lhs[k] <= rhs[k] * (1.0 + rel) + abs;
        }
        Ok(SqrtLemmaPoint::Checked { lambda_min: lambda, lhs, rhs, pass })
    })?;
    let mut max_ratio = [0.0f64; 3];
    let mut skipped = 0;
    for p in &out {
        match p {
            SqrtLemmaPoint::Checked { lhs, rhs, .. } => {
                for k in 0..3 {
                    let r = if rhs[k] > 0.0 { lhs[k] / rhs[k] } else if lhs[k] > 0.0 { f64::INFINITY } else { 0.0 };
                    max_ratio[k] = max_ratio[k].max(r);
                }
            }
            SqrtLemmaPoint::Skipped { .. } => skipped += 1,
        }
    }
    Ok(SqrtLemmaReport { points: out, max_ratio, skipped })
}

/// `x ↦ Σ(x, y) + (δ/η) I` for a fixed second argument.
pub fn sigma_family<'a, M: ObjectiveModel + ?Sized>(
    spec: DiffusionSpec<'a, M>,
    y: &'a [f64],
) -> impl Fn(&[f64]) -> Result<SymMatrix> + Sync + Send + 'a {
    move |x| Ok(spec.model.sigma(x, y).add_identity(spec.ridge()))
}

// ---------------------------------------------------------------------------
// concentration of the quadratic example's sample statistics

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// `|(1/n)Σ Q̃ diag(a_i) Q̃ᵀ v| > ε`, bound `d/(nε²)`.
    RotatedMean,
    /// `|(1/n)Σ|a_i|⁴ − E|a|⁴| > ε`, bound `E|a|⁸/(nε²)`.
    FourthMoment,
    /// Cross-moment against `Q̃ diag(Q̃ᵀv₁) diag(Q̃ᵀv₂) Q̃ᵀ v`, bound `6d⁶/(nε²)`.
    CrossMoment,
}

impl Inequality {
    pub const ALL: [Inequality; 3] = [Inequality::RotatedMean, Inequality::FourthMoment, Inequality::CrossMoment];

    pub fn as_str(self) -> &'static str {
        match self {
            Inequality::RotatedMean => "rotated_mean",
            Inequality::FourthMoment => "fourth_moment",
            Inequality::CrossMoment => "cross_moment",
        }
    }

    /// Chebyshev numerator `c` in `P(· > ε) ≤ c/(nε²)`.
    pub fn numerator(self, d: usize) -> f64 {
        let d = d as f64;
        match self {
            Inequality::RotatedMean => d,
            Inequality::FourthMoment => gaussian_norm_moment(d, 8),
            Inequality::CrossMoment => 6.0 * d.powi(6),
        }
    }

    pub fn bound(self, d: usize, n: usize, epsilon: f64) -> f64 {
        self.numerator(d) / (n as f64 * epsilon * epsilon)
    }

    /// The `ε` at which the bound equals `target`.
    pub fn epsilon_for(self, d: usize, n: usize, target: f64) -> f64 {
        (self.numerator(d) / (n as f64 * target)).sqrt()
    }
}

/// `E|a|^p` for `a ~ N(0, I_d)` and even `p`: `d(d+2)⋯(d+p−2)`.
pub fn gaussian_norm_moment(d: f64, p: u32) -> f64 {
    (0..p / 2).map(|j| d + 2.0 * j as f64).product()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationCell {
    pub inequality: Inequality,
    pub n: usize,
    pub epsilon: f64,
    pub repetitions: usize,
    pub exceedances: usize,
    pub rate: f64,
    /// `min(bound, 1)`.
    pub bound: f64,
    /// `bound + 3·√(bound(1−bound)/repetitions)`.
    pub allowance: f64,
    pub pass: bool,
}

/// The three statistics for one regenerated model.
fn concentration_statistics(model: &QuadraticModel, v: &[f64], v1: &[f64], v2: &[f64]) -> [f64; 3] {
    let d = model.dim();
    let n = model.n_components() as f64;
    let u = model.rotate_in(v);
    let w1 = model.rotate_in(v1);
    let w2 = model.rotate_in(v2);
    let mut mean = vec![0.0; d];
    let mut cross = vec![0.0; d];
    let mut fourth = crate::linalg::KahanSum::default();
    let target = d as f64 * (d as f64 + 2.0);
    for i in 0..model.n_components() {
        let a = model.sample(i);
        let sq = dot(a, a);
        fourth.add(sq * sq - target);
        let s: f64 = (0..d).map(|j| a[j] * w2[j] * u[j]).sum();
        for j in 0..d {
            mean[j] += a[j];
            cross[j] += a[j] * w1[j] * s;
        }
    }
    // Q̃ is orthogonal, so norms can be taken in the rotated frame
    let s21 = norm(&(0..d).map(|j| mean[j] / n * u[j]).collect::<Vec<_>>());
    let s22 = (fourth.total() / n).abs();
    let s23 = norm(&(0..d).map(|j| cross[j] / n - w1[j] * w2[j] * u[j]).collect::<Vec<_>>());
    [s21, s22, s23]
}

/// Exceedance frequencies of the three inequalities over independently
/// regenerated models, for each `n` in the grid. `epsilon` is indexed like
/// [`Inequality::ALL`].
pub fn check_concentration<G>(
    generate: G,
    n_grid: &[usize],
    epsilon: [f64; 3],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<ConcentrationCell>>
where
    G: Fn(usize, u64) -> Result<QuadraticModel> + Sync + Send,
{
    if repetitions < 100 {
        return Err(Error::invalid("check_concentration needs at least 100 repetitions"));
    }
    if epsilon.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::invalid("concentration thresholds must be positive"));
    }
    let mut cells = Vec::new();
    for (g, &n) in n_grid.iter().enumerate() {
        let grid_seed = derive_seed(seed, g as u64);
        let stats = try_map_indexed(repetitions, Execution::Auto, |r| {
            let model = generate(n, derive_seed(grid_seed, r as u64))?;
            let d = model.dim();
            let mut rng = aux(grid_seed, r);
            let v = unit_vector(&mut rng, d);
            let v1 = unit_vector(&mut rng, d);
            let v2 = unit_vector(&mut rng, d);
            Ok((d, concentration_statistics(&model, &v, &v1, &v2)))
        })?;
        let d = stats.first().map(|s| s.0).unwrap_or(1);
        for (k, ineq) in Inequality::ALL.into_iter().enumerate() {
            let exceedances = stats.iter().filter(|s| s.1[k] > epsilon[k]).count();
            let rate = exceedances as f64 / repetitions as f64;
            let bound = ineq.bound(d, n, epsilon[k]).min(1.0);
            let allowance = bound + 3.0 * (bound * (1.0 - bound) / repetitions as f64).sqrt();
            cells.push(ConcentrationCell {
                inequality: ineq,
                n,
                epsilon: epsilon[k],
                repetitions,
                exceedances,
                rate,
                bound,
                allowance,
                pass: rate <= allowance,
            });
        }
    }
    Ok(cells)
}

/// Residual `‖Σ(x,y) − Q̃ diag(Q̃ᵀ(x−y))² Q̃ᵀ‖_F` at `pairs` seeded pairs with
/// `|x − y| ≤ separation`.
pub fn sigma_closed_form_residuals(model: &QuadraticModel, pairs: usize, separation: f64, seed: u64) -> Vec<f64> {
    let d = model.dim();
    map_indexed(pairs, Execution::Auto, |t| {
        let mut rng = aux(seed, t);
        let x = in_ball(&mut rng, d, separation);
        let y: Vec<f64> = x.iter().zip(in_ball(&mut rng, d, separation)).map(|(a, b)| a + b).collect();
        model.sigma(&x, &y).sub(&model.sigma_closed_form(&x, &y)).frobenius_norm()
    })
}

/// `√(600 d⁶ / n)`: the cross-moment Chebyshev threshold at level 1%.
pub fn sigma_residual_ceiling(d: usize, n: usize) -> f64 {
    (600.0 * (d as f64).powi(6) / n as f64).sqrt()
}

// ---------------------------------------------------------------------------
// theorem regime and moment envelopes

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremRegime {
    pub eta: f64,
    /// Each term of the step-size condition, by name.
    pub thresholds: BTreeMap<String, f64>,
    pub eta_max: f64,
    pub satisfied: bool,
}

/// Whether `η` satisfies every term of the main theorem's step-size condition
/// for the given (estimated) constants.
pub fn theorem_regime(eta: f64, delta: f64, l: f64, gamma: f64, a3: f64) -> TheoremRegime {
    let mut t = BTreeMap::new();
    t.insert("delta".to_string(), delta);
    t.insert("cube_root".to_string(), (gamma / (432.0 * l.powi(4))).cbrt());
    t.insert("gamma_96L2".to_string(), gamma / (96.0 * l * l));
    t.insert("square_root".to_string(), (gamma / (576.0 * l.powi(3))).sqrt());
    t.insert("coupling".to_string(), gamma / ((6.0 * (1.0 + gamma)).sqrt() * 100.0 * l * l));
    t.insert("gamma_48A3".to_string(), if a3 > 0.0 { gamma / (48.0 * a3) } else { f64::INFINITY });
    t.insert("gamma_8L2".to_string(), gamma / (8.0 * l * l));
    let eta_max = t.values().copied().fold(f64::INFINITY, f64::min);
    let satisfied = gamma > 0.0 && eta > 0.0 && delta > 0.0 && delta <= 1.0 && eta <= eta_max;
    TheoremRegime { eta, thresholds: t, eta_max, satisfied }
}

/// Contraction factor `b = e^{−2(γ−L²η)mη} + ηL²/(γ−L²η)` of the epoch chain.
pub fn epoch_contraction(gamma: f64, l: f64, eta: f64, m: usize) -> f64 {
    let g = gamma - l * l * eta;
    (-2.0 * g * m as f64 * eta).exp() + eta * l * l / g
}

/// Envelope `b^s|x₀−ω*|² + (2K+δd)/(2(γ−L²η)(1−b))` for `E|X̃_s − ω*|²`,
/// or `None` outside its range of validity (`η > γ/3L²` or `b ≥ 1`).
#[allow(clippy::too_many_arguments)]
pub fn minimizer_envelope(gamma: f64, l: f64, k: f64, eta: f64, delta: f64, m: usize, d: usize, s: usize, dist0_sq: f64) -> Option<f64> {
    if !(gamma > 0.0) || eta > gamma / (3.0 * l * l) {
        return None;
    }
    let b = epoch_contraction(gamma, l, eta, m);
    if !(b < 1.0) {
        return None;
    }
    let g = gamma - l * l * eta;
    Some(b.powi(s as i32) * dist0_sq + (2.0 * k + delta * d as f64) / (2.0 * g * (1.0 - b)))
}

// ---------------------------------------------------------------------------
// full report

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub trials: usize,
    /// Trials for the (more expensive) derivative checks.
    pub derivative_trials: usize,
    pub radius: f64,
    pub concentration_repetitions: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { trials: 2000, derivative_trials: 64, radius: 2.0, concentration_repetitions: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationEntry {
    pub n: usize,
    pub epsilon: f64,
    pub rate: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// Every estimate is a maximum over a finite seeded sample: a lower bound
    /// on the supremum, so passing a ceiling is necessary, not sufficient.
    pub note: &'static str,
    #[serde(rename = "L_hat")]
    pub l_hat: f64,
    pub gradient_lipschitz: f64,
    pub gamma_hat: f64,
    #[serde(rename = "K_hat")]
    pub k_hat: f64,
    pub dissipative: bool,
    #[serde(rename = "A")]
    pub a: [f64; 5],
    #[serde(rename = "A3_normalized")]
    pub a3_normalized: Option<f64>,
    pub lemma_residuals: BTreeMap<String, Check>,
    pub concentration: BTreeMap<String, ConcentrationEntry>,
    pub theorem_regime: bool,
    pub eta_max: f64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.dissipative
            && self.lemma_residuals.values().all(|c| c.pass)
            && self.concentration.values().all(|c| c.pass)
    }
}

/// Runs every check that applies to `model` at `(η, δ)`.
pub fn assumption_report(model: &Model, eta: f64, delta: f64, opts: &VerifyOptions) -> Result<AssumptionReport> {
    let spec = DiffusionSpec::new(model, eta, delta)?;
    let seed = opts.seed;
    let smooth = estimate_smoothness(model, opts.trials, opts.radius, derive_seed(seed, 1))?;
    let diss = estimate_dissipativity(model, opts.trials, opts.radius, derive_seed(seed, 2))?;
    let a4 = check_assumption4(spec, opts.derivative_trials, opts.radius, derive_seed(seed, 3))?;
    let mut lemma_residuals = a4.ceilings.clone();

    if delta > 0.0 {
        let d = model.dim();
        let mut rng = aux(derive_seed(seed, 4), 0);
        let y = in_ball(&mut rng, d, opts.radius);
        let points: Vec<Vec<f64>> =
            (0..opts.derivative_trials).map(|_| in_ball(&mut rng, d, opts.radius)).collect();
        let lemma = check_sqrt_derivative_lemma(sigma_family(spec, &y), &points, 0.5 * spec.ridge(), derive_seed(seed, 5))?;
        let names = ["sqrt_order1", "sqrt_order2", "sqrt_order3"];
        for (k, name) in names.iter().enumerate() {
            let pass = lemma.points.iter().all(|p| match p {
                SqrtLemmaPoint::Checked { pass, .. } => pass[k],
                SqrtLemmaPoint::Skipped { .. } => true,
            });
            lemma_residuals.insert(name.to_string(), Check { value: lemma.max_ratio[k], ceiling: 1.0, pass });
        }
    }

    let mut concentration = BTreeMap::new();
    if let Model::Quadratic(q) = model {
        let (d, n) = (q.dim(), q.n_components());
        let residuals = sigma_closed_form_residuals(q, 20, 2.0, derive_seed(seed, 6));
        let ceiling = sigma_residual_ceiling(d, n);
        let within = residuals.iter().filter(|&&r| r <= ceiling).count();
        let worst_in_19 = {
            let mut r = residuals.clone();
            r.sort_by(f64::total_cmp);
            r[r.len().saturating_sub(2)]
        };
        lemma_residuals.insert(
            "sigma_closed_form".into(),
            Check { value: worst_in_19, ceiling, pass: within * 20 >= 19 * residuals.len() },
        );

        let eigen = q.eigenvalues().to_vec();
        let eps = Inequality::ALL.map(|i| i.epsilon_for(d, n, 0.1));
        let cells = check_concentration(
            |n, s| QuadraticModel::generate(d, n, &eigen, s),
            &[n],
            eps,
            opts.concentration_repetitions,
            derive_seed(seed, 7),
        )?;
        for c in cells {
            concentration.insert(
                c.inequality.as_str().to_string(),
                ConcentrationEntry { n: c.n, epsilon: c.epsilon, rate: c.rate, bound: c.bound, pass: c.pass },
            );
        }
    }

    let regime = theorem_regime(eta, delta, smooth.l_hat, diss.gamma_hat, a4.estimate.a[2]);
    Ok(AssumptionReport {
        note: "sampled maxima are lower bounds on suprema; ceiling checks are necessary conditions",
        l_hat: smooth.l_hat,
        gradient_lipschitz: smooth.gradient_lipschitz,
        gamma_hat: diss.gamma_hat,
        k_hat: diss.k_hat,
        dissipative: diss.dissipative,
        a: a4.estimate.a,
        a3_normalized: a4.estimate.a3_normalized,
        lemma_residuals,
        concentration,
        theorem_regime: regime.satisfied && diss.dissipative,
        eta_max: regime.eta_max,
    })
}
