//! Empirical measures, Wasserstein-1 distances and moments.

use rand::seq::index;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, dot};
use crate::par::{map_indexed, Execution};
use crate::rng::{stream, unit_vector, Purpose};

/// Uniformly weighted point cloud in `R^d`, flat `N × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
    dim: usize,
}

impl EmpiricalMeasure {
    pub fn new(samples: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || samples.is_empty() || !samples.len().is_multiple_of(dim) {
            return Err(Error::invalid("empirical measure needs at least one point of dimension >= 1"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("empirical measure samples must be finite"));
        }
        Ok(Self { samples, dim })
    }

    pub fn from_scalars(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1)
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// `⟨u, x_i⟩` for every point.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| dot(self.point(i), u)).collect()
    }

    /// Per-coordinate mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.dim)
            .map(|j| compensated_sum((0..self.len()).map(|i| self.point(i)[j])) / n)
            .collect()
    }

    /// A seeded subsample of `k` distinct points.
    fn subsample(&self, k: usize, seed: u64) -> Self {
        let mut rng = stream(seed, 0, Purpose::Auxiliary);
        let mut picked = index::sample(&mut rng, self.len(), k).into_vec();
        picked.sort_unstable();
        let mut samples = Vec::with_capacity(k * self.dim);
        for i in picked {
            samples.extend_from_slice(self.point(i));
        }
        Self { samples, dim: self.dim }
    }
}

/// Brings two measures to a common size by subsampling the larger one
/// without replacement.
fn equalize<'a>(
    a: &'a EmpiricalMeasure,
    b: &'a EmpiricalMeasure,
    seed: u64,
) -> (std::borrow::Cow<'a, EmpiricalMeasure>, std::borrow::Cow<'a, EmpiricalMeasure>) {
    use std::borrow::Cow;
    match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Equal => (Cow::Borrowed(a), Cow::Borrowed(b)),
        std::cmp::Ordering::Greater => (Cow::Owned(a.subsample(b.len(), seed)), Cow::Borrowed(b)),
        std::cmp::Ordering::Less => (Cow::Borrowed(a), Cow::Owned(b.subsample(a.len(), seed))),
    }
}

/// Exact 1-D optimal transport cost between equal-size uniform clouds.
fn sorted_w1(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    compensated_sum(a.iter().zip(&b).map(|(x, y)| (x - y).abs())) / a.len() as f64
}

/// Exact `W₁` between two one-dimensional empirical measures.
///
/// Unequal sizes are resolved by subsampling the larger cloud (seeded).
pub fn w1_exact_1d(a: &EmpiricalMeasure, b: &EmpiricalMeasure, seed: u64) -> Result<f64> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::invalid("w1_exact_1d needs one-dimensional measures"));
    }
    let (a, b) = equalize(a, b, seed);
    Ok(sorted_w1(a.samples.clone(), b.samples.clone()))
}

/// Sliced `W₁`: mean and standard error of the exact 1-D distance over
/// `projections` uniform random directions. Direction `p` depends only on
/// `(seed, p)`.
pub fn sliced_w1(a: &EmpiricalMeasure, b: &EmpiricalMeasure, projections: usize, seed: u64) -> Result<(f64, f64)> {
    sliced_w1_with(a, b, projections, seed, Execution::default())
}

pub fn sliced_w1_with(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    projections: usize,
    seed: u64,
    exec: Execution,
) -> Result<(f64, f64)> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    if projections == 0 {
        return Err(Error::invalid("sliced_w1 needs at least one projection"));
    }
    let (a, b) = equalize(a, b, seed);
    let d = a.dim();
    let values = map_indexed(projections, exec, |p| {
        let mut rng = stream(seed, p as u64 + 1, Purpose::Auxiliary);
        let u = unit_vector(&mut rng, d);
        sorted_w1(a.project(&u), b.project(&u))
    });
    Ok(mean_stderr(&values))
}

/// Sample mean and standard error of the mean (0 for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `(1/N) Σ |x_i|^p` for `p ∈ {1, 2, 4, 8}`.
pub fn moment(a: &EmpiricalMeasure, p: u32) -> Result<f64> {
    if !matches!(p, 1 | 2 | 4 | 8) {
        return Err(Error::invalid(format!("unsupported moment order {p}")));
    }
    let pow = |x: &[f64]| {
        let sq = dot(x, x);
        match p {
            1 => sq.sqrt(),
            _ => sq.powi(p as i32 / 2),
        }
    };
    Ok(compensated_sum((0..a.len()).map(|i| pow(a.point(i)))) / a.len() as f64)
}

/// `(1/R) Σ_r |ω̃_s^{(r)} − X̃_s^{(r)}|^p`, p-th root taken for `p = 2`.
///
/// Only meaningful when both ensembles were driven by the same Gaussian
/// streams on the algorithm's own grid.
pub fn coupled_distance(a: &Ensemble, b: &Ensemble, s: usize, p: u32) -> Result<f64> {
    if !(a.coupled && b.coupled) || a.noise_seed != b.noise_seed || a.substeps != 1 || b.substeps != 1 {
        return Err(Error::invalid("coupled_distance needs ensembles generated in coupled mode"));
    }
    if a.replicas() != b.replicas() || a.dim != b.dim {
        return Err(Error::invalid("coupled ensembles must share replica count and dimension"));
    }
    if s > a.epochs() || s > b.epochs() {
        return Err(Error::invalid(format!("epoch {s} not recorded")));
    }
    let dist = |r: usize| {
        let (x, y) = (a.paths[r].state(s), b.paths[r].state(s));
        x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
    };
    let r = a.replicas() as f64;
    match p {
        1 => Ok(compensated_sum((0..a.replicas()).map(dist)) / r),
        2 => Ok((compensated_sum((0..a.replicas()).map(|i| dist(i).powi(2))) / r).sqrt()),
        _ => Err(Error::invalid(format!("coupled_distance supports p = 1 or 2, got {p}"))),
    }
}

/// Least-squares fit `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(v: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(v.to_vec()).unwrap()
    }

    #[test]
    fn two_point_matching() {
        assert_eq!(w1_exact_1d(&m1(&[0.0, 1.0]), &m1(&[5.0, 2.0]), 0).unwrap(), 3.0);
    }

    #[test]
    fn shift_and_identity() {
        let a = m1(&[0.3, -1.2, 4.0, 2.2]);
        let b = m1(&[2.3, 0.8, 6.0, 4.2]);
        assert!((w1_exact_1d(&a, &b, 0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(w1_exact_1d(&a, &a, 0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_multivariate() {
        let a = EmpiricalMeasure::new(vec![0.0, 1.0], 2).unwrap();
        assert!(w1_exact_1d(&a, &a, 0).is_err());
        let b = m1(&[0.0]);
        assert!(sliced_w1(&a, &b, 4, 0).is_err());
    }

    #[test]
    fn unequal_sizes_subsample() {
        let a = m1(&[1.0, 1.0, 1.0, 1.0, 1.0]);
        let b = m1(&[3.0, 3.0]);
        assert_eq!(w1_exact_1d(&a, &b, 5).unwrap(), 2.0);
    }

    #[test]
    fn sliced_identical_is_zero() {
        let a = EmpiricalMeasure::new(vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.5], 2).unwrap();
        assert_eq!(sliced_w1(&a, &a, 16, 3).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn moments_by_hand() {
        assert_eq!(moment(&m1(&[1.0, -1.0, 2.0, -2.0]), 4).unwrap(), 8.5);
        assert_eq!(moment(&m1(&[0.0; 5]), 8).unwrap(), 0.0);
        assert!(moment(&m1(&[1.0]), 3).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.5)).collect();
        assert!((loglog_slope(&x, &y) - 0.5).abs() < 1e-12);
    }
}
