//! Dense symmetric linear algebra for small dimensions.
//!
//! Everything here is sized for desk-scale problems (`d` up to a few dozen).
//! Matrices are stored row-major in a flat `Vec<f64>`; the symmetric type keeps
//! both triangles but only the upper one is read on construction.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Euclidean inner product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of a sequence, in iteration order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::default();
    for v in values {
        acc.add(v);
    }
    acc.total()
}

/// Dense symmetric `d × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be positive");
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = v;
        }
        m
    }

    /// Builds from a row-major buffer. The upper triangle is authoritative and
    /// is mirrored into the lower one.
    pub fn from_row_major(dim: usize, mut data: Vec<f64>) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be positive");
        assert_eq!(data.len(), dim * dim, "buffer length must be dim^2");
        for i in 0..dim {
            for j in 0..i {
                data[i * dim + j] = data[j * dim + i];
            }
        }
        Self { dim, data }
    }

    /// Builds from a function evaluated on the upper triangle `i <= j`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// `A · diag(s) · Aᵀ` for a row-major square `A` whose columns carry the
    /// basis. Used to assemble matrices from spectral data.
    pub fn from_basis(basis: &[f64], scales: &[f64]) -> Self {
        let d = scales.len();
        debug_assert_eq!(basis.len(), d * d);
        Self::from_fn(d, |i, j| {
            let mut acc = 0.0;
            for k in 0..d {
                acc += basis[i * d + k] * scales[k] * basis[j * d + k];
            }
            acc
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `self + c·I`.
    pub fn add_identity(&self, c: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.data[i * self.dim + i] += c;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// `out = self · v`.
    #[inline]
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate().take(d) {
            *o = dot(&self.data[i * d..(i + 1) * d], v);
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.mul_vec_into(v, &mut out);
        out
    }

    /// Dense product `self · other` as a row-major buffer; the result is in
    /// general not symmetric.
    pub fn matmul(&self, other: &Self) -> Vec<f64> {
        let d = self.dim;
        assert_eq!(d, other.dim);
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                for j in 0..d {
                    out[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        out
    }

    /// `Uᵀ · self · U` for a row-major square `U`.
    pub fn conjugate(&self, u: &[f64]) -> Self {
        let d = self.dim;
        assert_eq!(u.len(), d * d);
        // tmp = self · U
        let mut tmp = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                for j in 0..d {
                    tmp[i * d + j] += a * u[k * d + j];
                }
            }
        }
        Self::from_fn(d, |i, j| (0..d).map(|k| u[k * d + i] * tmp[k * d + j]).sum())
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }
}

/// Eigen-decomposition `M = V · diag(λ) · Vᵀ` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Row-major `d × d`; column `k` is the eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let scales: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        SymMatrix::from_basis(&self.eigenvectors, &scales)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.apply(|l| l)
    }

    /// `max |VᵀV − I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.dim();
        let v = &self.eigenvectors;
        let mut worst = 0.0_f64;
        for a in 0..d {
            for b in 0..d {
                let s: f64 = (0..d).map(|k| v[k * d + a] * v[k * d + b]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

/// Symmetric eigen-decomposition with ascending eigenvalues.
pub fn eig_sym(m: &SymMatrix) -> Result<SpectralDecomposition> {
    if !m.is_finite() {
        return Err(Error::invalid("eig_sym: matrix has non-finite entries"));
    }
    let d = m.dim();
    if d == 1 {
        return Ok(SpectralDecomposition { eigenvalues: vec![m.get(0, 0)], eigenvectors: vec![1.0] });
    }
    let eig = SymmetricEigen::new(m.to_nalgebra());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = vec![0.0; d * d];
    for (col, &k) in order.iter().enumerate() {
        for row in 0..d {
            eigenvectors[row * d + col] = eig.eigenvectors[(row, k)];
        }
    }
    Ok(SpectralDecomposition { eigenvalues, eigenvectors })
}

/// Relative threshold below which a negative eigenvalue is treated as a
/// genuine indefiniteness instead of round-off.
pub const PSD_NEGATIVE_TOLERANCE: f64 = 1e-8;

/// Principal square root of `m + ridge·I`.
///
/// Eigenvalues of `m` in `[-1e-8·‖m‖_F, 0)` are clamped to zero before the ridge
/// is added; anything more negative is reported as [`Error::NotPsd`].
pub fn psd_sqrt(m: &SymMatrix, ridge: f64) -> Result<SymMatrix> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid(format!("psd_sqrt: ridge must be finite and >= 0, got {ridge}")));
    }
    if m.dim() == 1 {
        let v = clamp_eigenvalue(m.get(0, 0), m.frobenius_norm())?;
        return Ok(SymMatrix::from_diag(&[(v + ridge).sqrt()]));
    }
    let spec = eig_sym(m)?;
    let fro = m.frobenius_norm();
    clamp_eigenvalue(spec.lambda_min(), fro)?;
    Ok(spec.apply(|l| (l.max(0.0) + ridge).sqrt()))
}

fn clamp_eigenvalue(l: f64, fro: f64) -> Result<f64> {
    let threshold = -PSD_NEGATIVE_TOLERANCE * fro;
    if l < threshold {
        return Err(Error::NotPsd { eigenvalue: l, threshold });
    }
    Ok(l.max(0.0))
}

/// Fréchet derivative of the matrix square root at a positive definite `m` in
/// the symmetric direction `e`, via the Daleckii–Krein divided differences
/// `(Vᵀ e V)_{ij} / (√λ_i + √λ_j)`.
pub fn sqrt_frechet_derivative(m: &SymMatrix, e: &SymMatrix) -> Result<SymMatrix> {
    let spec = eig_sym(m)?;
    if spec.lambda_min() <= 0.0 {
        return Err(Error::invalid("sqrt_frechet_derivative: matrix must be positive definite"));
    }
    let d = m.dim();
    let roots: Vec<f64> = spec.eigenvalues.iter().map(|l| l.sqrt()).collect();
    let rotated = e.conjugate(&spec.eigenvectors);
    let inner = SymMatrix::from_fn(d, |i, j| rotated.get(i, j) / (roots[i] + roots[j]));
    // back to the original basis: V · inner · Vᵀ
    let vt = transpose(&spec.eigenvectors, d);
    Ok(inner.conjugate(&vt))
}

/// Transpose of a row-major square matrix.
pub fn transpose(a: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[j * d + i] = a[i * d + j];
        }
    }
    out
}

/// Finite-difference step for a central stencil of the given order at `x`:
/// `ε^{1/(order+2)} · (1 + |x|)`.
pub fn fd_step(order: usize, x: &[f64]) -> f64 {
    let exponent = 1.0 / (order as f64 + 2.0);
    f64::EPSILON.powf(exponent) * (1.0 + norm(x))
}

/// Central finite-difference estimate of `∇_{v_k} ⋯ ∇_{v_1} f(x)` for one to
/// three unit directions. The output of `f` is treated as a flat vector, so
/// matrix-valued maps are supported by flattening.
///
/// The nested stencil evaluates `f` at the `2^k` points `x + h·Σ ±v_j` and
/// divides by `(2h)^k`; it is exact for polynomials of degree `≤ k + 1`.
pub fn directional_derivative<F>(f: F, x: &[f64], dirs: &[&[f64]]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let order = dirs.len();
    if !(1..=3).contains(&order) {
        return Err(Error::invalid(format!("directional_derivative: order must be 1..=3, got {order}")));
    }
    for v in dirs {
        if v.len() != x.len() {
            return Err(Error::invalid("directional_derivative: direction dimension mismatch"));
        }
        if (norm(v) - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("directional_derivative: directions must be unit vectors"));
        }
    }
    let h = fd_step(order, x);
    let mut acc: Option<Vec<f64>> = None;
    let mut point = vec![0.0; x.len()];
    for mask in 0..(1usize << order) {
        let mut sign = 1.0;
        point.copy_from_slice(x);
        for (j, v) in dirs.iter().enumerate() {
            let s = if mask & (1 << j) == 0 { 1.0 } else { -1.0 };
            sign *= s;
            for (p, vi) in point.iter_mut().zip(v.iter()) {
                *p += s * h * vi;
            }
        }
        let val = f(&point);
        match acc.as_mut() {
            None => acc = Some(val.into_iter().map(|v| sign * v).collect()),
            Some(a) => {
                for (ai, vi) in a.iter_mut().zip(val) {
                    *ai += sign * vi;
                }
            }
        }
    }
    let denom = (2.0 * h).powi(order as i32);
    Ok(acc.unwrap_or_default().into_iter().map(|v| v / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_sym(d: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        SymMatrix::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_gram(d: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let a: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
        SymMatrix::from_fn(d, |i, j| (0..d).map(|k| a[k * d + i] * a[k * d + j]).sum())
    }

    #[test]
    fn symmetric_by_construction() {
        let m = SymMatrix::from_row_major(2, vec![1.0, 2.0, 99.0, 3.0]);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(0, 1), m.get(1, 0));
    }

    #[test]
    fn eig_identity() {
        let s = eig_sym(&SymMatrix::identity(3)).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 1.0, 1.0]);
        assert!(s.orthogonality_defect() <= 1e-12);
    }

    #[test]
    fn eig_diagonal() {
        let s = eig_sym(&SymMatrix::from_diag(&[9.0, 4.0])).unwrap();
        assert_eq!(s.eigenvalues, vec![4.0, 9.0]);
        for k in 0..2 {
            // each eigenvector is ± a standard basis vector
            let col = [s.eigenvectors[k], s.eigenvectors[2 + k]];
            assert!((col[0].abs() + col[1].abs() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn eig_random_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_sym(6, &mut rng);
        let s = eig_sym(&m).unwrap();
        let err = s.reconstruct().sub(&m).frobenius_norm();
        assert!(err <= 1e-10 * (1.0 + m.frobenius_norm()), "err {err}");
        assert!(s.orthogonality_defect() <= 1e-12);
        assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eig_rejects_nan() {
        let m = SymMatrix::from_diag(&[1.0, f64::NAN]);
        assert!(matches!(eig_sym(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sqrt_of_ridge_only() {
        let q = psd_sqrt(&SymMatrix::zeros(2), 4.0).unwrap();
        assert_eq!(q, SymMatrix::from_diag(&[2.0, 2.0]));
    }

    #[test]
    fn sqrt_of_diagonal_plus_ridge() {
        let q = psd_sqrt(&SymMatrix::from_diag(&[5.0, 12.0]), 4.0).unwrap();
        assert!((q.get(0, 0) - 3.0).abs() < 1e-14);
        assert!((q.get(1, 1) - 4.0).abs() < 1e-14);
        assert!(q.get(0, 1).abs() < 1e-14);
    }

    #[test]
    fn sqrt_of_gram_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_gram(5, &mut rng);
        let q = psd_sqrt(&m, 0.1).unwrap();
        let sq = SymMatrix::from_row_major(5, q.matmul(&q));
        let err = sq.sub(&m.add_identity(0.1)).frobenius_norm();
        assert!(err <= 1e-10 * (1.0 + m.frobenius_norm() + 0.1 * 5f64.sqrt()));
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let m = SymMatrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(psd_sqrt(&m, 0.0), Err(Error::NotPsd { .. })));
        let one = SymMatrix::from_diag(&[-1.0]);
        assert!(matches!(psd_sqrt(&one, 3.0), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn sqrt_clamps_roundoff_negatives() {
        let m = SymMatrix::from_diag(&[1.0, -1e-12]);
        let q = psd_sqrt(&m, 0.0).unwrap();
        assert_eq!(q.get(1, 1), 0.0);
    }

    #[test]
    fn sqrt_rejects_negative_ridge() {
        assert!(psd_sqrt(&SymMatrix::identity(2), -1.0).is_err());
    }

    #[test]
    fn frechet_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_gram(4, &mut rng).add_identity(0.5);
        let e = random_sym(4, &mut rng);
        let exact = sqrt_frechet_derivative(&m, &e).unwrap();
        let h = 1e-6;
        let plus = psd_sqrt(&m.add(&e.scaled(h)), 0.0).unwrap();
        let minus = psd_sqrt(&m.sub(&e.scaled(h)), 0.0).unwrap();
        let fd = plus.sub(&minus).scaled(0.5 / h);
        assert!(fd.sub(&exact).frobenius_norm() < 1e-7 * (1.0 + exact.frobenius_norm()));
    }

    #[test]
    fn fd_linear_first_order() {
        let h = SymMatrix::from_row_major(3, vec![2.0, 0.5, -1.0, 0.0, 3.0, 0.25, 0.0, 0.0, 1.5]);
        let x = [0.3, -1.2, 2.0];
        let v = [0.6, 0.0, 0.8];
        let got = directional_derivative(|p| h.mul_vec(p), &x, &[&v]).unwrap();
        let want = h.mul_vec(&v);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-6 * h.frobenius_norm());
        }
    }

    #[test]
    fn fd_linear_higher_orders_vanish() {
        let h = SymMatrix::from_row_major(2, vec![4.0, 1.0, 0.0, 2.0]);
        let x = [1.0, -2.0];
        let v1 = [1.0, 0.0];
        let v2 = [0.0, 1.0];
        let second = directional_derivative(|p| h.mul_vec(p), &x, &[&v1, &v2]).unwrap();
        assert!(second.iter().all(|g| g.abs() <= 1e-4 * h.frobenius_norm()));
        let third = directional_derivative(|p| h.mul_vec(p), &x, &[&v1, &v2, &v1]).unwrap();
        assert!(third.iter().all(|g| g.abs() <= 1e-2 * h.frobenius_norm()));
    }

    #[test]
    fn fd_rejects_non_unit_direction() {
        let r = directional_derivative(|p| p.to_vec(), &[0.0, 0.0], &[&[1.0, 1.0]]);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn fd_rejects_bad_order() {
        let v = [1.0];
        let r = directional_derivative(|p| p.to_vec(), &[0.0], &[&v, &v, &v, &v]);
        assert!(r.is_err());
    }

    #[test]
    fn fd_cubic_third_derivative() {
        // f(x) = x^3 → f''' = 6 everywhere
        let got = directional_derivative(|p| vec![p[0].powi(3)], &[0.7], &[&[1.0], &[1.0], &[1.0]]).unwrap();
        let h = fd_step(3, &[0.7]);
        assert!((got[0] - 6.0).abs() <= 10.0 * h * h + 1e-3, "{}", got[0]);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }
}
