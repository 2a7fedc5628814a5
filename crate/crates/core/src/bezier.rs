//! Bezier polynomial bundles.
//!
//! A [`BezierCurve`] stores `n_rows` scalar Bezier polynomials of a shared
//! degree `b` as a coefficient matrix with one control point per column.
//! Evaluation, differentiation and subdivision are all linear maps applied to
//! that matrix, so they can be batched and compose exactly with convex
//! combinations of coefficient matrices.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Largest supported polynomial degree. Binomial weights are tabulated up to
/// this degree at compile time.
pub const MAX_DEGREE: usize = 15;

/// Length of a basis buffer large enough for any supported degree.
pub const BASIS_LEN: usize = MAX_DEGREE + 1;

const fn binomial_table() -> [[f64; BASIS_LEN]; BASIS_LEN] {
    let mut ints = [[0u64; BASIS_LEN]; BASIS_LEN];
    let mut table = [[0.0f64; BASIS_LEN]; BASIS_LEN];
    let mut n = 0;
    while n < BASIS_LEN {
        ints[n][0] = 1;
        let mut k = 1;
        while k <= n {
            ints[n][k] = ints[n - 1][k - 1] + ints[n - 1][k];
            k += 1;
        }
        let mut k = 0;
        while k <= n {
            table[n][k] = ints[n][k] as f64;
            k += 1;
        }
        n += 1;
    }
    table
}

static BINOMIAL: [[f64; BASIS_LEN]; BASIS_LEN] = binomial_table();

/// `C(n, k)` as a float, for `k <= n <= MAX_DEGREE`.
#[inline]
pub fn binomial(n: usize, k: usize) -> f64 {
    BINOMIAL[n][k]
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BezierError {
    #[error("degree {0} outside supported range 1..={MAX_DEGREE}")]
    UnsupportedDegree(usize),
    #[error("coefficient matrix has no rows")]
    NoRows,
    #[error("non-finite coefficient at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("phase {0} outside [0, 1]")]
    PhaseOutOfRange(f64),
    #[error("split point must lie in (0, 1], got {0}")]
    InvalidSplit(f64),
    #[error("derivative order must be at least 1")]
    ZeroOrder,
    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("output buffer has length {got}, expected {expected}")]
    BufferLength { expected: usize, got: usize },
    #[error("least-squares fit needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("fit sample {index}: {reason}")]
    BadSample { index: usize, reason: String },
    #[error("Bernstein design matrix is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },
}

pub type Result<T, E = BezierError> = std::result::Result<T, E>;

/// Fills `out[..=degree]` with the Bernstein basis `C(b,j) t^j (1-t)^(b-j)`.
///
/// No range check is performed on `tau`; callers validate it.
#[inline]
pub fn bernstein_basis(degree: usize, tau: f64, out: &mut [f64]) {
    debug_assert!(degree <= MAX_DEGREE && out.len() > degree);
    let one_minus = 1.0 - tau;
    let mut t_pow = [1.0f64; BASIS_LEN];
    let mut u_pow = [1.0f64; BASIS_LEN];
    for j in 1..=degree {
        t_pow[j] = t_pow[j - 1] * tau;
        u_pow[j] = u_pow[j - 1] * one_minus;
    }
    let row = &BINOMIAL[degree];
    for j in 0..=degree {
        out[j] = row[j] * t_pow[j] * u_pow[degree - j];
    }
}

#[inline]
fn check_phase(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(BezierError::PhaseOutOfRange(tau))
    }
}

/// A bundle of scalar Bezier polynomials sharing one degree.
#[derive(Clone, Debug, PartialEq)]
pub struct BezierCurve {
    coeffs: DMatrix<f64>,
}

impl BezierCurve {
    /// Wraps a coefficient matrix (`n_rows x (degree + 1)`), checking shape
    /// and finiteness.
    pub fn new(coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() == 0 {
            return Err(BezierError::NoRows);
        }
        let cols = coeffs.ncols();
        if !(2..=BASIS_LEN).contains(&cols) {
            return Err(BezierError::UnsupportedDegree(cols.saturating_sub(1)));
        }
        for col in 0..cols {
            for row in 0..coeffs.nrows() {
                if !coeffs[(row, col)].is_finite() {
                    return Err(BezierError::NonFinite { row, col });
                }
            }
        }
        Ok(Self { coeffs })
    }

    /// Builds a curve from a row-major slice of `n_rows * (degree + 1)` values.
    pub fn from_row_major(n_rows: usize, degree: usize, data: &[f64]) -> Result<Self> {
        let expected = n_rows * (degree + 1);
        if data.len() != expected {
            return Err(BezierError::BufferLength {
                expected,
                got: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n_rows, degree + 1, data))
    }

    /// A curve whose control points all equal `point`.
    pub fn constant(point: &[f64], degree: usize) -> Result<Self> {
        let cols = degree + 1;
        Self::new(DMatrix::from_fn(point.len(), cols, |r, _| point[r]))
    }

    /// Internal constructor for matrices produced by finite linear maps of
    /// already-validated curves.
    pub(crate) fn from_matrix_unchecked(coeffs: DMatrix<f64>) -> Self {
        debug_assert!(coeffs.nrows() > 0 && coeffs.ncols() >= 2);
        Self { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.ncols() - 1
    }

    pub fn n_rows(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DMatrix<f64> {
        self.coeffs
    }

    /// Coefficients flattened row by row.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coeffs.len());
        for r in 0..self.n_rows() {
            for c in 0..=self.degree() {
                out.push(self.coeffs[(r, c)]);
            }
        }
        out
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.coeffs.shape() == other.coeffs.shape() {
            Ok(())
        } else {
            Err(BezierError::ShapeMismatch {
                left_rows: self.n_rows(),
                left_cols: self.coeffs.ncols(),
                right_rows: other.n_rows(),
                right_cols: other.coeffs.ncols(),
            })
        }
    }

    /// Evaluates every row at `tau` into `out` without allocating.
    pub fn eval_into(&self, tau: f64, out: &mut [f64]) -> Result<()> {
        check_phase(tau)?;
        if out.len() != self.n_rows() {
            return Err(BezierError::BufferLength {
                expected: self.n_rows(),
                got: out.len(),
            });
        }
        let mut basis = [0.0f64; BASIS_LEN];
        bernstein_basis(self.degree(), tau, &mut basis);
        self.combine_columns(&basis[..=self.degree()], out);
        Ok(())
    }

    pub fn eval(&self, tau: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n_rows());
        self.eval_into(tau, out.as_mut_slice())?;
        Ok(out)
    }

    /// `out[i] = sum_j coeffs[i, j] * weights[j]`, accumulated in column order.
    ///
    /// Every evaluation path (single, derivative, batched) funnels through this
    /// kernel so results are bit-identical regardless of call layout.
    #[inline]
    pub(crate) fn combine_columns(&self, weights: &[f64], out: &mut [f64]) {
        combine_columns(&self.coeffs, weights, out);
    }

    /// Evaluates the `order`-th derivative with respect to the phase.
    pub fn eval_derivative_into(&self, tau: f64, order: usize, out: &mut [f64]) -> Result<()> {
        check_phase(tau)?;
        if order == 0 {
            return Err(BezierError::ZeroOrder);
        }
        if out.len() != self.n_rows() {
            return Err(BezierError::BufferLength {
                expected: self.n_rows(),
                got: out.len(),
            });
        }
        let b = self.degree();
        if order > b {
            out.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        let reduced = b - order;
        let scale: f64 = (0..order).map(|m| (b - m) as f64).product();
        let mut basis = [0.0f64; BASIS_LEN];
        bernstein_basis(reduced, tau, &mut basis);
        let mut diff = [0.0f64; BASIS_LEN];
        for (row, slot) in out.iter_mut().enumerate() {
            for (j, d) in diff.iter_mut().enumerate().take(b + 1) {
                *d = self.coeffs[(row, j)];
            }
            // hodograph: repeated forward differences of the control points
            for level in 0..order {
                for j in 0..(b - level) {
                    diff[j] = diff[j + 1] - diff[j];
                }
            }
            let mut acc = diff[0] * basis[0];
            for j in 1..=reduced {
                acc += diff[j] * basis[j];
            }
            *slot = scale * acc;
        }
        Ok(())
    }

    pub fn eval_derivative(&self, tau: f64, order: usize) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n_rows());
        self.eval_derivative_into(tau, order, out.as_mut_slice())?;
        Ok(out)
    }

    /// Splits the curve at `s`, returning the segments on `[0, s]` and
    /// `[s, 1]`, each reparameterized onto `[0, 1]`.
    pub fn split(&self, s: f64) -> Result<(Self, Self)> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(BezierError::InvalidSplit(s));
        }
        let (left_m, right_m) = subdivision_matrices(self.degree(), s);
        Ok((
            self.apply_column_map(&left_m),
            self.apply_column_map(&right_m),
        ))
    }

    /// Only the `[s, 1]` segment of [`split`](Self::split).
    pub fn split_right(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(BezierError::InvalidSplit(s));
        }
        Ok(self.apply_column_map(&right_subdivision_matrix(self.degree(), s)))
    }

    /// New control point `i` is `sum_j map[i, j] * P_j`.
    fn apply_column_map(&self, map: &DMatrix<f64>) -> Self {
        let b = self.degree();
        let rows = self.n_rows();
        let mut out = DMatrix::zeros(rows, b + 1);
        for i in 0..=b {
            for r in 0..rows {
                let mut acc = map[(i, 0)] * self.coeffs[(r, 0)];
                for j in 1..=b {
                    acc += map[(i, j)] * self.coeffs[(r, j)];
                }
                out[(r, i)] = acc;
            }
        }
        Self::from_matrix_unchecked(out)
    }

    /// Least-squares fit of a degree-`degree` curve through `(tau, y)` samples.
    pub fn fit_least_squares(samples: &[(f64, Vec<f64>)], degree: usize) -> Result<Self> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(BezierError::UnsupportedDegree(degree));
        }
        let cols = degree + 1;
        if samples.len() < cols {
            return Err(BezierError::TooFewSamples {
                needed: cols,
                got: samples.len(),
            });
        }
        let n_rows = samples[0].1.len();
        if n_rows == 0 {
            return Err(BezierError::NoRows);
        }
        for (index, (tau, y)) in samples.iter().enumerate() {
            if !(0.0..=1.0).contains(tau) {
                return Err(BezierError::BadSample {
                    index,
                    reason: format!("phase {tau} outside [0, 1]"),
                });
            }
            if y.len() != n_rows {
                return Err(BezierError::BadSample {
                    index,
                    reason: format!("value has {} entries, expected {n_rows}", y.len()),
                });
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(BezierError::BadSample {
                    index,
                    reason: "non-finite value".into(),
                });
            }
        }
        let mut taus: Vec<f64> = samples.iter().map(|(t, _)| *t).collect();
        taus.sort_by(f64::total_cmp);
        if let Some(w) = taus.windows(2).find(|w| w[0] == w[1]) {
            let index = samples.iter().position(|(t, _)| *t == w[0]).unwrap_or(0);
            return Err(BezierError::BadSample {
                index,
                reason: format!("phase {} repeated", w[0]),
            });
        }

        let m = samples.len();
        let mut design = DMatrix::zeros(m, cols);
        let mut targets = DMatrix::zeros(m, n_rows);
        let mut basis = [0.0f64; BASIS_LEN];
        for (i, (tau, y)) in samples.iter().enumerate() {
            bernstein_basis(degree, *tau, &mut basis);
            for j in 0..cols {
                design[(i, j)] = basis[j];
            }
            for (r, v) in y.iter().enumerate() {
                targets[(i, r)] = *v;
            }
        }
        let svd = design.svd(true, true);
        let max_sv = svd.singular_values.max();
        let min_sv = svd.singular_values.min();
        let condition = if min_sv > 0.0 {
            max_sv / min_sv
        } else {
            f64::INFINITY
        };
        if !(condition < 1e12) {
            return Err(BezierError::RankDeficient { condition });
        }
        let solution = svd
            .solve(&targets, 0.0)
            .map_err(|_| BezierError::RankDeficient { condition })?;
        Self::new(solution.transpose())
    }
}

/// `out[i] = sum_j coeffs[i, j] * weights[j]`.
#[inline]
pub(crate) fn combine_columns(coeffs: &DMatrix<f64>, weights: &[f64], out: &mut [f64]) {
    let cols = weights.len();
    for (row, slot) in out.iter_mut().enumerate() {
        let mut acc = coeffs[(row, 0)] * weights[0];
        for j in 1..cols {
            acc += coeffs[(row, j)] * weights[j];
        }
        *slot = acc;
    }
}

/// Subdivision matrices `(L, R)` such that the control points of the left and
/// right halves of a split at `s` are `L * P` and `R * P` (control points
/// stacked as rows of `P`).
pub fn subdivision_matrices(degree: usize, s: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        left_subdivision_matrix(degree, s),
        right_subdivision_matrix(degree, s),
    )
}

fn powers(x: f64, degree: usize) -> [f64; BASIS_LEN] {
    let mut p = [1.0f64; BASIS_LEN];
    for j in 1..=degree {
        p[j] = p[j - 1] * x;
    }
    p
}

fn left_subdivision_matrix(degree: usize, s: f64) -> DMatrix<f64> {
    let s_pow = powers(s, degree);
    let u_pow = powers(1.0 - s, degree);
    let mut m = DMatrix::zeros(degree + 1, degree + 1);
    for i in 0..=degree {
        for j in 0..=i {
            m[(i, j)] = BINOMIAL[i][j] * s_pow[j] * u_pow[i - j];
        }
    }
    m
}

fn right_subdivision_matrix(degree: usize, s: f64) -> DMatrix<f64> {
    let s_pow = powers(s, degree);
    let u_pow = powers(1.0 - s, degree);
    let mut m = DMatrix::zeros(degree + 1, degree + 1);
    for i in 0..=degree {
        let n = degree - i;
        for k in 0..=n {
            m[(i, i + k)] = BINOMIAL[n][k] * s_pow[k] * u_pow[n - k];
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn de_casteljau(points: &[f64], t: f64) -> f64 {
        let mut p = points.to_vec();
        for level in (1..p.len()).rev() {
            for j in 0..level {
                p[j] = (1.0 - t) * p[j] + t * p[j + 1];
            }
        }
        p[0]
    }

    fn random_curve(rng: &mut impl Rng, rows: usize, degree: usize) -> BezierCurve {
        let data: Vec<f64> = (0..rows * (degree + 1))
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        BezierCurve::from_row_major(rows, degree, &data).unwrap()
    }

    fn row(curve: &BezierCurve, r: usize) -> Vec<f64> {
        curve.coeffs().row(r).iter().copied().collect()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(7, 3), 35.0);
        assert_eq!(binomial(15, 7), 6435.0);
        assert_eq!(binomial(0, 0), 1.0);
    }

    #[test]
    fn endpoints_are_control_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_curve(&mut rng, 4, 7);
        assert_eq!(c.eval(0.0).unwrap(), c.coeffs().column(0));
        assert_eq!(c.eval(1.0).unwrap(), c.coeffs().column(7));
    }

    #[test]
    fn constant_curve() {
        let c = BezierCurve::constant(&[1.5, -0.25], 7).unwrap();
        let v = c.eval(0.37).unwrap();
        assert!((v[0] - 1.5).abs() < 1e-15 && (v[1] + 0.25).abs() < 1e-15);
        assert_eq!(c.eval_derivative(0.37, 1).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn quadratic_bump() {
        let c = BezierCurve::from_row_major(1, 2, &[0.0, 1.0, 0.0]).unwrap();
        // 2 * 0.5 * 0.5 * 1
        assert_eq!(c.eval(0.5).unwrap()[0], 0.5);
    }

    #[test]
    fn phase_outside_unit_interval_rejected() {
        let c = BezierCurve::constant(&[0.0], 3).unwrap();
        assert_eq!(
            c.eval(1.0 + 1e-12),
            Err(BezierError::PhaseOutOfRange(1.0 + 1e-12))
        );
        assert!(c.eval(-0.1).is_err());
        assert!(c.eval(f64::NAN).is_err());
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            BezierCurve::new(DMatrix::zeros(0, 4)),
            Err(BezierError::NoRows)
        );
        assert_eq!(
            BezierCurve::new(DMatrix::zeros(2, 1)),
            Err(BezierError::UnsupportedDegree(0))
        );
        assert_eq!(
            BezierCurve::new(DMatrix::zeros(2, 17)),
            Err(BezierError::UnsupportedDegree(16))
        );
        let mut m = DMatrix::zeros(2, 3);
        m[(1, 2)] = f64::INFINITY;
        assert_eq!(
            BezierCurve::new(m),
            Err(BezierError::NonFinite { row: 1, col: 2 })
        );
    }

    #[test]
    fn linear_slope() {
        let c = BezierCurve::from_row_major(1, 1, &[0.0, 3.0]).unwrap();
        for tau in [0.0, 0.2, 1.0] {
            assert_eq!(c.eval_derivative(tau, 1).unwrap()[0], 3.0);
        }
        assert_eq!(c.eval_derivative(0.5, 2).unwrap()[0], 0.0);
        assert_eq!(c.eval_derivative(0.5, 0), Err(BezierError::ZeroOrder));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_curve(&mut rng, 3, 7);
        let h = 1e-6;
        let d = c.eval_derivative(0.3, 1).unwrap();
        let fd = (c.eval(0.3 + h).unwrap() - c.eval(0.3 - h).unwrap()) / (2.0 * h);
        for r in 0..3 {
            assert!((d[r] - fd[r]).abs() < 1e-6, "{} vs {}", d[r], fd[r]);
        }
        // second derivative against a difference of first derivatives
        let d2 = c.eval_derivative(0.3, 2).unwrap();
        let fd2 = (c.eval_derivative(0.3 + h, 1).unwrap() - c.eval_derivative(0.3 - h, 1).unwrap())
            / (2.0 * h);
        for r in 0..3 {
            assert!((d2[r] - fd2[r]).abs() < 1e-5);
        }
    }

    #[test]
    fn split_full_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_curve(&mut rng, 2, 7);
        let (left, right) = c.split(1.0).unwrap();
        assert_eq!(left, c);
        for j in 0..=7 {
            assert_eq!(right.coeffs().column(j), c.coeffs().column(7));
        }
    }

    #[test]
    fn split_at_zero_rejected() {
        let c = BezierCurve::constant(&[1.0], 7).unwrap();
        assert_eq!(c.split(0.0), Err(BezierError::InvalidSplit(0.0)));
        assert!(c.split(1.5).is_err());
        assert!(c.split_right(f64::NAN).is_err());
    }

    #[test]
    fn split_constant() {
        let c = BezierCurve::constant(&[2.0, -1.0], 7).unwrap();
        let (l, r) = c.split(0.5).unwrap();
        assert_eq!(l, r);
        for v in l.coeffs().iter() {
            assert!(*v == 2.0 || *v == -1.0);
        }
    }

    #[test]
    fn split_matches_de_casteljau() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_curve(&mut rng, 3, 7);
        let s = 0.3;
        let (left, right) = c.split(s).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let u: f64 = rng.gen();
            let l = left.eval(u).unwrap();
            let r = right.eval(u).unwrap();
            for k in 0..3 {
                let pts = row(&c, k);
                worst = worst.max((l[k] - de_casteljau(&pts, s * u)).abs());
                worst = worst.max((r[k] - de_casteljau(&pts, s + (1.0 - s) * u)).abs());
            }
        }
        assert!(worst <= 1e-10, "max error {worst}");
    }

    #[test]
    fn fit_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_curve(&mut rng, 4, 7);
        let samples: Vec<(f64, Vec<f64>)> = (0..50)
            .map(|i| {
                let tau = i as f64 / 49.0;
                (tau, c.eval(tau).unwrap().iter().copied().collect())
            })
            .collect();
        let fit = BezierCurve::fit_least_squares(&samples, 7).unwrap();
        let scale = c.coeffs().amax();
        for (a, b) in fit.coeffs().iter().zip(c.coeffs().iter()) {
            assert!((a - b).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn fit_constant() {
        let samples: Vec<(f64, Vec<f64>)> = (0..20)
            .map(|i| (i as f64 / 19.0, vec![0.75, -3.0]))
            .collect();
        let fit = BezierCurve::fit_least_squares(&samples, 7).unwrap();
        for j in 0..=7 {
            assert!((fit.coeffs()[(0, j)] - 0.75).abs() < 1e-12);
            assert!((fit.coeffs()[(1, j)] + 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_sine() {
        let samples: Vec<(f64, Vec<f64>)> = (0..100)
            .map(|i| {
                let tau = i as f64 / 99.0;
                (tau, vec![(std::f64::consts::PI * tau).sin()])
            })
            .collect();
        let fit = BezierCurve::fit_least_squares(&samples, 7).unwrap();
        let worst = samples
            .iter()
            .map(|(t, y)| (fit.eval(*t).unwrap()[0] - y[0]).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-4, "residual {worst}");
    }

    #[test]
    fn fit_errors() {
        let few: Vec<(f64, Vec<f64>)> = (0..5).map(|i| (i as f64 / 4.0, vec![0.0])).collect();
        assert_eq!(
            BezierCurve::fit_least_squares(&few, 7),
            Err(BezierError::TooFewSamples { needed: 8, got: 5 })
        );
        let dup: Vec<(f64, Vec<f64>)> =
            (0..10).map(|i| ((i / 2) as f64 / 5.0, vec![0.0])).collect();
        assert!(matches!(
            BezierCurve::fit_least_squares(&dup, 3),
            Err(BezierError::BadSample { .. })
        ));
        let out_of_range = vec![(1.5, vec![0.0]), (0.0, vec![0.0]), (0.5, vec![0.0])];
        assert!(BezierCurve::fit_least_squares(&out_of_range, 1).is_err());
    }

    #[test]
    fn fit_rank_deficient() {
        // distinct phases crowded into a tiny interval leave the basis ill-conditioned
        let samples: Vec<(f64, Vec<f64>)> = (0..16)
            .map(|i| (0.5 + i as f64 * 1e-9, vec![1.0]))
            .collect();
        match BezierCurve::fit_least_squares(&samples, 7) {
            Err(BezierError::RankDeficient { condition }) => assert!(condition > 1e12),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn matrix_eval_agrees_with_de_casteljau(
            degree in 1usize..=10,
            seed in any::<u64>(),
            tau in 0.0f64..=1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_curve(&mut rng, 2, degree);
            let v = c.eval(tau).unwrap();
            for r in 0..2 {
                let pts = row(&c, r);
                let scale = 1.0 + pts.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                prop_assert!((v[r] - de_casteljau(&pts, tau)).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn convex_hull(seed in any::<u64>(), tau in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_curve(&mut rng, 1, 7);
            let pts = row(&c, 0);
            let lo = pts.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let v = c.eval(tau).unwrap()[0];
            prop_assert!(v >= lo - 1e-14 && v <= hi + 1e-14);
        }

        #[test]
        fn split_consistency(seed in any::<u64>(), s in 0.001f64..0.999, u in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_curve(&mut rng, 3, 7);
            let (l, r) = c.split(s).unwrap();
            let tol = 1e-10 * (1.0 + c.coeffs().amax());
            let expect_l = c.eval(s * u).unwrap();
            let expect_r = c.eval(s + (1.0 - s) * u).unwrap();
            prop_assert!((l.eval(u).unwrap() - expect_l).amax() <= tol);
            prop_assert!((r.eval(u).unwrap() - expect_r).amax() <= tol);
        }

        #[test]
        fn affine_invariance(seed in any::<u64>(), tau in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_curve(&mut rng, 2, 7);
            let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            let t = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let mapped = BezierCurve::new(&a * c.coeffs() + DMatrix::from_fn(2, 8, |r, _| t[r])).unwrap();
            let lhs = mapped.eval(tau).unwrap();
            let rhs = &a * c.eval(tau).unwrap() + &t;
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }
    }
}
