//! The algebra of rating generators and the group of stochastic matrices.
//!
//! A generator lives in the cone of zero-row-sum matrices with nonnegative
//! off-diagonal entries and a zero last row (default is absorbing). It is
//! addressed by `(K-1)^2` nonnegative coordinates, one per off-diagonal entry
//! of the first `K-1` rows, in row-major order with the diagonal skipped.
//! Exponentials of generators are stochastic matrices whose last row is the
//! last unit vector.

use crate::error::{Error, Result};
use crate::matrix::{mul_into, SquareMatrix};

/// Tolerance for row sums of a generator handed to [`mat_exp`].
pub const GENERATOR_ROW_SUM_TOL: f64 = 1e-12;
/// Row-sum tolerance for matrices produced internally.
pub const INTERNAL_TOL: f64 = 1e-10;
/// Row-sum tolerance for matrices ingested from published tables.
pub const PUBLISHED_TOL: f64 = 1e-3;

/// Canonical ordering of generator coordinates.
///
/// Pairs are zero-based `(row, col)`; coordinate `0` is `(0, 1)`, i.e. the
/// A-to-B transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisIndexMap {
    k: usize,
    pairs: Vec<(usize, usize)>,
}

impl BasisIndexMap {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidDimension(format!("rating count must be at least 2, got {k}")));
        }
        let pairs = (0..k - 1)
            .flat_map(|row| (0..k).filter(move |&col| col != row).map(move |col| (row, col)))
            .collect();
        Ok(Self { k, pairs })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pair(&self, index: usize) -> (usize, usize) {
        self.pairs[index]
    }

    /// Inverse lookup; `None` for diagonal or last-row positions.
    pub fn index_of(&self, row: usize, col: usize) -> Option<usize> {
        if row + 1 >= self.k || col >= self.k || row == col {
            return None;
        }
        Some(row * (self.k - 1) + if col > row { col - 1 } else { col })
    }

    /// One-based `"from-to"` label, e.g. `"1-2"`.
    pub fn label(&self, index: usize) -> String {
        let (r, c) = self.pairs[index];
        format!("{}-{}", r + 1, c + 1)
    }
}

/// Convenience wrapper around [`BasisIndexMap::new`].
pub fn basis_index_map(k: usize) -> Result<BasisIndexMap> {
    BasisIndexMap::new(k)
}

/// Number of generator coordinates for `k` ratings.
#[inline]
pub fn coord_count(k: usize) -> usize {
    (k - 1) * (k - 1)
}

/// Coordinates of a generator in the canonical basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraCoeffs {
    k: usize,
    coeffs: Vec<f64>,
}

impl AlgebraCoeffs {
    pub fn new(k: usize, coeffs: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidDimension(format!("rating count must be at least 2, got {k}")));
        }
        if coeffs.len() != coord_count(k) {
            return Err(Error::DimensionMismatch {
                expected: coord_count(k),
                found: coeffs.len(),
            });
        }
        if let Some((i, c)) = coeffs.iter().enumerate().find(|(_, c)| !(**c >= 0.0) || !c.is_finite()) {
            return Err(Error::domain(format!(
                "coefficient {i} is {c}; generator coordinates must be finite and nonnegative"
            )));
        }
        Ok(Self { k, coeffs })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            coeffs: vec![0.0; coord_count(k)],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }
}

/// Assembles `sum_i c_i E_i`.
pub fn algebra_from_coeffs(c: &AlgebraCoeffs) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(c.k);
    fill_generator(m.as_mut_slice(), c.k, &c.coeffs);
    m
}

/// Writes the generator with coordinates `coeffs` into a row-major buffer.
/// Coordinates are not validated.
#[inline]
pub(crate) fn fill_generator(out: &mut [f64], k: usize, coeffs: &[f64]) {
    out.fill(0.0);
    let per_row = k - 1;
    for row in 0..k - 1 {
        let mut diag = 0.0;
        let src = &coeffs[row * per_row..(row + 1) * per_row];
        for (idx, &v) in src.iter().enumerate() {
            let col = if idx < row { idx } else { idx + 1 };
            out[row * k + col] = v;
            diag += v;
        }
        out[row * k + row] = -diag;
    }
}

/// Checks that `a` is a generator: zero row sums, nonnegative off-diagonals,
/// zero last row.
pub fn check_generator(a: &SquareMatrix) -> Result<()> {
    let k = a.dim();
    if k < 2 {
        return Err(Error::InvalidDimension(format!("generator must be at least 2x2, got {k}")));
    }
    for i in 0..k {
        let row = a.row(i);
        let scale = row.iter().map(|x| x.abs()).fold(1.0, f64::max);
        let sum: f64 = row.iter().sum();
        if !sum.is_finite() || sum.abs() > GENERATOR_ROW_SUM_TOL * scale {
            return Err(Error::domain(format!("row {i} of generator sums to {sum}, not 0")));
        }
        for (j, &v) in row.iter().enumerate() {
            if j != i && v < 0.0 {
                return Err(Error::domain(format!("off-diagonal entry ({i},{j}) = {v} is negative")));
            }
        }
    }
    if a.row(k - 1).iter().any(|&v| v != 0.0) {
        return Err(Error::domain("last row of a generator must be zero (absorbing default)"));
    }
    Ok(())
}

/// A row-stochastic matrix with absorbing last state.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix(SquareMatrix);

impl StochasticMatrix {
    /// Validates `m` at the given row-sum tolerance.
    pub fn new(m: SquareMatrix, tol: f64) -> Result<Self> {
        let report = validate_stochastic(&m, tol);
        if !report.passed {
            return Err(Error::domain(format!("not a stochastic matrix: {report}")));
        }
        Ok(Self(m))
    }

    pub fn identity(k: usize) -> Self {
        Self(SquareMatrix::identity(k))
    }

    pub fn k(&self) -> usize {
        self.0.dim()
    }

    pub fn as_matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> SquareMatrix {
        self.0
    }

    /// Group product, which stays in the group.
    pub fn compose(&self, rhs: &StochasticMatrix) -> Result<StochasticMatrix> {
        Ok(Self(self.0.matmul(&rhs.0)?))
    }

    pub fn default_column(&self) -> Vec<f64> {
        self.0.column(self.k() - 1)
    }
}

impl std::ops::Index<(usize, usize)> for StochasticMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Reusable buffers for [`expm_generator_into`].
#[derive(Debug, Clone)]
pub struct ExpWorkspace {
    shifted: Vec<f64>,
    term: Vec<f64>,
    tmp: Vec<f64>,
}

impl ExpWorkspace {
    pub fn new(k: usize) -> Self {
        Self {
            shifted: vec![0.0; k * k],
            term: vec![0.0; k * k],
            tmp: vec![0.0; k * k],
        }
    }
}

/// Exponential of a generator.
///
/// Scaling and squaring around a uniformized Taylor core: with
/// `lambda = max_i(-a_ii)` the shifted matrix `B = A + lambda I` is
/// nonnegative with constant row sums `lambda`, so
/// `exp(A) = e^{-lambda} exp(B)` is a sum of nonnegative terms. `B` is scaled
/// by `2^-s` until `lambda / 2^s <= 1/2`, the series is truncated once the
/// next term falls below `2^-56`, and the result is squared `s` times. Every
/// intermediate is nonnegative, so the output never has negative entries.
pub fn mat_exp(a: &SquareMatrix) -> Result<StochasticMatrix> {
    check_generator(a)?;
    let k = a.dim();
    let mut out = SquareMatrix::zeros(k);
    let mut ws = ExpWorkspace::new(k);
    expm_generator_into(out.as_mut_slice(), a.as_slice(), k, &mut ws);
    Ok(StochasticMatrix(out))
}

/// Unchecked hot-path version of [`mat_exp`] on row-major buffers.
pub(crate) fn expm_generator_into(out: &mut [f64], a: &[f64], k: usize, ws: &mut ExpWorkspace) {
    let lambda = (0..k).map(|i| -a[i * k + i]).fold(0.0_f64, f64::max);
    if lambda <= 0.0 {
        out.fill(0.0);
        for i in 0..k {
            out[i * k + i] = 1.0;
        }
        return;
    }

    let mut squarings = 0u32;
    let mut theta = lambda;
    while theta > 0.5 {
        theta *= 0.5;
        squarings += 1;
    }
    let scale = theta / lambda;

    // B / 2^s, nonnegative with row sums theta
    for i in 0..k {
        for j in 0..k {
            let v = a[i * k + j] * scale;
            ws.shifted[i * k + j] = if i == j { v + theta } else { v };
        }
    }

    // Taylor core: out = sum_m (B/2^s)^m / m!
    out.fill(0.0);
    ws.term.fill(0.0);
    for i in 0..k {
        out[i * k + i] = 1.0;
        ws.term[i * k + i] = 1.0;
    }
    let mut term_size = 1.0; // row sums of the current term
    for m in 1..=40 {
        mul_into(&mut ws.tmp, &ws.term, &ws.shifted, k);
        let inv = 1.0 / m as f64;
        for (t, &x) in ws.term.iter_mut().zip(&ws.tmp) {
            *t = x * inv;
        }
        for (o, &t) in out.iter_mut().zip(&ws.term) {
            *o += t;
        }
        term_size *= theta * inv;
        if term_size < f64::EPSILON / 16.0 {
            break;
        }
    }
    let damp = (-theta).exp();
    for o in out.iter_mut() {
        *o *= damp;
    }

    for _ in 0..squarings {
        mul_into(&mut ws.tmp, out, out, k);
        out.copy_from_slice(&ws.tmp);
    }

    // the last row of a generator is zero, so exp keeps e_K exactly
    let last = &mut out[(k - 1) * k..];
    last.fill(0.0);
    last[k - 1] = 1.0;
}

/// Exponential of an arbitrary square matrix (Padé scaling and squaring).
///
/// Used for verification where the argument is not a generator, e.g.
/// `exp(-A)`.
pub fn expm_general(a: &SquareMatrix) -> SquareMatrix {
    let n = a.dim();
    let m = nalgebra::DMatrix::from_row_slice(n, n, a.as_slice());
    let e = m.exp();
    let mut out = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = e[(i, j)];
        }
    }
    out
}

/// Commutator `AH - HA`.
pub fn ad(a: &SquareMatrix, h: &SquareMatrix) -> Result<SquareMatrix> {
    a.matmul(h)?.sub(&h.matmul(a)?)
}

/// Truncated series `sum_{m < terms} ad_{-A}^m(H) / (m+1)!`.
///
/// This is the factor in the directional derivative
/// `d/de exp(A + eH)|_0 = exp(A) L_{-A}(H)`.
pub fn dexp_l(a: &SquareMatrix, h: &SquareMatrix, terms: usize) -> Result<SquareMatrix> {
    a.check_same_dim(h)?;
    if terms == 0 {
        return Err(Error::domain("dexp_l needs at least one term"));
    }
    let neg_a = a.scale(-1.0);
    let mut ad_power = h.clone();
    let mut factorial = 1.0;
    let mut acc = h.clone();
    for m in 1..terms {
        ad_power = ad(&neg_a, &ad_power)?;
        factorial *= (m + 1) as f64;
        acc = acc.add(&ad_power.scale(1.0 / factorial))?;
    }
    Ok(acc)
}

/// Result of checking a candidate rating matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub tol: f64,
    /// `sum_j R_ij - 1` per row.
    pub row_sum_deviation: Vec<f64>,
    pub negative_entries: Vec<(usize, usize, f64)>,
    pub entries_above_one: Vec<(usize, usize, f64)>,
    /// Largest absolute deviation of the last row from `e_K`.
    pub absorbing_row_deviation: f64,
    pub passed: bool,
}

impl ValidationReport {
    pub fn max_row_sum_deviation(&self) -> f64 {
        self.row_sum_deviation.iter().map(|d| d.abs()).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max row-sum deviation {:.3e}, {} negative entries, {} entries above one, absorbing-row deviation {:.3e} (tol {:.1e})",
            self.max_row_sum_deviation(),
            self.negative_entries.len(),
            self.entries_above_one.len(),
            self.absorbing_row_deviation,
            self.tol
        )
    }
}

/// Reports row-sum, sign and absorbing-row violations; never fails.
pub fn validate_stochastic(r: &SquareMatrix, tol: f64) -> ValidationReport {
    let k = r.dim();
    let row_sum_deviation: Vec<f64> = r.row_sums().into_iter().map(|s| s - 1.0).collect();
    let mut negative_entries = Vec::new();
    let mut entries_above_one = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let v = r[(i, j)];
            if v < -tol || v.is_nan() {
                negative_entries.push((i, j, v));
            } else if v > 1.0 + tol {
                entries_above_one.push((i, j, v));
            }
        }
    }
    let absorbing_row_deviation = if k == 0 {
        0.0
    } else {
        r.row(k - 1)
            .iter()
            .enumerate()
            .map(|(j, &v)| (v - if j == k - 1 { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    };
    let passed = k >= 1
        && row_sum_deviation.iter().all(|d| d.abs() <= tol)
        && negative_entries.is_empty()
        && entries_above_one.is_empty()
        && absorbing_row_deviation <= tol;
    ValidationReport {
        tol,
        row_sum_deviation,
        negative_entries,
        entries_above_one,
        absorbing_row_deviation,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference_data;

    /// Plain Taylor series, no scaling: reference for small generators.
    fn taylor50(a: &SquareMatrix) -> SquareMatrix {
        let n = a.dim();
        let mut acc = SquareMatrix::identity(n);
        let mut term = SquareMatrix::identity(n);
        for m in 1..50 {
            term = term.matmul(a).unwrap().scale(1.0 / m as f64);
            acc = acc.add(&term).unwrap();
        }
        acc
    }

    fn m(rows: &[&[f64]]) -> SquareMatrix {
        SquareMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn basis_order_k4() {
        let map = basis_index_map(4).unwrap();
        let expected = [(0, 1), (0, 2), (0, 3), (1, 0), (1, 2), (1, 3), (2, 0), (2, 1), (2, 3)];
        assert_eq!(map.pairs(), &expected);
        assert_eq!(map.label(0), "1-2");
        assert_eq!(map.label(3), "2-1");
        assert_eq!(map.label(8), "3-4");
        for (i, &(r, c)) in expected.iter().enumerate() {
            assert_eq!(map.index_of(r, c), Some(i));
        }
        assert_eq!(map.index_of(1, 1), None);
        assert_eq!(map.index_of(3, 0), None);
    }

    #[test]
    fn basis_k2_and_invalid() {
        assert_eq!(basis_index_map(2).unwrap().pairs(), &[(0, 1)]);
        assert!(matches!(basis_index_map(1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn algebra_assembly() {
        assert_eq!(algebra_from_coeffs(&AlgebraCoeffs::zeros(4)), SquareMatrix::zeros(4));
        let lam = 0.7;
        let g = algebra_from_coeffs(&AlgebraCoeffs::new(2, vec![lam]).unwrap());
        assert_eq!(g, m(&[&[-lam, lam], &[0.0, 0.0]]));

        let mut e1 = vec![0.0; 9];
        e1[0] = 1.0;
        let g = algebra_from_coeffs(&AlgebraCoeffs::new(4, e1).unwrap());
        let mut expected = SquareMatrix::zeros(4);
        expected[(0, 1)] = 1.0;
        expected[(0, 0)] = -1.0;
        assert_eq!(g, expected);
    }

    #[test]
    fn negative_coefficient_is_domain_error() {
        let mut c = vec![0.1; 9];
        c[4] = -1e-3;
        assert!(matches!(AlgebraCoeffs::new(4, c), Err(Error::Domain(_))));
        assert!(AlgebraCoeffs::new(4, vec![0.0; 8]).is_err());
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(mat_exp(&SquareMatrix::zeros(4)).unwrap().into_matrix(), SquareMatrix::identity(4));
    }

    #[test]
    fn exp_two_state_closed_form() {
        let a = m(&[&[-1.0, 1.0], &[0.0, 0.0]]);
        let e = mat_exp(&a).unwrap();
        let em1 = (-1.0_f64).exp();
        assert!((e[(0, 0)] - em1).abs() < 1e-15);
        assert!((e[(0, 1)] - (1.0 - em1)).abs() < 1e-15);
        assert_eq!(e.as_matrix().row(1), &[0.0, 1.0]);
    }

    #[test]
    fn exp_matches_taylor_oracle_small_generators() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let c: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..0.3)).collect();
            let a = algebra_from_coeffs(&AlgebraCoeffs::new(4, c).unwrap());
            let e = mat_exp(&a).unwrap();
            let oracle = taylor50(&a);
            assert!(e.as_matrix().max_abs_diff(&oracle).unwrap() < 1e-13);
            let rep = validate_stochastic(e.as_matrix(), 1e-12);
            assert!(rep.passed, "{rep}");
        }
    }

    #[test]
    fn exp_matches_pade_for_large_generators() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let c: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..5.0)).collect();
            let a = algebra_from_coeffs(&AlgebraCoeffs::new(4, c).unwrap());
            let e = mat_exp(&a).unwrap();
            let pade = expm_general(&a);
            assert!(e.as_matrix().max_abs_diff(&pade).unwrap() < 1e-11);
        }
    }

    #[test]
    fn exp_rejects_non_generators() {
        let a = m(&[&[-1.0, 0.5], &[0.0, 0.0]]);
        assert!(matches!(mat_exp(&a), Err(Error::Domain(_))));
        let a = m(&[&[-1.0, 1.0], &[0.5, -0.5]]);
        assert!(matches!(mat_exp(&a), Err(Error::Domain(_))));
        let a = m(&[&[1.0, -1.0], &[0.0, 0.0]]);
        assert!(matches!(mat_exp(&a), Err(Error::Domain(_))));
    }

    #[test]
    fn commutator_cases() {
        let a = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let h = m(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(ad(&a, &h).unwrap(), m(&[&[1.0, 0.0], &[0.0, -1.0]]));
        assert_eq!(ad(&a, &a).unwrap(), SquareMatrix::zeros(2));
        assert_eq!(ad(&SquareMatrix::identity(2), &h).unwrap(), SquareMatrix::zeros(2));
        assert!(ad(&a, &SquareMatrix::identity(3)).is_err());
    }

    #[test]
    fn dexp_trivial_cases() {
        let h = m(&[&[0.3, -0.1], &[0.2, 0.5]]);
        assert_eq!(dexp_l(&SquareMatrix::zeros(2), &h, 10).unwrap(), h);
        // powers of the same matrix commute
        let a = m(&[&[-1.0, 1.0], &[0.0, 0.0]]);
        let a2 = a.matmul(&a).unwrap();
        let l = dexp_l(&a, &a2, 15).unwrap();
        assert!(l.max_abs_diff(&a2).unwrap() < 1e-15);
        assert!(dexp_l(&a, &h, 0).is_err());
    }

    #[test]
    fn dexp_matches_finite_difference_2x2() {
        let a = m(&[&[0.2, -0.4], &[0.3, 0.1]]);
        let h = m(&[&[0.5, 0.1], &[-0.2, 0.7]]);
        let eps = 1e-6;
        let fd = expm_general(&a.add(&h.scale(eps)).unwrap())
            .sub(&expm_general(&a))
            .unwrap()
            .scale(1.0 / eps);
        let oracle = expm_general(&a.scale(-1.0)).matmul(&fd).unwrap();
        let l = dexp_l(&a, &h, 20).unwrap();
        assert!(l.max_abs_diff(&oracle).unwrap() < 1e-6);
    }

    #[test]
    fn published_one_year_matrix_validates() {
        let t1 = reference_data::example_one_year();
        assert!(validate_stochastic(&t1, PUBLISHED_TOL).passed);
        assert!(validate_stochastic(&SquareMatrix::identity(4), INTERNAL_TOL).passed);
        let cohort = reference_data::cohort_matrix();
        let rep = validate_stochastic(&cohort, PUBLISHED_TOL);
        assert!(!rep.passed);
        assert!(rep.row_sum_deviation[0] < -0.09);
    }
}
