//! Repair of cohort matrices whose rows lose mass to withdrawals, and the
//! distance/adjustment quantities that turn the repair into a variance target.

use crate::error::{Error, Result};
use crate::lie::{StochasticMatrix, INTERNAL_TOL};
use crate::matrix::SquareMatrix;

const ROW_SUM_SLACK: f64 = 1e-9;

/// A transition matrix estimated by the cohort method: rows may sum to less
/// than one.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMatrix(SquareMatrix);

impl CohortMatrix {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        let k = m.dim();
        if k < 2 {
            return Err(Error::InvalidDimension(format!("cohort matrix must be at least 2x2, got {k}")));
        }
        for i in 0..k {
            for (j, &v) in m.row(i).iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::domain(format!("cohort entry ({i},{j}) = {v} outside [0,1]")));
                }
            }
            let s: f64 = m.row(i).iter().sum();
            if s > 1.0 + ROW_SUM_SLACK {
                return Err(Error::domain(format!("cohort row {i} sums to {s} > 1")));
            }
        }
        let last = m.row(k - 1);
        if last[k - 1] != 1.0 || last[..k - 1].iter().any(|&v| v != 0.0) {
            return Err(Error::domain("last cohort row must be the default unit vector"));
        }
        Ok(Self(m))
    }

    pub fn k(&self) -> usize {
        self.0.dim()
    }

    pub fn as_matrix(&self) -> &SquareMatrix {
        &self.0
    }
}

/// Unnormalized, strictly positive redistribution weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(SquareMatrix);

impl WeightMatrix {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        for i in 0..m.dim() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::domain(format!("weight ({i},{j}) = {v} must be positive")));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn as_matrix(&self) -> &SquareMatrix {
        &self.0
    }
}

/// Source of redistribution weights for a cohort matrix.
pub trait WeightProvider {
    fn weights(&self, cohort: &CohortMatrix) -> Result<WeightMatrix>;
}

/// Spreads each row's withdrawal mass evenly.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformWeights;

impl WeightProvider for UniformWeights {
    fn weights(&self, cohort: &CohortMatrix) -> Result<WeightMatrix> {
        let k = cohort.k();
        WeightMatrix::new(SquareMatrix::from_row_major(k, vec![1.0; k * k])?)
    }
}

/// Spreads withdrawal mass in proportion to the surviving entries of the row.
///
/// Zero entries get weight `floor` so the weights stay strictly positive.
#[derive(Debug, Clone, Copy)]
pub struct ProportionalWeights {
    pub floor: f64,
}

impl Default for ProportionalWeights {
    fn default() -> Self {
        Self { floor: 1e-12 }
    }
}

impl WeightProvider for ProportionalWeights {
    fn weights(&self, cohort: &CohortMatrix) -> Result<WeightMatrix> {
        WeightMatrix::new(cohort.as_matrix().map(|v| v.max(self.floor)))
    }
}

/// Fixed weights, e.g. loaded from a file or produced by an external model.
#[derive(Debug, Clone)]
pub struct FixedWeights(pub WeightMatrix);

impl WeightProvider for FixedWeights {
    fn weights(&self, cohort: &CohortMatrix) -> Result<WeightMatrix> {
        cohort.as_matrix().check_same_dim(self.0.as_matrix())?;
        Ok(self.0.clone())
    }
}

/// `w_i = 1 - sum_j R_ij`.
pub fn withdrawal_rates(r: &CohortMatrix) -> Vec<f64> {
    r.as_matrix().row_sums().into_iter().map(|s| (1.0 - s).max(0.0)).collect()
}

/// `R + w_i * F_ij / sum_j F_ij`; rows sum to one by construction.
pub fn reconstruct(r: &CohortMatrix, f: &WeightMatrix) -> Result<StochasticMatrix> {
    let k = r.k();
    r.as_matrix().check_same_dim(f.as_matrix())?;
    let w = withdrawal_rates(r);
    let mut out = r.as_matrix().clone();
    for i in 0..k {
        let frow = f.as_matrix().row(i);
        let total: f64 = frow.iter().sum();
        for (j, &fij) in frow.iter().enumerate() {
            out[(i, j)] += w[i] * fij / total;
        }
    }
    StochasticMatrix::new(out, INTERNAL_TOL)
}

/// Applies [`reconstruct`] to each slice of a time series independently.
pub fn reconstruct_series(slices: &[CohortMatrix], provider: &dyn WeightProvider) -> Result<Vec<StochasticMatrix>> {
    slices.iter().map(|c| reconstruct(c, &provider.weights(c)?)).collect()
}

/// Entrywise `|R_rec - R_cohort|`.
pub fn distance_matrix(r_rec: &SquareMatrix, r_cohort: &SquareMatrix) -> Result<SquareMatrix> {
    r_rec.zip_with(r_cohort, |a, b| (a - b).abs())
}

/// Adjusted cohort matrix `R_cohort + rho ⊙ D`, where `D` is the distance
/// matrix, `eta_i` its row sums and `rho_ij = D_ij / eta_i` (zero rows stay
/// zero).
pub fn adjusted_matrix(r_cohort: &SquareMatrix, r_rec: &SquareMatrix) -> Result<SquareMatrix> {
    let d = distance_matrix(r_rec, r_cohort)?;
    let mut out = r_cohort.clone();
    for i in 0..d.dim() {
        let eta: f64 = d.row(i).iter().sum();
        if eta > 0.0 {
            for j in 0..d.dim() {
                let dij = d[(i, j)];
                out[(i, j)] += dij / eta * dij;
            }
        }
    }
    Ok(out)
}

/// Two-point variance target `(R_rec - R_adj)^2`, entrywise.
pub fn uncertainty_target(r_rec: &SquareMatrix, r_adj: &SquareMatrix) -> Result<SquareMatrix> {
    r_rec.zip_with(r_adj, |a, b| (a - b) * (a - b))
}
