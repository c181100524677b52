//! Published one-year rating data (ratings A, B, C, D) used as defaults,
//! CLI presets and test fixtures.

use crate::lie::basis_index_map;
use crate::matrix::SquareMatrix;
use crate::sde::SdeParams;

fn mat(rows: [[f64; 4]; 4]) -> SquareMatrix {
    SquareMatrix::from_rows(&rows).expect("4x4 literal")
}

pub const LABELS: [&str; 4] = ["A", "B", "C", "D"];

/// Illustrative one-year transition matrix.
pub fn example_one_year() -> SquareMatrix {
    mat([
        [0.9395, 0.0566, 0.0037, 2.7804e-04],
        [0.0092, 0.9680, 0.0211, 0.0017],
        [6.2064e-04, 0.0440, 0.8154, 0.1400],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// Aalen-Johansen one-year matrix the cohort example was derived from.
pub fn ground_truth_matrix() -> SquareMatrix {
    mat([
        [0.966712, 0.032916, 0.000349, 2.39e-05],
        [0.006511, 0.971356, 0.019862, 0.002272],
        [6.64e-06, 0.008567, 0.797138, 0.194288],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// Cohort matrix with withdrawals (rows sum to less than one).
pub fn cohort_matrix() -> SquareMatrix {
    mat([
        [0.87004, 0.032916, 0.000349, 2.39e-05],
        [0.006511, 0.777085, 0.019862, 0.001817],
        [6.64e-06, 0.006854, 0.717424, 0.15543],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// Published withdrawal column of [`cohort_matrix`].
pub const COHORT_WITHDRAWALS: [f64; 4] = [0.096671, 0.194726, 0.120285, 0.0];

/// Reconstruction of [`cohort_matrix`].
pub fn reconstructed_matrix() -> SquareMatrix {
    mat([
        [0.964507, 0.034213, 0.0006, 0.000677],
        [0.007204, 0.966306, 0.020473, 0.006023],
        [0.000458, 0.013529, 0.802318, 0.183695],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// Published entrywise distance between reconstruction and cohort matrix.
pub fn distance_table() -> SquareMatrix {
    mat([
        [0.0945, 0.0013, 2.5123e-04, 6.5335e-04],
        [6.9289e-04, 0.1892, 6.1092e-04, 0.0042],
        [4.5115e-04, 0.0067, 0.0849, 0.0283],
        [0.0, 0.0, 0.0, 0.0],
    ])
}

/// Published adjusted cohort matrix.
pub fn adjusted_table() -> SquareMatrix {
    mat([
        [0.9624, 0.0329, 3.4924e-04, 2.8275e-05],
        [0.0065, 0.9610, 0.0199, 0.0019],
        [8.3277e-06, 0.0072, 0.7773, 0.1621],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// Market-implied one-year default probabilities, three scenarios.
pub const PD_CASE_1: [f64; 4] = [0.0007, 0.0063, 0.1929, 1.0];
pub const PD_CASE_2: [f64; 4] = [0.0068, 0.0301, 0.1929, 1.0];
pub const PD_CASE_3: [f64; 4] = [0.0339, 0.1506, 0.4592, 1.0];

/// Calibrated historical parameters `(a, b, sigma)` in published row order.
///
/// The rows are printed with row-major labels `1-2, 1-3, ..., 3-4`, but only
/// the column-major reading `2-1, 3-1, 1-2, 3-2, 1-3, 2-3, 1-4, 2-4, 3-4`
/// reproduces the reconstructed matrix; see [`hist_params`].
pub const HIST_PARAMS: [(f64, f64, f64); 9] = [
    (1.57e+00, 4.69e-02, 5.76e-02),
    (1.62e+00, 8.83e-03, 1.15e-02),
    (1.53e+00, 2.05e-01, 3.22e-02),
    (1.54e+00, 6.91e-02, 9.68e-02),
    (1.44e+00, 3.14e-03, 5.75e-03),
    (1.46e+00, 9.98e-02, 9.50e-02),
    (7.87e-01, 1.42e-04, 1.10e-04),
    (5.76e-01, 1.00e-04, 1.00e-04),
    (1.51e+00, 6.42e-01, 5.10e-02),
];

/// Published free components `h_1..h_3` of the measure-change vector
/// (`h_4 = 1`) for the three default-probability scenarios.
pub const H_EXPONENTIAL: [[f64; 3]; 3] = [[0.33, 0.26, 0.66], [12.38, 3.07, 0.46], [198.29, 151.86, 13.73]];
pub const H_JLT: [[f64; 3]; 3] = [[0.12, 0.07, 0.49], [15.22, 6.20, 0.47], [21.76, 15.13, 31.66]];

/// Published objective values of the risk-neutral fits.
pub const RN_SSE_EXPONENTIAL: [f64; 3] = [1.057e-06, 2.569e-12, 2.780e-06];
pub const RN_SSE_JLT: [f64; 3] = [4.539e-16, 8.310e-08, 1.060e-03];

/// Rating-trigger thresholds (currency) per rating A, B, C, D.
pub const TRIGGER_THRESHOLDS: [f64; 4] = [10e6, 5e6, 0.0, 0.0];

/// Off-diagonal pairs (0-based) of a `k`-rating generator in column-major
/// order, skipping the default row.
pub fn column_major_pairs(k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity((k - 1) * (k - 1));
    for col in 0..k {
        for row in 0..k - 1 {
            if row != col {
                out.push((row, col));
            }
        }
    }
    out
}

/// [`HIST_PARAMS`] mapped onto the row-major coordinate basis.
pub fn hist_params() -> SdeParams {
    let map = basis_index_map(4).expect("K = 4");
    let mut triples = [(0.0, 0.0, 0.0); 9];
    for (r, (i, j)) in column_major_pairs(4).into_iter().enumerate() {
        triples[map.index_of(i, j).expect("off-diagonal pair")] = HIST_PARAMS[r];
    }
    SdeParams::from_triples(4, &triples).expect("published parameters are valid")
}
