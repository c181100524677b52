//! Least-squares calibration of the rating SDE.
//!
//! Historical: fit `(a, b, sigma)` so that the simulated one-year mean
//! matches the reconstructed matrix and the simulated variance matches the
//! two-point variance target. Risk-neutral: with `(a, b, sigma)` fixed, fit
//! the measure-change vector `h` to market default probabilities. Both
//! objectives evaluate on a frozen Brownian tensor (common random numbers),
//! so they are deterministic functions of the parameters.

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::lie::StochasticMatrix;
use crate::lm::{self, LmOptions, LmStatus};
use crate::matrix::SquareMatrix;
use crate::sde::{
    kappa_from_h, sample_mean, sample_variance, simulate_snapshots, BrownianTensor, MeasureChange, MeasureKind, SdeParams, TimeGrid,
};

/// Default starting point for the historical fit.
pub const DEFAULT_START: (f64, f64, f64) = (1.5, 0.1, 0.05);
/// Default box for every historical parameter.
pub const DEFAULT_BOUNDS: (f64, f64) = (0.0, 3.0);

#[derive(Debug, Clone)]
pub struct HistCalibrationSpec {
    /// Reconstructed matrix at the calibration horizon (mean target).
    pub target: StochasticMatrix,
    /// Adjusted cohort matrix; `(target - adjusted)^2` is the variance target.
    pub adjusted: SquareMatrix,
    pub w1: f64,
    pub w2: f64,
    pub trajectories: usize,
    pub seed: u64,
    pub grid: TimeGrid,
    /// Calibration time, a grid point (default: the grid horizon).
    pub at: f64,
    /// Bounds on the stacked vector `[a..., b..., sigma...]`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub start: SdeParams,
    pub max_iter: usize,
}

impl HistCalibrationSpec {
    /// Spec with default weights, bounds and start point.
    pub fn new(target: StochasticMatrix, adjusted: SquareMatrix, grid: TimeGrid, trajectories: usize, seed: u64) -> Result<Self> {
        let k = target.k();
        target.as_matrix().check_same_dim(&adjusted)?;
        let start = SdeParams::uniform(k, DEFAULT_START.0, DEFAULT_START.1, DEFAULT_START.2)?;
        let n = 3 * start.n_coords();
        Ok(Self {
            target,
            adjusted,
            w1: 1.0,
            w2: 1.0,
            trajectories,
            seed,
            at: grid.horizon(),
            grid,
            lower: vec![DEFAULT_BOUNDS.0; n],
            upper: vec![DEFAULT_BOUNDS.1; n],
            start,
            max_iter: 100,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w1 > 0.0 && self.w2 > 0.0) {
            return Err(Error::domain("calibration weights must be positive"));
        }
        if self.trajectories < 2 {
            return Err(Error::domain("variance target needs at least two trajectories"));
        }
        let n = 3 * self.start.n_coords();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.lower.len().min(self.upper.len()),
            });
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(*l >= 0.0) || l > u) {
            return Err(Error::domain("bounds must satisfy 0 <= lower <= upper"));
        }
        self.grid.index_of(self.at)?;
        self.target.as_matrix().check_same_dim(&self.adjusted)?;
        Ok(())
    }

    pub fn variance_target(&self) -> Result<SquareMatrix> {
        crate::cohort::uncertainty_target(self.target.as_matrix(), &self.adjusted)
    }
}

/// Historical objective bound to one frozen Brownian tensor.
pub struct HistObjective<'a> {
    spec: &'a HistCalibrationSpec,
    tensor: BrownianTensor,
    step: usize,
    var_target: SquareMatrix,
    exec: Executor,
}

impl<'a> HistObjective<'a> {
    pub fn new(spec: &'a HistCalibrationSpec, exec: Executor) -> Result<Self> {
        spec.validate()?;
        let tensor = BrownianTensor::generate(spec.seed, spec.trajectories, spec.start.n_coords(), spec.grid.steps(), exec);
        Ok(Self {
            step: spec.grid.index_of(spec.at)?,
            var_target: spec.variance_target()?,
            spec,
            tensor,
            exec,
        })
    }

    /// Simulated mean and variance at the calibration time.
    pub fn moments(&self, p: &SdeParams) -> Result<(SquareMatrix, SquareMatrix)> {
        let zero = vec![0.0; p.n_coords()];
        let snaps = simulate_snapshots(p, &zero, &self.spec.grid, &self.tensor, &[self.step], self.exec)?;
        let mats: Vec<SquareMatrix> = snaps.into_iter().map(|mut v| v.swap_remove(0)).collect();
        Ok((sample_mean(&mats)?, sample_variance(&mats)?))
    }

    /// `[w1 vec(mean - target), w2 vec(var - (target - adjusted)^2)]`,
    /// row-major.
    pub fn residual(&self, p: &SdeParams) -> Result<Vec<f64>> {
        let (mean, var) = self.moments(p)?;
        let mut out = Vec::with_capacity(2 * mean.as_slice().len());
        out.extend(
            mean.as_slice()
                .iter()
                .zip(self.spec.target.as_matrix().as_slice())
                .map(|(m, t)| self.spec.w1 * (m - t)),
        );
        out.extend(
            var.as_slice()
                .iter()
                .zip(self.var_target.as_slice())
                .map(|(v, t)| self.spec.w2 * (v - t)),
        );
        Ok(out)
    }
}

/// Stacked historical residual for `p` (builds the frozen tensor from
/// `spec.seed`).
pub fn hist_residual(p: &SdeParams, spec: &HistCalibrationSpec, exec: Executor) -> Result<Vec<f64>> {
    HistObjective::new(spec, exec)?.residual(p)
}

#[derive(Debug, Clone)]
pub struct HistCalibration {
    pub params: SdeParams,
    pub sse: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LmStatus,
    /// Set when the optimizer did not converge or parameters ended on a bound.
    pub warning: Option<String>,
}

fn warning_for(status: LmStatus, at_bound: bool) -> Option<String> {
    match (status.converged(), at_bound) {
        (true, false) => None,
        (false, false) => Some("maximum iterations reached; returning best parameters found".into()),
        (true, true) => Some("parameters saturated at a bound".into()),
        (false, true) => Some("maximum iterations reached with parameters at a bound".into()),
    }
}

pub fn calibrate_historical(spec: &HistCalibrationSpec, exec: Executor) -> Result<HistCalibration> {
    let objective = HistObjective::new(spec, exec)?;
    let mut opts = LmOptions::bounded(spec.lower.clone(), spec.upper.clone());
    opts.max_iter = spec.max_iter;
    let f = |x: &[f64]| objective.residual(&spec.start.with_vector(x)?);
    let rep = lm::minimize(f, &spec.start.to_vector(), &opts)?;
    let warning = warning_for(rep.status, rep.any_at_bound());
    Ok(HistCalibration {
        params: spec.start.with_vector(&rep.x)?,
        sse: rep.cost,
        iterations: rep.iterations,
        evaluations: rep.evaluations,
        warning,
        status: rep.status,
    })
}

/// Target default probabilities per initial rating; the last entry is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PdTargets(Vec<f64>);

impl PdTargets {
    pub fn new(pd: Vec<f64>) -> Result<Self> {
        if pd.len() < 2 {
            return Err(Error::InvalidDimension("need at least two ratings".into()));
        }
        if pd.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("default probabilities must lie in [0,1]"));
        }
        if *pd.last().unwrap() != 1.0 {
            return Err(Error::domain("default probability of the default state must be 1"));
        }
        Ok(Self(pd))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }
}

/// Mean default column at `grid.horizon()` minus the targets, for
/// `h = (h_free, 1)`.
pub fn rn_residual(
    h_free: &[f64],
    p: &SdeParams,
    kind: MeasureKind,
    targets: &PdTargets,
    grid: &TimeGrid,
    tensor: &BrownianTensor,
    exec: Executor,
) -> Result<Vec<f64>> {
    let k = p.k();
    if targets.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: targets.k(),
        });
    }
    let m = MeasureChange::from_free(kind, h_free)?;
    let kappa = kappa_from_h(&m, k)?;
    let snaps = simulate_snapshots(p, &kappa, grid, tensor, &[grid.steps()], exec)?;
    let mats: Vec<SquareMatrix> = snaps.into_iter().map(|mut v| v.swap_remove(0)).collect();
    let mean = sample_mean(&mats)?;
    Ok((0..k).map(|i| mean[(i, k - 1)] - targets.as_slice()[i]).collect())
}

#[derive(Debug, Clone)]
pub struct RnCalibrationSpec {
    pub params: SdeParams,
    pub kind: MeasureKind,
    pub targets: PdTargets,
    pub grid: TimeGrid,
    pub trajectories: usize,
    pub seed: u64,
    /// Bounds and start for `h_1..h_{K-1}`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub start: Vec<f64>,
    pub max_iter: usize,
}

impl RnCalibrationSpec {
    /// Start at `h = 1`; positivity bounds for the exponential kind.
    pub fn new(params: SdeParams, kind: MeasureKind, targets: PdTargets, grid: TimeGrid, trajectories: usize, seed: u64) -> Self {
        let n = params.k() - 1;
        let (lo, hi) = match kind {
            MeasureKind::Exponential => (1e-6, 1e4),
            _ => (-1e4, 1e4),
        };
        Self {
            params,
            kind,
            targets,
            grid,
            trajectories,
            seed,
            lower: vec![lo; n],
            upper: vec![hi; n],
            start: vec![1.0; n],
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RnCalibration {
    pub measure: MeasureChange,
    pub sse: f64,
    pub residual: Vec<f64>,
    pub iterations: usize,
    pub status: LmStatus,
    pub warning: Option<String>,
}

pub fn calibrate_risk_neutral(spec: &RnCalibrationSpec, exec: Executor) -> Result<RnCalibration> {
    if spec.kind == MeasureKind::Historical {
        return Err(Error::domain("the historical measure has no parameters to calibrate"));
    }
    if spec.trajectories == 0 {
        return Err(Error::domain("at least one trajectory is required"));
    }
    let tensor = BrownianTensor::generate(spec.seed, spec.trajectories, spec.params.n_coords(), spec.grid.steps(), exec);
    let mut opts = LmOptions::bounded(spec.lower.clone(), spec.upper.clone());
    opts.max_iter = spec.max_iter;
    opts.ftol = 1e-12;
    let f = |h: &[f64]| rn_residual(h, &spec.params, spec.kind, &spec.targets, &spec.grid, &tensor, exec);
    let rep = lm::minimize(f, &spec.start, &opts)?;
    let warning = warning_for(rep.status, rep.any_at_bound());
    Ok(RnCalibration {
        measure: MeasureChange::from_free(spec.kind, &rep.x)?,
        sse: rep.cost,
        residual: rep.residual,
        iterations: rep.iterations,
        warning,
        status: rep.status,
    })
}
