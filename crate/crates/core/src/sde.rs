//! Coefficient SDEs in the generator algebra, measure changes, and the
//! geometric Euler-Maruyama scheme for the rating-matrix process.
//!
//! Each generator coordinate `i` follows
//!
//! ```text
//! dA^i = |Y^i|^{a_i} dt,    dY^i = (b_i + sigma_i kappa_i) dt + sigma_i dW^i
//! ```
//!
//! with independent Brownian drivers (`kappa = 0` under the historical
//! measure). On each grid interval the scheme takes the left-point increment
//! `dA^i_k = |Y^i_k|^{a_i} dt`, assembles the generator increment and
//! multiplies `R_{k+1} = R_k exp(dA_k)`, so every `R_k` is stochastic.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::lie::{coord_count, expm_generator_into, fill_generator, BasisIndexMap, ExpWorkspace};
use crate::matrix::{mul_into, SquareMatrix};
use crate::rng;

/// Per-coordinate exponent, drift and volatility.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeParams {
    k: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
    pub y0: Vec<f64>,
}

impl SdeParams {
    pub fn new(k: usize, a: Vec<f64>, b: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidDimension(format!("rating count must be at least 2, got {k}")));
        }
        let n = coord_count(k);
        let p = Self {
            k,
            a,
            b,
            sigma,
            y0: vec![0.0; n],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_triples(k: usize, triples: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            k,
            triples.iter().map(|t| t.0).collect(),
            triples.iter().map(|t| t.1).collect(),
            triples.iter().map(|t| t.2).collect(),
        )
    }

    pub fn uniform(k: usize, a: f64, b: f64, sigma: f64) -> Result<Self> {
        let n = coord_count(k);
        Self::new(k, vec![a; n], vec![b; n], vec![sigma; n])
    }

    pub fn with_y0(mut self, y0: Vec<f64>) -> Result<Self> {
        self.y0 = y0;
        self.validate()?;
        Ok(self)
    }

    /// Stacked parameter vector `[a..., b..., sigma...]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.a.clone();
        v.extend_from_slice(&self.b);
        v.extend_from_slice(&self.sigma);
        v
    }

    /// Inverse of [`SdeParams::to_vector`]; keeps `y0` from `self`.
    pub fn with_vector(&self, v: &[f64]) -> Result<Self> {
        let n = self.n_coords();
        if v.len() != 3 * n {
            return Err(Error::DimensionMismatch {
                expected: 3 * n,
                found: v.len(),
            });
        }
        let p = Self {
            k: self.k,
            a: v[..n].to_vec(),
            b: v[n..2 * n].to_vec(),
            sigma: v[2 * n..].to_vec(),
            y0: self.y0.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_coords(&self) -> usize {
        coord_count(self.k)
    }

    fn validate(&self) -> Result<()> {
        let n = coord_count(self.k);
        for (name, v) in [("a", &self.a), ("b", &self.b), ("sigma", &self.sigma), ("y0", &self.y0)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                });
            }
            if name != "y0" {
                if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0) || !x.is_finite()) {
                    return Err(Error::domain(format!("{name}[{i}] = {x} must be finite and nonnegative")));
                }
            } else if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::domain("y0 must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasureKind {
    /// No change of measure.
    Historical,
    /// One parameter per row: `kappa_ij = h_i`.
    Jlt,
    /// Ratios: `kappa_ij = h_i / h_j`.
    Exponential,
}

impl MeasureKind {
    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::Historical => "historical",
            MeasureKind::Jlt => "jlt",
            MeasureKind::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for MeasureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "historical" | "p" => Ok(MeasureKind::Historical),
            "jlt" => Ok(MeasureKind::Jlt),
            "exponential" | "exp" => Ok(MeasureKind::Exponential),
            other => Err(Error::domain(format!("unknown measure kind '{other}'"))),
        }
    }
}

/// Girsanov measure change parametrized by `h` with `h_K = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureChange {
    pub kind: MeasureKind,
    h: Vec<f64>,
}

impl MeasureChange {
    pub fn new(kind: MeasureKind, h: Vec<f64>) -> Result<Self> {
        if h.len() < 2 {
            return Err(Error::InvalidDimension(format!("h needs at least 2 entries, got {}", h.len())));
        }
        if *h.last().unwrap() != 1.0 {
            return Err(Error::domain("last entry of h must be 1"));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("h must be finite"));
        }
        if kind == MeasureKind::Exponential && h.contains(&0.0) {
            return Err(Error::domain("exponential change of measure needs nonzero h"));
        }
        Ok(Self { kind, h })
    }

    /// Builds `h = (free..., 1)`.
    pub fn from_free(kind: MeasureKind, free: &[f64]) -> Result<Self> {
        let mut h = free.to_vec();
        h.push(1.0);
        Self::new(kind, h)
    }

    pub fn historical(k: usize) -> Self {
        Self {
            kind: MeasureKind::Historical,
            h: vec![1.0; k],
        }
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn k(&self) -> usize {
        self.h.len()
    }
}

/// Girsanov kernel per generator coordinate.
pub fn kappa_from_h(m: &MeasureChange, k: usize) -> Result<Vec<f64>> {
    if m.k() != k {
        return Err(Error::DimensionMismatch { expected: k, found: m.k() });
    }
    let map = BasisIndexMap::new(k)?;
    let h = m.h();
    map.pairs()
        .iter()
        .map(|&(i, j)| match m.kind {
            MeasureKind::Historical => Ok(0.0),
            MeasureKind::Jlt => Ok(h[i]),
            MeasureKind::Exponential => {
                if h[j] == 0.0 {
                    Err(Error::domain(format!("h[{j}] = 0 in exponential change of measure")))
                } else {
                    Ok(h[i] / h[j])
                }
            }
        })
        .collect()
}

/// Homogeneous time grid `t_i = i * horizon / steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("time grid needs at least one step"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon, steps })
    }

    /// Grid with `steps_per_year` points per unit of time.
    pub fn with_rate(horizon: f64, steps_per_year: usize) -> Result<Self> {
        let steps = (horizon * steps_per_year as f64).round() as usize;
        Self::new(horizon, steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    /// Grid index of `t`; errors for times off the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt();
        let i = x.round();
        if !(i >= 0.0) || i > self.steps as f64 || (x - i).abs() > 1e-9 * x.abs().max(1.0) {
            return Err(Error::OffGrid(t));
        }
        Ok(i as usize)
    }
}

/// Frozen standard normal draws `Z[traj][coord][step]`.
///
/// Reusing one tensor across objective evaluations gives common random
/// numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianTensor {
    trajectories: usize,
    coords: usize,
    steps: usize,
    seed: u64,
    z: Vec<f64>,
}

impl BrownianTensor {
    pub fn generate(seed: u64, trajectories: usize, coords: usize, steps: usize, exec: Executor) -> Self {
        let per_traj = exec.map(trajectories, |m| {
            let mut out = Vec::with_capacity(coords * steps);
            for c in 0..coords {
                let mut r = rng::stream(seed, "brownian", &[m as u64, c as u64]);
                out.extend((0..steps).map(|_| -> f64 { StandardNormal.sample(&mut r) }));
            }
            out
        });
        Self {
            trajectories,
            coords,
            steps,
            seed,
            z: per_traj.concat(),
        }
    }

    pub fn trajectories(&self) -> usize {
        self.trajectories
    }

    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Normals of one trajectory, `[coord][step]`.
    pub fn trajectory(&self, m: usize) -> &[f64] {
        let len = self.coords * self.steps;
        &self.z[m * len..(m + 1) * len]
    }

    /// Brownian increments `sqrt(dt) Z` of one trajectory, `[coord][step]`.
    pub fn increments(&self, m: usize, grid: &TimeGrid) -> Vec<f64> {
        let s = grid.dt().sqrt();
        self.trajectory(m).iter().map(|z| z * s).collect()
    }
}

/// Simulated matrix trajectories with their generator increments and
/// coefficient paths.
#[derive(Debug, Clone)]
pub struct MatrixPathBundle {
    k: usize,
    grid: TimeGrid,
    trajectories: usize,
    params: SdeParams,
    measure: MeasureChange,
    /// `[traj][step 0..=N][K*K]`
    r: Vec<f64>,
    /// `[traj][step 0..N][coord]`
    increments: Vec<f64>,
    /// `[traj][step 0..=N][coord]`
    y: Vec<f64>,
    brownian: BrownianTensor,
}

impl MatrixPathBundle {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn trajectories(&self) -> usize {
        self.trajectories
    }

    pub fn seed(&self) -> u64 {
        self.brownian.seed
    }

    pub fn params(&self) -> &SdeParams {
        &self.params
    }

    pub fn measure(&self) -> &MeasureChange {
        &self.measure
    }

    pub fn brownian(&self) -> &BrownianTensor {
        &self.brownian
    }

    fn kk(&self) -> usize {
        self.k * self.k
    }

    /// Row-major `R` of trajectory `m` at grid index `step`.
    pub fn r_slice(&self, m: usize, step: usize) -> &[f64] {
        let kk = self.kk();
        let base = (m * (self.grid.steps() + 1) + step) * kk;
        &self.r[base..base + kk]
    }

    pub fn r_at(&self, m: usize, step: usize) -> SquareMatrix {
        SquareMatrix::from_row_major(self.k, self.r_slice(m, step).to_vec()).expect("stored K*K")
    }

    /// Generator coordinates `dA` applied over `[t_step, t_{step+1})`.
    pub fn increments(&self, m: usize, step: usize) -> &[f64] {
        let c = coord_count(self.k);
        let base = (m * self.grid.steps() + step) * c;
        &self.increments[base..base + c]
    }

    pub fn y(&self, m: usize, step: usize) -> &[f64] {
        let c = coord_count(self.k);
        let base = (m * (self.grid.steps() + 1) + step) * c;
        &self.y[base..base + c]
    }

    /// Likelihood ratio of trajectory `m` for a constant kernel `kappa`.
    pub fn density(&self, m: usize, kappa: &[f64]) -> Result<f64> {
        girsanov_density(kappa, &self.brownian.increments(m, &self.grid), &self.grid)
    }
}

struct TrajectoryBuffers {
    r: Vec<f64>,
    next: Vec<f64>,
    gen: Vec<f64>,
    step_exp: Vec<f64>,
    y: Vec<f64>,
    incr: Vec<f64>,
    ws: ExpWorkspace,
}

impl TrajectoryBuffers {
    fn new(k: usize, y0: &[f64]) -> Self {
        let mut r = vec![0.0; k * k];
        for i in 0..k {
            r[i * k + i] = 1.0;
        }
        Self {
            r,
            next: vec![0.0; k * k],
            gen: vec![0.0; k * k],
            step_exp: vec![0.0; k * k],
            y: y0.to_vec(),
            incr: vec![0.0; y0.len()],
            ws: ExpWorkspace::new(k),
        }
    }
}

/// Drift of `Y` under the measure with kernel `kappa`: `b + sigma * kappa`.
pub fn shifted_drift(p: &SdeParams, kappa: &[f64]) -> Result<Vec<f64>> {
    if kappa.len() != p.n_coords() {
        return Err(Error::DimensionMismatch {
            expected: p.n_coords(),
            found: kappa.len(),
        });
    }
    Ok(p.b.iter().zip(&p.sigma).zip(kappa).map(|((b, s), k)| b + s * k).collect())
}

/// Runs one trajectory, calling `visit(step, R, dA, Y)` at every grid index.
/// At `step == 0` the increment slice is empty.
fn integrate<F>(p: &SdeParams, drift: &[f64], grid: &TimeGrid, z: &[f64], mut visit: F)
where
    F: FnMut(usize, &[f64], &[f64], &[f64]),
{
    let k = p.k();
    let n = p.n_coords();
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut buf = TrajectoryBuffers::new(k, &p.y0);
    visit(0, &buf.r, &[], &buf.y);
    for step in 0..steps {
        let mut any = false;
        for i in 0..n {
            let yi = buf.y[i];
            let inc = yi.abs().powf(p.a[i]) * dt;
            buf.incr[i] = inc;
            any |= inc > 0.0;
            buf.y[i] = yi + drift[i] * dt + p.sigma[i] * sqrt_dt * z[i * steps + step];
        }
        if any {
            fill_generator(&mut buf.gen, k, &buf.incr);
            expm_generator_into(&mut buf.step_exp, &buf.gen, k, &mut buf.ws);
            mul_into(&mut buf.next, &buf.r, &buf.step_exp, k);
            std::mem::swap(&mut buf.r, &mut buf.next);
        }
        visit(step + 1, &buf.r, &buf.incr, &buf.y);
    }
}

fn check_tensor(p: &SdeParams, grid: &TimeGrid, tensor: &BrownianTensor) -> Result<()> {
    if tensor.coords != p.n_coords() {
        return Err(Error::DimensionMismatch {
            expected: p.n_coords(),
            found: tensor.coords,
        });
    }
    if tensor.steps != grid.steps() {
        return Err(Error::DimensionMismatch {
            expected: grid.steps(),
            found: tensor.steps,
        });
    }
    Ok(())
}

/// Geometric Euler-Maruyama simulation of `trajectories` rating matrices.
pub fn simulate_paths(
    p: &SdeParams,
    m: &MeasureChange,
    grid: &TimeGrid,
    trajectories: usize,
    seed: u64,
    exec: Executor,
) -> Result<MatrixPathBundle> {
    if trajectories == 0 {
        return Err(Error::domain("at least one trajectory is required"));
    }
    let tensor = BrownianTensor::generate(seed, trajectories, p.n_coords(), grid.steps(), exec);
    simulate_with_tensor(p, m, grid, tensor, exec)
}

/// [`simulate_paths`] on a given set of normals.
pub fn simulate_with_tensor(
    p: &SdeParams,
    m: &MeasureChange,
    grid: &TimeGrid,
    tensor: BrownianTensor,
    exec: Executor,
) -> Result<MatrixPathBundle> {
    check_tensor(p, grid, &tensor)?;
    let k = p.k();
    let kappa = kappa_from_h(m, k)?;
    let drift = shifted_drift(p, &kappa)?;
    let n = p.n_coords();
    let steps = grid.steps();

    let per_traj = exec.map(tensor.trajectories, |traj| {
        let mut r = Vec::with_capacity((steps + 1) * k * k);
        let mut incr = Vec::with_capacity(steps * n);
        let mut y = Vec::with_capacity((steps + 1) * n);
        integrate(p, &drift, grid, tensor.trajectory(traj), |_, rr, dd, yy| {
            r.extend_from_slice(rr);
            incr.extend_from_slice(dd);
            y.extend_from_slice(yy);
        });
        (r, incr, y)
    });

    let mut r = Vec::with_capacity(tensor.trajectories * (steps + 1) * k * k);
    let mut increments = Vec::with_capacity(tensor.trajectories * steps * n);
    let mut y = Vec::with_capacity(tensor.trajectories * (steps + 1) * n);
    for (rr, dd, yy) in per_traj {
        r.extend(rr);
        increments.extend(dd);
        y.extend(yy);
    }
    Ok(MatrixPathBundle {
        k,
        grid: *grid,
        trajectories: tensor.trajectories,
        params: p.clone(),
        measure: m.clone(),
        r,
        increments,
        y,
        brownian: tensor,
    })
}

/// Matrices `R_t` at the requested grid indices only, `[traj][checkpoint]`.
///
/// Same numbers as [`simulate_with_tensor`] without storing full paths; this
/// is what calibration objectives evaluate.
pub fn simulate_snapshots(
    p: &SdeParams,
    kappa: &[f64],
    grid: &TimeGrid,
    tensor: &BrownianTensor,
    checkpoints: &[usize],
    exec: Executor,
) -> Result<Vec<Vec<SquareMatrix>>> {
    check_tensor(p, grid, tensor)?;
    if let Some(&bad) = checkpoints.iter().find(|&&s| s > grid.steps()) {
        return Err(Error::OffGrid(bad as f64 * grid.dt()));
    }
    let drift = shifted_drift(p, kappa)?;
    let k = p.k();
    Ok(exec.map(tensor.trajectories, |traj| {
        let mut out = vec![SquareMatrix::zeros(k); checkpoints.len()];
        integrate(p, &drift, grid, tensor.trajectory(traj), |step, rr, _, _| {
            for (slot, &c) in checkpoints.iter().enumerate() {
                if c == step {
                    out[slot].as_mut_slice().copy_from_slice(rr);
                }
            }
        });
        out
    }))
}

/// `L_T = exp(sum_i kappa_i W^i_T - |kappa|^2 T / 2)` from Brownian
/// increments laid out `[coord][step]`.
pub fn girsanov_density(kappa: &[f64], dw: &[f64], grid: &TimeGrid) -> Result<f64> {
    let steps = grid.steps();
    if dw.len() != kappa.len() * steps {
        return Err(Error::DimensionMismatch {
            expected: kappa.len() * steps,
            found: dw.len(),
        });
    }
    let mut exponent = 0.0;
    let mut norm2 = 0.0;
    for (i, &ki) in kappa.iter().enumerate() {
        let w_t: f64 = dw[i * steps..(i + 1) * steps].iter().sum();
        exponent += ki * w_t;
        norm2 += ki * ki;
    }
    Ok((exponent - 0.5 * norm2 * grid.horizon()).exp())
}

/// Entrywise sample mean over a set of matrices.
pub fn sample_mean(mats: &[SquareMatrix]) -> Result<SquareMatrix> {
    let first = mats.first().ok_or_else(|| Error::domain("no samples"))?;
    let mut acc = SquareMatrix::zeros(first.dim());
    for m in mats {
        acc.check_same_dim(m)?;
        for (a, x) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *a += x;
        }
    }
    Ok(acc.scale(1.0 / mats.len() as f64))
}

/// Entrywise unbiased sample variance (divisor `M - 1`).
pub fn sample_variance(mats: &[SquareMatrix]) -> Result<SquareMatrix> {
    if mats.len() < 2 {
        return Err(Error::domain("sample variance needs at least two samples"));
    }
    let mean = sample_mean(mats)?;
    let mut acc = SquareMatrix::zeros(mean.dim());
    for m in mats {
        for ((a, x), mu) in acc.as_mut_slice().iter_mut().zip(m.as_slice()).zip(mean.as_slice()) {
            *a += (x - mu) * (x - mu);
        }
    }
    Ok(acc.scale(1.0 / (mats.len() - 1) as f64))
}

fn matrices_at(bundle: &MatrixPathBundle, t: f64) -> Result<Vec<SquareMatrix>> {
    let step = bundle.grid.index_of(t)?;
    Ok((0..bundle.trajectories).map(|m| bundle.r_at(m, step)).collect())
}

pub fn mean_matrix(bundle: &MatrixPathBundle, t: f64) -> Result<SquareMatrix> {
    sample_mean(&matrices_at(bundle, t)?)
}

pub fn var_matrix(bundle: &MatrixPathBundle, t: f64) -> Result<SquareMatrix> {
    sample_variance(&matrices_at(bundle, t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::validate_stochastic;
    use crate::reference_data as data;

    fn table_params() -> SdeParams {
        data::hist_params()
    }

    #[test]
    fn kappa_examples() {
        for kind in [MeasureKind::Jlt, MeasureKind::Exponential] {
            let m = MeasureChange::new(kind, vec![1.0; 4]).unwrap();
            assert_eq!(kappa_from_h(&m, 4).unwrap(), vec![1.0; 9]);
        }
        let m = MeasureChange::new(MeasureKind::Exponential, vec![2.0, 1.0, 1.0, 1.0]).unwrap();
        let k = kappa_from_h(&m, 4).unwrap();
        assert_eq!(k[0], 2.0); // 1-2
        assert_eq!(k[3], 0.5); // 2-1
        let m = MeasureChange::new(MeasureKind::Jlt, vec![3.0, 2.0, 0.5, 1.0]).unwrap();
        assert_eq!(kappa_from_h(&m, 4).unwrap(), vec![3.0, 3.0, 3.0, 2.0, 2.0, 2.0, 0.5, 0.5, 0.5]);
        assert_eq!(kappa_from_h(&MeasureChange::historical(4), 4).unwrap(), vec![0.0; 9]);
    }

    #[test]
    fn measure_change_validation() {
        assert!(MeasureChange::new(MeasureKind::Jlt, vec![1.0, 2.0]).is_err());
        assert!(matches!(
            MeasureChange::new(MeasureKind::Exponential, vec![1.0, 0.0, 1.0]),
            Err(Error::Domain(_))
        ));
        assert!(MeasureChange::new(MeasureKind::Jlt, vec![1.0, 0.0, 1.0]).is_ok());
    }

    #[test]
    fn zero_dynamics_stay_at_identity() {
        let p = SdeParams::uniform(4, 1.5, 0.0, 0.0).unwrap();
        let g = TimeGrid::new(1.0, 12).unwrap();
        let b = simulate_paths(&p, &MeasureChange::historical(4), &g, 3, 1, Executor::Sequential).unwrap();
        for m in 0..3 {
            for s in 0..=12 {
                assert_eq!(b.r_at(m, s), SquareMatrix::identity(4));
            }
        }
        assert_eq!(var_matrix(&b, 1.0).unwrap(), SquareMatrix::zeros(4));
        assert_eq!(mean_matrix(&b, 0.5).unwrap(), SquareMatrix::identity(4));
    }

    #[test]
    fn deterministic_two_state_matches_integral() {
        // Y_t = lambda t, a = 1: cumulative intensity is the left Riemann sum
        // of lambda t, which converges to lambda T^2 / 2.
        let lambda = 0.8;
        let p = SdeParams::new(2, vec![1.0], vec![lambda], vec![0.0]).unwrap();
        let hist = MeasureChange::historical(2);
        let mut errs = Vec::new();
        for steps in [50usize, 100, 200, 400] {
            let g = TimeGrid::new(1.0, steps).unwrap();
            let b = simulate_paths(&p, &hist, &g, 1, 0, Executor::Sequential).unwrap();
            let dt = g.dt();
            let riemann: f64 = (0..steps).map(|k| lambda * k as f64 * dt * dt).sum();
            let r = b.r_at(0, steps);
            assert!((r[(0, 1)] - (1.0 - (-riemann).exp())).abs() < 1e-14);
            let exact = 1.0 - (-lambda / 2.0_f64).exp();
            errs.push((r[(0, 1)] - exact).abs());
        }
        // first order in dt
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
        }
    }

    #[test]
    fn bundle_stays_in_group_and_increments_nonnegative() {
        let g = TimeGrid::new(1.0, 60).unwrap();
        let m = MeasureChange::from_free(MeasureKind::Exponential, &data::H_EXPONENTIAL[1]).unwrap();
        let b = simulate_paths(&table_params(), &m, &g, 50, 9, Executor::Parallel).unwrap();
        for traj in 0..50 {
            assert_eq!(b.r_at(traj, 0), SquareMatrix::identity(4));
            for s in 0..=60 {
                let rep = validate_stochastic(&b.r_at(traj, s), 1e-9);
                assert!(rep.passed, "{rep}");
            }
            for s in 0..60 {
                assert!(b.increments(traj, s).iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn executors_give_identical_bundles() {
        let g = TimeGrid::new(1.0, 24).unwrap();
        let p = table_params();
        let h = MeasureChange::historical(4);
        let a = simulate_paths(&p, &h, &g, 20, 5, Executor::Sequential).unwrap();
        let b = simulate_paths(&p, &h, &g, 20, 5, Executor::Parallel).unwrap();
        assert_eq!(a.r, b.r);
        assert_eq!(a.increments, b.increments);
    }

    #[test]
    fn snapshots_agree_with_full_bundle() {
        let g = TimeGrid::new(1.0, 24).unwrap();
        let p = table_params();
        let tensor = BrownianTensor::generate(3, 10, 9, 24, Executor::Sequential);
        let snaps = simulate_snapshots(&p, &[0.0; 9], &g, &tensor, &[6, 24], Executor::Sequential).unwrap();
        let b = simulate_with_tensor(&p, &MeasureChange::historical(4), &g, tensor, Executor::Sequential).unwrap();
        for m in 0..10 {
            assert_eq!(snaps[m][0], b.r_at(m, 6));
            assert_eq!(snaps[m][1], b.r_at(m, 24));
        }
    }

    #[test]
    fn girsanov_plug_in() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let dw = vec![0.1, -0.1, 0.2, -0.2, 0.0, 0.3, -0.3, 0.0];
        assert_eq!(girsanov_density(&[0.0, 0.0], &dw, &g).unwrap(), 1.0);
        // W_T = 0 for both coordinates, |kappa|^2 T = 2
        let l = girsanov_density(&[1.0, 1.0], &dw, &g).unwrap();
        assert!((l - (-1.0_f64).exp()).abs() < 1e-15);
        assert!(girsanov_density(&[1.0], &dw, &g).is_err());
    }

    #[test]
    fn grid_lookup() {
        let g = TimeGrid::with_rate(1.0, 120).unwrap();
        assert_eq!(g.steps(), 120);
        assert_eq!(g.index_of(1.0 / 12.0).unwrap(), 10);
        assert_eq!(g.index_of(1.0).unwrap(), 120);
        assert!(matches!(g.index_of(0.123), Err(Error::OffGrid(_))));
        assert!(g.index_of(1.5).is_err());
    }

    #[test]
    fn variance_needs_two_samples() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let b = simulate_paths(&table_params(), &MeasureChange::historical(4), &g, 1, 0, Executor::Sequential).unwrap();
        assert!(var_matrix(&b, 1.0).is_err());
        assert!(mean_matrix(&b, 0.3).is_err());
    }

    #[test]
    fn params_vector_roundtrip_and_validation() {
        let p = table_params();
        let v = p.to_vector();
        assert_eq!(p.with_vector(&v).unwrap(), p);
        assert!(SdeParams::uniform(4, -0.1, 0.0, 0.0).is_err());
        assert!(p.with_vector(&v[1..]).is_err());
    }
}
