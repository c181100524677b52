//! Nested simulation of rating paths.
//!
//! Each simulated matrix trajectory defines a piecewise-constant generator
//! (the per-step increments divided by `dt`); individual rating paths are
//! then sampled from that chain with the Gillespie algorithm.

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::lie::{algebra_from_coeffs, check_generator, coord_count, fill_generator, AlgebraCoeffs};
use crate::matrix::SquareMatrix;
use crate::rng::{self, open_unit};
use crate::sde::{MatrixPathBundle, TimeGrid};

/// Largest supported rating count (ratings are stored as bytes).
pub const MAX_RATINGS: usize = 255;

/// One generator per grid interval `[t_k, t_{k+1})`, intensities per year.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorPath {
    k: usize,
    grid: TimeGrid,
    /// `[interval][K*K]`
    gens: Vec<f64>,
}

impl GeneratorPath {
    pub fn new(grid: TimeGrid, gens: &[SquareMatrix]) -> Result<Self> {
        if gens.len() != grid.steps() {
            return Err(Error::DimensionMismatch {
                expected: grid.steps(),
                found: gens.len(),
            });
        }
        let k = gens.first().map_or(0, SquareMatrix::dim);
        check_k(k)?;
        let mut flat = Vec::with_capacity(gens.len() * k * k);
        for g in gens {
            if g.dim() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: g.dim(),
                });
            }
            check_generator(g)?;
            flat.extend_from_slice(g.as_slice());
        }
        Ok(Self { k, grid, gens: flat })
    }

    /// The same generator on every interval.
    pub fn constant(grid: TimeGrid, gen: &SquareMatrix) -> Result<Self> {
        Self::new(grid, &vec![gen.clone(); grid.steps()])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn slice(&self, interval: usize) -> &[f64] {
        let kk = self.k * self.k;
        &self.gens[interval * kk..(interval + 1) * kk]
    }

    pub fn generator(&self, interval: usize) -> SquareMatrix {
        SquareMatrix::from_row_major(self.k, self.slice(interval).to_vec()).expect("stored K*K")
    }
}

fn check_k(k: usize) -> Result<()> {
    if !(2..=MAX_RATINGS).contains(&k) {
        return Err(Error::InvalidDimension(format!("rating count {k} outside 2..={MAX_RATINGS}")));
    }
    Ok(())
}

/// Generator path of trajectory `m`: `A~_{k+1} = dA_k / dt`.
pub fn generator_path(bundle: &MatrixPathBundle, m: usize) -> Result<GeneratorPath> {
    if m >= bundle.trajectories() {
        return Err(Error::domain(format!("trajectory {m} out of range")));
    }
    let k = bundle.k();
    check_k(k)?;
    let grid = *bundle.grid();
    let dt = grid.dt();
    let mut gens = vec![0.0; grid.steps() * k * k];
    let mut scaled = vec![0.0; coord_count(k)];
    for step in 0..grid.steps() {
        for (s, d) in scaled.iter_mut().zip(bundle.increments(m, step)) {
            *s = d / dt;
        }
        fill_generator(&mut gens[step * k * k..(step + 1) * k * k], k, &scaled);
    }
    Ok(GeneratorPath { k, grid, gens })
}

/// [`generator_path`] for every trajectory of the bundle.
pub fn piecewise_generators(bundle: &MatrixPathBundle) -> Result<Vec<GeneratorPath>> {
    (0..bundle.trajectories()).map(|m| generator_path(bundle, m)).collect()
}

/// Generator assembled from algebra coordinates, for building test chains.
pub fn generator_from_coeffs(k: usize, coeffs: Vec<f64>) -> Result<SquareMatrix> {
    Ok(algebra_from_coeffs(&AlgebraCoeffs::new(k, coeffs)?))
}

/// Piecewise-constant, right-continuous rating path on `[0, T]`; ratings are
/// 0-based and `K-1` is default.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingPath {
    initial: u8,
    /// `(jump time, new rating)`, times strictly increasing.
    events: Vec<(f64, u8)>,
    /// Rating at every grid point `t_0..=t_N`.
    snapshots: Vec<u8>,
    k: u8,
}

impl RatingPath {
    pub fn initial(&self) -> usize {
        self.initial as usize
    }

    pub fn events(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.events.iter().map(|&(t, r)| (t, r as usize))
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn snapshot(&self, step: usize) -> usize {
        self.snapshots[step] as usize
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshots.len()
    }

    pub fn terminal(&self) -> usize {
        *self.snapshots.last().expect("at least one snapshot") as usize
    }

    /// Rating at time `t` (right-continuous).
    pub fn rating_at(&self, t: f64) -> usize {
        let n = self.events.partition_point(|&(s, _)| s <= t);
        if n == 0 {
            self.initial()
        } else {
            self.events[n - 1].1 as usize
        }
    }

    /// Exact time of the jump into default; `Some(0.0)` for paths that start
    /// there.
    pub fn default_time(&self) -> Option<f64> {
        let d = self.k - 1;
        if self.initial == d {
            return Some(0.0);
        }
        self.events.iter().find(|&&(_, r)| r == d).map(|&(t, _)| t)
    }

    /// Rating held immediately before the jump into default.
    pub fn pre_default_rating(&self) -> Option<usize> {
        let d = self.k - 1;
        let pos = self.events.iter().position(|&(_, r)| r == d)?;
        Some(if pos == 0 {
            self.initial()
        } else {
            self.events[pos - 1].1 as usize
        })
    }
}

/// Gillespie sample of one rating path started at `i0`.
pub fn ssa_sample<R: Rng + ?Sized>(g: &GeneratorPath, i0: usize, rng: &mut R) -> Result<RatingPath> {
    let k = g.k;
    if i0 >= k {
        return Err(Error::domain(format!("initial rating {i0} outside 0..{k}")));
    }
    let grid = &g.grid;
    let mut state = i0;
    let mut events = Vec::new();
    let mut snapshots = Vec::with_capacity(grid.steps() + 1);
    snapshots.push(i0 as u8);
    for interval in 0..grid.steps() {
        let a = g.slice(interval);
        let mut t = grid.time(interval);
        let end = grid.time(interval + 1);
        while state != k - 1 {
            let row = &a[state * k..(state + 1) * k];
            let q = -row[state];
            if q <= 0.0 {
                break;
            }
            let tau = -open_unit(rng).ln() / q;
            if t + tau >= end {
                break;
            }
            t += tau;
            let target = q * open_unit(rng);
            let mut cum = 0.0;
            let mut next = None;
            for (j, &rate) in row.iter().enumerate() {
                if j == state || rate <= 0.0 {
                    continue;
                }
                cum += rate;
                next = Some(j);
                if cum > target {
                    break;
                }
            }
            // the fallback to the last positive rate only matters when
            // rounding leaves the cumulative sum a hair below q
            state = next.expect("positive exit rate has a destination");
            events.push((t, state as u8));
        }
        snapshots.push(state as u8);
    }
    Ok(RatingPath {
        initial: i0 as u8,
        events,
        snapshots,
        k: k as u8,
    })
}

/// Rating paths for every `(generator trajectory, initial rating, sample)`.
#[derive(Debug, Clone)]
pub struct NestedPaths {
    k: usize,
    grid: TimeGrid,
    m1: usize,
    m2: usize,
    initials: Vec<usize>,
    /// `[m1][initial][m2]`
    paths: Vec<RatingPath>,
}

impl NestedPaths {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    pub fn initials(&self) -> &[usize] {
        &self.initials
    }

    pub fn all(&self) -> &[RatingPath] {
        &self.paths
    }

    /// Paths of generator trajectory `m1` (all initial ratings).
    pub fn of_generator(&self, m1: usize) -> &[RatingPath] {
        let per = self.initials.len() * self.m2;
        &self.paths[m1 * per..(m1 + 1) * per]
    }
}

fn ssa_stream(seed: u64, m1: usize, i0: usize, m2: usize) -> rng::StreamRng {
    rng::stream(seed, "ssa", &[m1 as u64, i0 as u64, m2 as u64])
}

/// `m2` SSA paths per initial rating for every trajectory of `bundle`.
pub fn nested_simulate(bundle: &MatrixPathBundle, initials: &[usize], m2: usize, seed: u64, exec: Executor) -> Result<NestedPaths> {
    if m2 == 0 {
        return Err(Error::domain("at least one path per generator is required"));
    }
    let k = bundle.k();
    if let Some(&bad) = initials.iter().find(|&&i| i >= k) {
        return Err(Error::domain(format!("initial rating {bad} outside 0..{k}")));
    }
    let per_gen = exec.try_map(bundle.trajectories(), |m1| -> Result<Vec<RatingPath>> {
        let g = generator_path(bundle, m1)?;
        let mut out = Vec::with_capacity(initials.len() * m2);
        for &i0 in initials {
            for s in 0..m2 {
                out.push(ssa_sample(&g, i0, &mut ssa_stream(seed, m1, i0, s))?);
            }
        }
        Ok(out)
    })?;
    Ok(NestedPaths {
        k,
        grid: *bundle.grid(),
        m1: bundle.trajectories(),
        m2,
        initials: initials.to_vec(),
        paths: per_gen.into_iter().flatten().collect(),
    })
}

/// Occupancy frequencies per generator trajectory without storing paths:
/// `[m1][checkpoint]`, row `i` from the `m2` paths started at `i`.
///
/// Uses the same streams as [`nested_simulate`] with all initial ratings.
pub fn nested_occupancy(
    bundle: &MatrixPathBundle,
    m2: usize,
    seed: u64,
    steps: &[usize],
    exec: Executor,
) -> Result<Vec<Vec<SquareMatrix>>> {
    if m2 == 0 {
        return Err(Error::domain("at least one path per generator is required"));
    }
    if let Some(&bad) = steps.iter().find(|&&s| s > bundle.grid().steps()) {
        return Err(Error::OffGrid(bad as f64 * bundle.grid().dt()));
    }
    let k = bundle.k();
    exec.try_map(bundle.trajectories(), |m1| -> Result<Vec<SquareMatrix>> {
        let g = generator_path(bundle, m1)?;
        let mut occ = vec![SquareMatrix::zeros(k); steps.len()];
        for i0 in 0..k {
            for s in 0..m2 {
                let path = ssa_sample(&g, i0, &mut ssa_stream(seed, m1, i0, s))?;
                for (c, &step) in steps.iter().enumerate() {
                    occ[c][(i0, path.snapshot(step))] += 1.0;
                }
            }
        }
        for o in &mut occ {
            *o = o.map(|c| c / m2 as f64);
        }
        Ok(occ)
    })
}

/// Occupancy matrix at a grid time; rows without paths are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTransition {
    pub rows: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
}

impl EmpiricalTransition {
    /// Dense matrix with absent rows filled by `fill`.
    pub fn to_matrix_or(&self, fill: f64) -> SquareMatrix {
        let k = self.rows.len();
        let mut m = SquareMatrix::zeros(k);
        for (i, row) in self.rows.iter().enumerate() {
            for j in 0..k {
                m[(i, j)] = row.as_ref().map_or(fill, |r| r[j]);
            }
        }
        m
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(Option::is_some)
    }
}

/// Frequencies `#{paths from i at j at t} / #{paths from i}`.
pub fn empirical_transition(paths: &[RatingPath], k: usize, grid: &TimeGrid, t: f64) -> Result<EmpiricalTransition> {
    let step = grid.index_of(t)?;
    let mut counts = vec![0usize; k];
    let mut hits = vec![vec![0usize; k]; k];
    for p in paths {
        if p.snapshot_count() != grid.steps() + 1 {
            return Err(Error::DimensionMismatch {
                expected: grid.steps() + 1,
                found: p.snapshot_count(),
            });
        }
        if p.initial() >= k {
            return Err(Error::domain(format!("path rating {} outside 0..{k}", p.initial())));
        }
        counts[p.initial()] += 1;
        hits[p.initial()][p.snapshot(step)] += 1;
    }
    let rows = hits
        .into_iter()
        .zip(&counts)
        .map(|(h, &n)| (n > 0).then(|| h.into_iter().map(|c| c as f64 / n as f64).collect()))
        .collect();
    Ok(EmpiricalTransition { rows, counts })
}

/// Mean over generator trajectories of `||R_t(m1) - R^sim_t(m1)||_F / K^2`.
pub fn nested_error(bundle: &MatrixPathBundle, occupancy: &[SquareMatrix], step: usize) -> Result<f64> {
    if occupancy.len() != bundle.trajectories() {
        return Err(Error::DimensionMismatch {
            expected: bundle.trajectories(),
            found: occupancy.len(),
        });
    }
    let k = bundle.k();
    let mut total = 0.0;
    for (m1, occ) in occupancy.iter().enumerate() {
        total += bundle.r_at(m1, step).sub(occ)?.frobenius_norm();
    }
    Ok(total / occupancy.len() as f64 / (k * k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::mat_exp;
    use crate::sde::{simulate_paths, MeasureChange, SdeParams};
    use rand::SeedableRng;

    fn two_state(lambda: f64) -> SquareMatrix {
        generator_from_coeffs(2, vec![lambda]).unwrap()
    }

    #[test]
    fn absorbing_start_stays() {
        let g = GeneratorPath::constant(TimeGrid::new(1.0, 4).unwrap(), &two_state(3.0)).unwrap();
        let mut r = rng::StreamRng::seed_from_u64(1);
        let p = ssa_sample(&g, 1, &mut r).unwrap();
        assert_eq!(p.event_count(), 0);
        assert_eq!(p.default_time(), Some(0.0));
        assert_eq!(p.pre_default_rating(), None);
        assert!((0..5).all(|s| p.snapshot(s) == 1));
    }

    #[test]
    fn zero_generator_freezes() {
        let g = GeneratorPath::constant(TimeGrid::new(1.0, 4).unwrap(), &SquareMatrix::zeros(3)).unwrap();
        let mut r = rng::StreamRng::seed_from_u64(1);
        let p = ssa_sample(&g, 0, &mut r).unwrap();
        assert_eq!(p.event_count(), 0);
        assert_eq!(p.default_time(), None);
        assert_eq!(p.rating_at(0.99), 0);
    }

    #[test]
    fn path_events_are_consistent() {
        let gen = generator_from_coeffs(4, vec![0.5, 0.2, 0.1, 0.4, 0.6, 0.3, 0.2, 0.9, 1.1]).unwrap();
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let g = GeneratorPath::constant(grid, &gen).unwrap();
        for seed in 0..200 {
            let p = ssa_sample(&g, 0, &mut rng::StreamRng::seed_from_u64(seed)).unwrap();
            let times: Vec<f64> = p.events().map(|e| e.0).collect();
            assert!(times.windows(2).all(|w| w[0] < w[1]));
            assert!(times.iter().all(|&t| (0.0..=2.0).contains(&t)));
            for s in 0..=8 {
                assert_eq!(p.snapshot(s), p.rating_at(grid.time(s)));
            }
            if let Some(tau) = p.default_time() {
                assert_eq!(p.terminal(), 3);
                assert_eq!(p.rating_at(tau), 3);
                assert!(p.events().last().unwrap().1 == 3);
            }
        }
    }

    #[test]
    fn two_state_survival() {
        let lambda = 0.8;
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let g = GeneratorPath::constant(grid, &two_state(lambda)).unwrap();
        let n = 20_000;
        let mut rng = rng::stream(5, "test", &[]);
        let survived = (0..n).filter(|_| ssa_sample(&g, 0, &mut rng).unwrap().terminal() == 0).count() as f64 / n as f64;
        let p = (-lambda).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((survived - p).abs() < 3.0 * se, "{survived} vs {p}");
    }

    #[test]
    fn generators_reproduce_step_factors() {
        let p = SdeParams::uniform(4, 1.2, 0.3, 0.4).unwrap();
        let grid = TimeGrid::new(1.0, 12).unwrap();
        let b = simulate_paths(&p, &MeasureChange::historical(4), &grid, 3, 9, Executor::Sequential).unwrap();
        for m in 0..3 {
            let g = generator_path(&b, m).unwrap();
            for step in 0..12 {
                let f = mat_exp(&g.generator(step).scale(grid.dt())).unwrap();
                let next = b.r_at(m, step).matmul(f.as_matrix()).unwrap();
                assert!(next.max_abs_diff(&b.r_at(m, step + 1)).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_coefficient_generator() {
        // a = 0 gives |Y|^0 = 1 on every coordinate
        let p = SdeParams::uniform(2, 0.0, 0.0, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let b = simulate_paths(&p, &MeasureChange::historical(2), &grid, 1, 0, Executor::Sequential).unwrap();
        let g = generator_path(&b, 0).unwrap();
        for s in 0..5 {
            assert!(g.generator(s).max_abs_diff(&two_state(1.0)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn nested_is_deterministic_and_matches_occupancy() {
        let p = SdeParams::uniform(3, 1.0, 0.5, 0.2).unwrap();
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let b = simulate_paths(&p, &MeasureChange::historical(3), &grid, 4, 2, Executor::Sequential).unwrap();
        let a = nested_simulate(&b, &[0, 1, 2], 30, 11, Executor::Sequential).unwrap();
        let c = nested_simulate(&b, &[0, 1, 2], 30, 11, Executor::Parallel).unwrap();
        assert_eq!(a.all(), c.all());
        let occ = nested_occupancy(&b, 30, 11, &[3, 6], Executor::Parallel).unwrap();
        for m1 in 0..4 {
            let e = empirical_transition(a.of_generator(m1), 3, &grid, 1.0).unwrap();
            assert_eq!(e.to_matrix_or(f64::NAN), occ[m1][1]);
        }
    }

    #[test]
    fn frozen_chain_error_is_zero() {
        let p = SdeParams::uniform(3, 1.0, 0.0, 0.0).unwrap().with_y0(vec![0.0; 4]).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let b = simulate_paths(&p, &MeasureChange::historical(3), &grid, 2, 0, Executor::Sequential).unwrap();
        let occ = nested_occupancy(&b, 5, 0, &[4], Executor::Sequential).unwrap();
        let occ: Vec<_> = occ.into_iter().map(|mut v| v.swap_remove(0)).collect();
        assert_eq!(occ[0], SquareMatrix::identity(3));
        assert_eq!(nested_error(&b, &occ, 4).unwrap(), 0.0);
    }

    #[test]
    fn absent_rows_reported() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let g = GeneratorPath::constant(grid, &two_state(1.0)).unwrap();
        let paths: Vec<_> = (0..3)
            .map(|s| ssa_sample(&g, 1, &mut rng::StreamRng::seed_from_u64(s)).unwrap())
            .collect();
        let e = empirical_transition(&paths, 2, &grid, 1.0).unwrap();
        assert_eq!(e.rows[0], None);
        assert_eq!(e.rows[1], Some(vec![0.0, 1.0]));
        assert!(!e.is_complete());
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        assert!(GeneratorPath::new(grid, &[two_state(1.0)]).is_err());
        let bad = SquareMatrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]).unwrap();
        assert!(GeneratorPath::constant(grid, &bad).is_err());
        let g = GeneratorPath::constant(grid, &two_state(1.0)).unwrap();
        assert!(ssa_sample(&g, 2, &mut rng::StreamRng::seed_from_u64(0)).is_err());
    }
}
