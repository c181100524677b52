//! Collateralized bilateral valuation adjustments.
//!
//! A synthetic portfolio value `V` is simulated on the posting grid, bank and
//! counterparty ratings come from SSA paths driven by the same generator
//! trajectory, and collateral follows the rating-trigger rule
//! `C = (V + rho_B)^- + (V - rho_C)^+`. Interest rates are zero.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::rng;
use crate::sde::{simulate_paths, MeasureChange, SdeParams, TimeGrid};
use crate::ssa::{generator_path, ssa_sample, RatingPath};

/// Synthetic portfolio `V_t = V0 + s0 W0_t + sum_i s_i W^i_{min(t, l_i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSpec {
    pub v0: f64,
    pub n: usize,
    /// Volatilities are `sigma_scale * |Z|` for standard normal `Z`.
    pub sigma_scale: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl PortfolioSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.v0.is_finite() {
            return Err(Error::domain("initial value must be finite"));
        }
        if !(self.sigma_scale >= 0.0 && self.sigma_scale.is_finite()) {
            return Err(Error::domain("sigma_scale must be finite and nonnegative"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::domain("horizon must be positive"));
        }
        Ok(())
    }

    /// Draws the component volatilities and lifetimes (shared by all paths).
    pub fn draw(&self) -> Result<Portfolio> {
        self.validate()?;
        let mut r = rng::stream(self.seed, "portfolio", &[]);
        let mut vol = || self.sigma_scale * r.sample::<f64, _>(StandardNormal).abs();
        let sigma0 = vol();
        let sigmas: Vec<f64> = (0..self.n).map(|_| vol()).collect();
        let lifetimes = (0..self.n).map(|_| self.horizon * r.random::<f64>()).collect();
        Ok(Portfolio {
            v0: self.v0,
            sigma0,
            sigmas,
            lifetimes,
        })
    }
}

/// Drawn portfolio components.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub v0: f64,
    pub sigma0: f64,
    pub sigmas: Vec<f64>,
    pub lifetimes: Vec<f64>,
}

impl Portfolio {
    /// Variance of `V_t`.
    pub fn variance(&self, t: f64) -> f64 {
        self.sigma0 * self.sigma0 * t + self.sigmas.iter().zip(&self.lifetimes).map(|(s, l)| s * s * t.min(*l)).sum::<f64>()
    }

    /// `V` on `grid` for path `m`. Exact: each grid increment is Gaussian
    /// with variance `s0^2 dt + sum_i s_i^2 |[t_j, t_j+1] ∩ [0, l_i]|`.
    pub fn value_path(&self, grid: &TimeGrid, seed: u64, m: usize) -> Vec<f64> {
        let mut r = rng::stream(seed, "value", &[m as u64]);
        let mut out = Vec::with_capacity(grid.steps() + 1);
        let mut v = self.v0;
        out.push(v);
        for j in 0..grid.steps() {
            let var = self.variance(grid.time(j + 1)) - self.variance(grid.time(j));
            let z: f64 = r.sample(StandardNormal);
            v += var.max(0.0).sqrt() * z;
            out.push(v);
        }
        out
    }
}

/// Value paths `[m][grid point]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuePaths {
    grid: TimeGrid,
    paths: Vec<Vec<f64>>,
}

impl ValuePaths {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path(&self, m: usize) -> &[f64] {
        &self.paths[m]
    }
}

/// `m` value paths on `grid`; component draws come from `spec.seed`, path
/// noise from `seed`.
pub fn simulate_portfolio(spec: &PortfolioSpec, grid: &TimeGrid, m: usize, seed: u64, exec: Executor) -> Result<ValuePaths> {
    let p = spec.draw()?;
    Ok(ValuePaths {
        grid: *grid,
        paths: exec.map(m, |i| p.value_path(grid, seed, i)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Bank,
    Counterparty,
}

/// Rating-dependent thresholds and losses given default.
#[derive(Debug, Clone, PartialEq)]
pub struct CsaTerms {
    pub bank_thresholds: Vec<f64>,
    pub counterparty_thresholds: Vec<f64>,
    pub lgd_bank: f64,
    pub lgd_counterparty: f64,
    pub postings_per_year: usize,
}

impl CsaTerms {
    pub fn new(bank_thresholds: Vec<f64>, counterparty_thresholds: Vec<f64>, lgd_bank: f64, lgd_counterparty: f64) -> Result<Self> {
        let t = Self {
            bank_thresholds,
            counterparty_thresholds,
            lgd_bank,
            lgd_counterparty,
            postings_per_year: 365,
        };
        t.validate()?;
        Ok(t)
    }

    /// Same thresholds for both parties.
    pub fn symmetric(thresholds: Vec<f64>, lgd: f64) -> Result<Self> {
        Self::new(thresholds.clone(), thresholds, lgd, lgd)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bank_thresholds.len() != self.counterparty_thresholds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bank_thresholds.len(),
                found: self.counterparty_thresholds.len(),
            });
        }
        if self.bank_thresholds.len() < 2 {
            return Err(Error::InvalidDimension("need thresholds for at least two ratings".into()));
        }
        if self
            .bank_thresholds
            .iter()
            .chain(&self.counterparty_thresholds)
            .any(|r| !(*r >= 0.0))
        {
            return Err(Error::domain("thresholds must be nonnegative"));
        }
        for l in [self.lgd_bank, self.lgd_counterparty] {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::domain(format!("loss given default {l} outside [0,1]")));
            }
        }
        if self.postings_per_year == 0 {
            return Err(Error::domain("postings per year must be positive"));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.bank_thresholds.len()
    }

    pub fn threshold_of(&self, party: Party, rating: usize) -> Result<f64> {
        let table = match party {
            Party::Bank => &self.bank_thresholds,
            Party::Counterparty => &self.counterparty_thresholds,
        };
        table
            .get(rating)
            .copied()
            .ok_or_else(|| Error::domain(format!("rating {rating} outside 0..{}", table.len())))
    }

    pub fn lgd(&self, party: Party) -> f64 {
        match party {
            Party::Bank => self.lgd_bank,
            Party::Counterparty => self.lgd_counterparty,
        }
    }
}

/// Collateral agreement. Positive collateral is held by the bank.
#[derive(Debug, Clone, PartialEq)]
pub enum CollateralRegime {
    Uncollateralized,
    Perfect,
    Triggers(CsaTerms),
}

impl CollateralRegime {
    pub fn name(&self) -> &'static str {
        match self {
            CollateralRegime::Uncollateralized => "uncollateralized",
            CollateralRegime::Perfect => "perfect",
            CollateralRegime::Triggers(_) => "triggers",
        }
    }

    /// Collateral posted for value `v` with current ratings.
    pub fn collateral(&self, v: f64, bank_rating: usize, cpty_rating: usize) -> Result<f64> {
        Ok(match self {
            CollateralRegime::Uncollateralized => 0.0,
            CollateralRegime::Perfect => v,
            CollateralRegime::Triggers(t) => {
                let rb = t.threshold_of(Party::Bank, bank_rating)?;
                let rc = t.threshold_of(Party::Counterparty, cpty_rating)?;
                neg(v + rb) + pos(v - rc)
            }
        })
    }
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
fn neg(x: f64) -> f64 {
    x.min(0.0)
}

/// First default before the horizon (`None` if neither party defaults
/// strictly before `horizon`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FirstDefault {
    Bank(f64),
    Counterparty(f64),
    Simultaneous(f64),
}

impl FirstDefault {
    pub fn time(self) -> f64 {
        match self {
            FirstDefault::Bank(t) | FirstDefault::Counterparty(t) | FirstDefault::Simultaneous(t) => t,
        }
    }
}

pub fn default_time(x: &RatingPath) -> Option<f64> {
    x.default_time()
}

pub fn first_default(bank: &RatingPath, cpty: &RatingPath, horizon: f64) -> Option<FirstDefault> {
    let tb = bank.default_time().filter(|&t| t < horizon);
    let tc = cpty.default_time().filter(|&t| t < horizon);
    match (tb, tc) {
        (None, None) => None,
        (Some(b), None) => Some(FirstDefault::Bank(b)),
        (None, Some(c)) => Some(FirstDefault::Counterparty(c)),
        (Some(b), Some(c)) if b < c => Some(FirstDefault::Bank(b)),
        (Some(b), Some(c)) if c < b => Some(FirstDefault::Counterparty(c)),
        (Some(b), Some(_)) => Some(FirstDefault::Simultaneous(b)),
    }
}

/// Collateral at every point of the value grid: `C_0 = 0`, the closed-form
/// rule at posting dates before the first default, frozen afterwards.
pub fn collateral_path(v: &[f64], grid: &TimeGrid, bank: &RatingPath, cpty: &RatingPath, regime: &CollateralRegime) -> Result<Vec<f64>> {
    if v.len() != grid.steps() + 1 {
        return Err(Error::DimensionMismatch {
            expected: grid.steps() + 1,
            found: v.len(),
        });
    }
    let tau = first_default(bank, cpty, f64::INFINITY).map_or(f64::INFINITY, FirstDefault::time);
    let mut out = Vec::with_capacity(v.len());
    let mut c = 0.0;
    out.push(c);
    for (j, &vj) in v.iter().enumerate().skip(1) {
        let t = grid.time(j);
        if t < tau {
            c = regime.collateral(vj, bank.rating_at(t), cpty.rating_at(t))?;
        }
        out.push(c);
    }
    Ok(out)
}

/// Per-path losses at the first default; zero when no default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub default: Option<FirstDefault>,
    /// `LGD_C (V_tau^+ - C_tau^+)` on counterparty-first default.
    pub cva: f64,
    /// `-LGD_B (V_tau^- - C_tau^-)` on bank-first default.
    pub dva: f64,
}

/// Evaluates one path. `V_tau` is read at the first grid point at or after
/// `tau`; `C_tau` is the collateral of the last posting date strictly before
/// `tau` (zero when `tau = 0`).
pub fn path_outcome(
    v: &[f64],
    grid: &TimeGrid,
    bank: &RatingPath,
    cpty: &RatingPath,
    regime: &CollateralRegime,
    lgd_bank: f64,
    lgd_cpty: f64,
) -> Result<PathOutcome> {
    if v.len() != grid.steps() + 1 {
        return Err(Error::DimensionMismatch {
            expected: grid.steps() + 1,
            found: v.len(),
        });
    }
    let Some(fd) = first_default(bank, cpty, grid.horizon()) else {
        return Ok(PathOutcome {
            default: None,
            cva: 0.0,
            dva: 0.0,
        });
    };
    let tau = fd.time();
    let dt = grid.dt();
    let mut after = (tau / dt).ceil() as usize;
    while after > 0 && grid.time(after - 1) >= tau {
        after -= 1;
    }
    while grid.time(after) < tau {
        after += 1;
    }
    let after = after.min(grid.steps());
    let v_tau = v[after];
    let c_tau = match after.checked_sub(1) {
        None | Some(0) => 0.0,
        Some(j) => {
            let t = grid.time(j);
            regime.collateral(v[j], bank.rating_at(t), cpty.rating_at(t))?
        }
    };
    let (cva, dva) = match fd {
        FirstDefault::Counterparty(_) => (lgd_cpty * (pos(v_tau) - pos(c_tau)), 0.0),
        FirstDefault::Bank(_) => (0.0, -lgd_bank * (neg(v_tau) - neg(c_tau))),
        FirstDefault::Simultaneous(_) => (0.0, 0.0),
    };
    Ok(PathOutcome {
        default: Some(fd),
        cva,
        dva,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DefaultCounts {
    pub bank_first: usize,
    pub counterparty_first: usize,
    pub simultaneous: usize,
    pub none: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XvaResult {
    pub regime: String,
    pub cva: f64,
    pub dva: f64,
    pub bva: f64,
    pub cva_se: f64,
    pub dva_se: f64,
    pub bva_se: f64,
    pub counts: DefaultCounts,
    pub paths: usize,
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let mean = xs.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Aggregates per-path outcomes (in path order) into an [`XvaResult`].
pub fn aggregate(regime: &str, outcomes: &[PathOutcome]) -> XvaResult {
    let n = outcomes.len();
    let mut counts = DefaultCounts::default();
    for o in outcomes {
        match o.default {
            None => counts.none += 1,
            Some(FirstDefault::Bank(_)) => counts.bank_first += 1,
            Some(FirstDefault::Counterparty(_)) => counts.counterparty_first += 1,
            Some(FirstDefault::Simultaneous(_)) => counts.simultaneous += 1,
        }
    }
    let (cva, cva_se) = mean_se(outcomes.iter().map(|o| o.cva), n);
    let (dva, dva_se) = mean_se(outcomes.iter().map(|o| o.dva), n);
    let (_, bva_se) = mean_se(outcomes.iter().map(|o| o.dva - o.cva), n);
    XvaResult {
        regime: regime.to_string(),
        cva,
        dva,
        bva: dva - cva,
        cva_se,
        dva_se,
        bva_se,
        counts,
        paths: n,
    }
}

/// CVA/DVA/BVA of aligned value and rating path collections.
pub fn compute_xva(
    values: &ValuePaths,
    bank: &[RatingPath],
    cpty: &[RatingPath],
    regime: &CollateralRegime,
    lgd_bank: f64,
    lgd_cpty: f64,
) -> Result<XvaResult> {
    if bank.len() != values.len() || cpty.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            found: bank.len().min(cpty.len()),
        });
    }
    let outcomes = (0..values.len())
        .map(|m| path_outcome(values.path(m), values.grid(), &bank[m], &cpty[m], regime, lgd_bank, lgd_cpty))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(regime.name(), &outcomes))
}

/// Counts of `(initial rating, rating before default)` over defaulted paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PreDefaultDistribution {
    pub k: usize,
    /// `[initial][pre-default]`
    pub counts: Vec<Vec<usize>>,
    pub defaults: usize,
}

impl PreDefaultDistribution {
    pub fn is_empty(&self) -> bool {
        self.defaults == 0
    }

    /// Counts normalized by the total number of defaults (zero if empty).
    pub fn fractions(&self) -> Vec<Vec<f64>> {
        let d = self.defaults.max(1) as f64;
        self.counts.iter().map(|r| r.iter().map(|&c| c as f64 / d).collect()).collect()
    }

    /// Share of defaults by pre-default rating, summed over initial ratings.
    pub fn by_pre_default(&self) -> Vec<f64> {
        let f = self.fractions();
        (0..self.k).map(|j| f.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn modal_pre_default(&self) -> Option<usize> {
        if self.is_empty() {
            return None;
        }
        let by = self.by_pre_default();
        (0..self.k).max_by(|&a, &b| by[a].total_cmp(&by[b]).then(b.cmp(&a)))
    }
}

/// Pre-default histogram of the paths that jump into default.
pub fn predefault_distribution<'a>(k: usize, paths: impl IntoIterator<Item = &'a RatingPath>) -> Result<PreDefaultDistribution> {
    let mut counts = vec![vec![0usize; k]; k];
    let mut defaults = 0;
    for p in paths {
        if p.initial() >= k {
            return Err(Error::domain(format!("path rating {} outside 0..{k}", p.initial())));
        }
        if let Some(pre) = p.pre_default_rating() {
            counts[p.initial()][pre] += 1;
            defaults += 1;
        }
    }
    Ok(PreDefaultDistribution { k, counts, defaults })
}

/// Full XVA experiment on one set of common random numbers.
#[derive(Debug, Clone)]
pub struct XvaSetup {
    pub params: SdeParams,
    pub measure: MeasureChange,
    /// Grid of the rating SDE; its horizon is the XVA horizon.
    pub rating_grid: TimeGrid,
    pub m1: usize,
    pub m2: usize,
    pub portfolio: PortfolioSpec,
    pub terms: CsaTerms,
    pub bank_initial: usize,
    pub counterparty_initial: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct XvaRun {
    pub portfolio: Portfolio,
    /// Uncollateralized, perfect, triggers.
    pub results: Vec<XvaResult>,
}

/// The three standard regimes on identical paths.
pub fn standard_regimes(terms: &CsaTerms) -> Vec<CollateralRegime> {
    vec![
        CollateralRegime::Uncollateralized,
        CollateralRegime::Perfect,
        CollateralRegime::Triggers(terms.clone()),
    ]
}

/// Simulates generators, bank/counterparty rating paths and value paths,
/// then evaluates every regime on the same paths.
pub fn run_xva(setup: &XvaSetup, regimes: &[CollateralRegime], exec: Executor) -> Result<XvaRun> {
    setup.terms.validate()?;
    let k = setup.params.k();
    if setup.terms.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: setup.terms.k(),
        });
    }
    if setup.bank_initial >= k || setup.counterparty_initial >= k {
        return Err(Error::domain("initial ratings out of range"));
    }
    if setup.m1 == 0 || setup.m2 == 0 {
        return Err(Error::domain("path counts must be positive"));
    }
    let horizon = setup.rating_grid.horizon();
    if (setup.portfolio.horizon - horizon).abs() > 1e-12 {
        return Err(Error::domain("portfolio and rating horizons differ"));
    }
    let value_grid = TimeGrid::with_rate(horizon, setup.terms.postings_per_year)?;
    let portfolio = setup.portfolio.draw()?;
    let bundle = simulate_paths(
        &setup.params,
        &setup.measure,
        &setup.rating_grid,
        setup.m1,
        rng::derive_seed(setup.seed, "generators"),
        exec,
    )?;
    let value_seed = rng::derive_seed(setup.seed, "values");
    let per_gen = exec.try_map(setup.m1, |m1| -> Result<Vec<Vec<PathOutcome>>> {
        let g = generator_path(&bundle, m1)?;
        let mut out = vec![Vec::with_capacity(setup.m2); regimes.len()];
        for s in 0..setup.m2 {
            let idx = [m1 as u64, s as u64];
            let xb = ssa_sample(&g, setup.bank_initial, &mut rng::stream(setup.seed, "bank", &idx))?;
            let xc = ssa_sample(&g, setup.counterparty_initial, &mut rng::stream(setup.seed, "counterparty", &idx))?;
            let v = portfolio.value_path(&value_grid, value_seed, m1 * setup.m2 + s);
            for (r, regime) in regimes.iter().enumerate() {
                out[r].push(path_outcome(
                    &v,
                    &value_grid,
                    &xb,
                    &xc,
                    regime,
                    setup.terms.lgd_bank,
                    setup.terms.lgd_counterparty,
                )?);
            }
        }
        Ok(out)
    })?;
    let results = regimes
        .iter()
        .enumerate()
        .map(|(r, regime)| {
            let all: Vec<PathOutcome> = per_gen.iter().flat_map(|g| g[r].iter().copied()).collect();
            aggregate(regime.name(), &all)
        })
        .collect();
    Ok(XvaRun { portfolio, results })
}
