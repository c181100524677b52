//! Structural diagnostics of simulated rating matrices.
//!
//! Four checks, evaluated literally on every sampled matrix:
//! diagonal dominance of each row, downgrade mass at least upgrade
//! mass, a nondecreasing default column, and diagonals that do not increase
//! between consecutive checkpoints.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::sde::MatrixPathBundle;

/// Published diagnostic tenors in years.
pub const DEFAULT_CHECKPOINTS: [f64; 4] = [1.0 / 12.0, 3.0 / 12.0, 6.0 / 12.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Property {
    DiagonalDominance,
    DowngradeBias,
    MonotoneDefaultColumn,
    DecreasingDiagonal,
}

impl Property {
    pub const ALL: [Property; 4] = [
        Property::DiagonalDominance,
        Property::DowngradeBias,
        Property::MonotoneDefaultColumn,
        Property::DecreasingDiagonal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::DiagonalDominance => "diagonal-dominance",
            Property::DowngradeBias => "downgrade-bias",
            Property::MonotoneDefaultColumn => "monotone-default-column",
            Property::DecreasingDiagonal => "decreasing-diagonal",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Violation statistics for one property at one checkpoint.
///
/// For the decreasing-diagonal property `time` is the later checkpoint of the
/// consecutive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStat {
    pub time: f64,
    pub violating: usize,
    pub fraction: f64,
    /// Largest amount by which an inequality failed (0 when none failed).
    pub worst: f64,
    /// Offending `(row, col)` pairs, 0-based, with trajectory counts. Empty
    /// for the downgrade-bias property, which is a whole-matrix inequality.
    pub offending: BTreeMap<(usize, usize), usize>,
}

impl CheckpointStat {
    fn new(time: f64) -> Self {
        Self {
            time,
            violating: 0,
            fraction: 0.0,
            worst: 0.0,
            offending: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub trajectories: usize,
    pub checkpoints: Vec<f64>,
    pub stats: BTreeMap<Property, Vec<CheckpointStat>>,
}

impl PropertyReport {
    pub fn get(&self, p: Property) -> &[CheckpointStat] {
        self.stats.get(&p).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Largest violation fraction of `p` over checkpoints at or after `from`.
    pub fn max_fraction_from(&self, p: Property, from: f64) -> f64 {
        self.get(p)
            .iter()
            .filter(|s| s.time >= from - 1e-12)
            .map(|s| s.fraction)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "property,time,violating,fraction,worst")?;
        for (p, stats) in &self.stats {
            for s in stats {
                writeln!(f, "{p},{:.6},{},{:.6},{:.3e}", s.time, s.violating, s.fraction, s.worst)?;
            }
        }
        Ok(())
    }
}

/// Per-row violations of diagonal dominance `R_ii >= sum_{j != i} |R_ij|` as `(row, amount)`.
fn diag_dominance(r: &SquareMatrix) -> Vec<(usize, f64)> {
    let k = r.dim();
    (0..k)
        .filter_map(|i| {
            let off: f64 = (0..k).filter(|&j| j != i).map(|j| r[(i, j)].abs()).sum();
            let d = r[(i, i)].abs();
            (d < off).then_some((i, off - d))
        })
        .collect()
}

fn downgrade_bias(r: &SquareMatrix) -> Option<f64> {
    let k = r.dim();
    let (mut up, mut low) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            if i < j {
                up += r[(i, j)];
            } else if i > j {
                low += r[(i, j)];
            }
        }
    }
    (up < low).then_some(low - up)
}

/// Adjacent pairs `(i, i+1)` with `R_{i,K} > R_{i+1,K}`.
fn default_column(r: &SquareMatrix) -> Vec<(usize, f64)> {
    let k = r.dim();
    (0..k - 1)
        .filter_map(|i| {
            let gap = r[(i, k - 1)] - r[(i + 1, k - 1)];
            (gap > 0.0).then_some((i, gap))
        })
        .collect()
}

fn diag_increase(prev: &SquareMatrix, next: &SquareMatrix) -> Vec<(usize, f64)> {
    (0..prev.dim())
        .filter_map(|i| {
            let gap = next[(i, i)] - prev[(i, i)];
            (gap > 0.0).then_some((i, gap))
        })
        .collect()
}

fn record(stat: &mut CheckpointStat, hits: &[((usize, usize), f64)]) {
    if hits.is_empty() {
        return;
    }
    stat.violating += 1;
    for &(pair, amount) in hits {
        stat.worst = stat.worst.max(amount);
        *stat.offending.entry(pair).or_default() += 1;
    }
}

/// Evaluates the four properties on `snapshots[traj][checkpoint]`.
pub fn property_report_from(snapshots: &[Vec<SquareMatrix>], times: &[f64]) -> Result<PropertyReport> {
    if snapshots.iter().any(|s| s.len() != times.len()) {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            found: snapshots.iter().map(Vec::len).find(|&l| l != times.len()).unwrap_or(0),
        });
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("checkpoints must be strictly increasing"));
    }
    let mut stats: BTreeMap<Property, Vec<CheckpointStat>> = BTreeMap::new();
    for p in Property::ALL {
        let v = match p {
            Property::DecreasingDiagonal => times.iter().skip(1).map(|&t| CheckpointStat::new(t)).collect(),
            _ => times.iter().map(|&t| CheckpointStat::new(t)).collect(),
        };
        stats.insert(p, v);
    }
    for traj in snapshots {
        for (c, r) in traj.iter().enumerate() {
            let dd: Vec<_> = diag_dominance(r).into_iter().map(|(i, v)| ((i, i), v)).collect();
            record(&mut stats.get_mut(&Property::DiagonalDominance).unwrap()[c], &dd);

            let s = &mut stats.get_mut(&Property::DowngradeBias).unwrap()[c];
            if let Some(v) = downgrade_bias(r) {
                s.violating += 1;
                s.worst = s.worst.max(v);
            }

            let dc: Vec<_> = default_column(r).into_iter().map(|(i, v)| ((i, i + 1), v)).collect();
            record(&mut stats.get_mut(&Property::MonotoneDefaultColumn).unwrap()[c], &dc);

            if c > 0 {
                let di: Vec<_> = diag_increase(&traj[c - 1], r).into_iter().map(|(i, v)| ((i, i), v)).collect();
                record(&mut stats.get_mut(&Property::DecreasingDiagonal).unwrap()[c - 1], &di);
            }
        }
    }
    let n = snapshots.len();
    for s in stats.values_mut().flatten() {
        s.fraction = if n == 0 { 0.0 } else { s.violating as f64 / n as f64 };
    }
    Ok(PropertyReport {
        trajectories: n,
        checkpoints: times.to_vec(),
        stats,
    })
}

/// Property diagnostics of a simulated bundle at grid times `checkpoints`.
pub fn property_report(bundle: &MatrixPathBundle, checkpoints: &[f64]) -> Result<PropertyReport> {
    let steps = checkpoints.iter().map(|&t| bundle.grid().index_of(t)).collect::<Result<Vec<_>>>()?;
    let snaps: Vec<Vec<SquareMatrix>> = (0..bundle.trajectories())
        .map(|m| steps.iter().map(|&s| bundle.r_at(m, s)).collect())
        .collect();
    property_report_from(&snaps, checkpoints)
}
