//! Box-constrained Levenberg-Marquardt with a forward-difference Jacobian.
//!
//! Steps solve `(J^T J + mu D) d = -J^T r` over the free
//! variables, where `D` holds the largest diagonal of `J^T J` seen so far,
//! pinning any coordinate the step would carry out of the box.
//! A variable sitting on a bound whose gradient points outward is held
//! fixed for that iteration. Damping follows Nielsen's gain-ratio update.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when an accepted step reduces the cost by less than `ftol * cost`.
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    /// Finite-difference step is `rel_step * max(|x_j|, 1)`.
    pub rel_step: f64,
    pub init_damping: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LmOptions {
    pub fn bounded(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            max_iter: 100,
            ftol: 1e-10,
            xtol: 1e-10,
            gtol: 1e-14,
            rel_step: 1e-6,
            init_damping: 1e-3,
            lower,
            upper,
        }
    }

    pub fn unbounded(n: usize) -> Self {
        Self::bounded(vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStatus {
    SmallCostReduction,
    SmallStep,
    SmallGradient,
    ZeroResidual,
    /// Damping grew without finding a decrease.
    Stalled,
    MaxIterations,
}

impl LmStatus {
    pub fn converged(self) -> bool {
        !matches!(self, LmStatus::MaxIterations)
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LmStatus,
    /// Per variable: whether it ended on a bound.
    pub at_bound: Vec<bool>,
}

impl LmReport {
    pub fn any_at_bound(&self) -> bool {
        self.at_bound.iter().any(|&b| b)
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn damped(jtj: &DMatrix<f64>, set: &[usize], mu: f64, scale: &[f64]) -> DMatrix<f64> {
    let nf = set.len();
    let mut a = DMatrix::<f64>::zeros(nf, nf);
    for (p, &jp) in set.iter().enumerate() {
        for (q, &jq) in set.iter().enumerate() {
            a[(p, q)] = jtj[(jp, jq)];
        }
        a[(p, p)] += mu * scale[jp];
    }
    a
}

fn solve(a: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Some(ch.solve(rhs)),
        None => a.lu().solve(rhs),
    }
}

/// Damped Gauss-Newton step over `free`, kept inside the box: coordinates
/// whose step would leave the box are pinned at the bound they cross and
/// the rest is re-solved with that pinned step taken into account.
fn bounded_step(
    x: &[f64],
    free: &[usize],
    jtj: &DMatrix<f64>,
    g: &DVector<f64>,
    mu: f64,
    scale: &[f64],
    opts: &LmOptions,
) -> Option<Vec<f64>> {
    let mut step = vec![0.0; x.len()];
    let mut solve_set: Vec<usize> = free.to_vec();
    let mut pinned: Vec<usize> = Vec::new();
    while !solve_set.is_empty() {
        let mut rhs = DVector::<f64>::zeros(solve_set.len());
        for (p, &jp) in solve_set.iter().enumerate() {
            rhs[p] = -g[jp] - pinned.iter().map(|&jq| jtj[(jp, jq)] * step[jq]).sum::<f64>();
        }
        let delta = solve(damped(jtj, &solve_set, mu, scale), &rhs)?;
        let mut crossed = Vec::new();
        for (p, &jp) in solve_set.iter().enumerate() {
            let v = x[jp] + delta[p];
            step[jp] = delta[p];
            if v < opts.lower[jp] || v > opts.upper[jp] {
                step[jp] = v.clamp(opts.lower[jp], opts.upper[jp]) - x[jp];
                crossed.push(jp);
            }
        }
        if crossed.is_empty() {
            break;
        }
        solve_set.retain(|j| !crossed.contains(j));
        pinned.extend(crossed);
    }
    Some(step)
}

/// Minimizes `|f(x)|^2` over the box `[lower, upper]` starting from `x0`.
pub fn minimize<F>(f: F, x0: &[f64], opts: &LmOptions) -> Result<LmReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    if opts.lower.len() != n || opts.upper.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: opts.lower.len().min(opts.upper.len()),
        });
    }
    if opts.lower.iter().zip(&opts.upper).any(|(l, u)| l > u) {
        return Err(Error::domain("lower bound above upper bound"));
    }
    let clamp = |x: &mut [f64]| {
        for ((v, lo), hi) in x.iter_mut().zip(&opts.lower).zip(&opts.upper) {
            *v = v.clamp(*lo, *hi);
        }
    };

    let mut x = x0.to_vec();
    clamp(&mut x);
    let mut r = f(&x)?;
    let mut evaluations = 1;
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::Numerical("objective is not finite at the start point".into()));
    }
    let m = r.len();
    let mut mu = opts.init_damping;
    let mut nu = 2.0;
    let mut scale = vec![0.0_f64; n];
    let mut status = LmStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if cost <= 1e-30 {
            status = LmStatus::ZeroResidual;
            break;
        }
        iterations += 1;

        // forward differences, backward at the upper bound; pinned
        // coordinates keep a zero column
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            if opts.lower[j] == opts.upper[j] {
                continue;
            }
            let mut h = opts.rel_step * x[j].abs().max(1.0);
            if x[j] + h > opts.upper[j] {
                h = -h;
            }
            let mut xp = x.clone();
            xp[j] += h;
            let rp = f(&xp)?;
            evaluations += 1;
            let step = xp[j] - x[j];
            for i in 0..m {
                jac[(i, j)] = (rp[i] - r[i]) / step;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let g = jac.transpose() * &rv;
        let jtj = jac.transpose() * &jac;

        let free: Vec<usize> = (0..n)
            .filter(|&j| {
                let at_lo = x[j] <= opts.lower[j] && g[j] > 0.0;
                let at_hi = x[j] >= opts.upper[j] && g[j] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        let pg = free.iter().map(|&j| g[j].abs()).fold(0.0, f64::max);
        if free.is_empty() || pg <= opts.gtol {
            status = LmStatus::SmallGradient;
            break;
        }

        // damping scale never shrinks, so a coordinate whose column fades
        // keeps the damping it had
        let max_diag = (0..n).map(|j| jtj[(j, j)]).fold(0.0, f64::max);
        for j in 0..n {
            scale[j] = scale[j].max(jtj[(j, j)]).max(1e-12 * max_diag).max(1e-300);
        }
        let mut accepted = false;
        while mu < 1e16 {
            let Some(v) = bounded_step(&x, &free, &jtj, &g, mu, &scale, opts) else {
                mu *= nu;
                nu *= 2.0;
                continue;
            };
            let vv = DVector::from_column_slice(&v);
            let predicted = -(2.0 * g.dot(&vv) + (&jtj * &vv).dot(&vv));
            let mut x_new: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
            clamp(&mut x_new);
            let r_new = f(&x_new)?;
            evaluations += 1;
            let cost_new = sum_sq(&r_new);
            if cost_new.is_finite() && cost_new < cost {
                let step_norm = x_new.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let reduction = cost - cost_new;
                x = x_new;
                r = r_new;
                let old_cost = cost;
                cost = cost_new;
                let rho = if predicted > 0.0 { reduction / predicted } else { 1.0 };
                mu = (mu * (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0)).max(1e-12);
                nu = 2.0;
                accepted = true;
                if reduction <= opts.ftol * old_cost {
                    status = LmStatus::SmallCostReduction;
                } else if step_norm <= opts.xtol * (x_norm + opts.xtol) {
                    status = LmStatus::SmallStep;
                }
                break;
            }
            mu *= nu;
            nu *= 2.0;
        }
        if !accepted {
            status = LmStatus::Stalled;
            break;
        }
        if status != LmStatus::MaxIterations {
            break;
        }
    }

    let at_bound = x
        .iter()
        .zip(&opts.lower)
        .zip(&opts.upper)
        .map(|((v, lo), hi)| v <= lo || v >= hi)
        .collect();
    Ok(LmReport {
        x,
        residual: r,
        cost,
        iterations,
        evaluations,
        status,
        at_bound,
    })
}
