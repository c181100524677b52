//! One function per subcommand. Each writes its CSV outputs, a run summary
//! (`summary_<command>.json`, deterministic) and wall-clock timings
//! (`timings_<command>.json`, not deterministic) into the output directory.

use crate::config::{RunConfig, COMPUTED};
use crate::error::{AppError, AppResult, Context};
use crate::svg::{self, Elem, Panel, PALETTE};
use lierate::calibrate::{calibrate_historical, calibrate_risk_neutral, HistCalibrationSpec, HistObjective, RnCalibrationSpec};
use lierate::cohort::{adjusted_matrix, distance_matrix, reconstruct, uncertainty_target, withdrawal_rates};
use lierate::lie::{validate_stochastic, PUBLISHED_TOL};
use lierate::properties::property_report;
use lierate::sde::{mean_matrix, simulate_paths, var_matrix, MatrixPathBundle};
use lierate::ssa::{nested_error, nested_simulate, NestedPaths};
use lierate::xva::{predefault_distribution, run_xva, PreDefaultDistribution, XvaSetup};
use lierate::{io, rng, Executor, SdeParams, SquareMatrix, StochasticMatrix};
use serde_json::{json, Value};
use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

const EXEC: Executor = Executor::Parallel;

/// Output files of one command plus phase timings.
pub struct Run<'a> {
    cfg: &'a RunConfig,
    command: &'static str,
    files: Vec<String>,
    seeds: serde_json::Map<String, Value>,
    phases: Vec<(&'static str, f64)>,
    clock: Instant,
}

impl<'a> Run<'a> {
    pub fn start(cfg: &'a RunConfig, command: &'static str) -> AppResult<Self> {
        std::fs::create_dir_all(&cfg.out).map_err(|e| AppError::io(&cfg.out, e))?;
        Ok(Self {
            cfg,
            command,
            files: Vec::new(),
            seeds: Default::default(),
            phases: Vec::new(),
            clock: Instant::now(),
        })
    }

    /// Component seed derived from the master seed under `label`.
    fn seed(&mut self, label: &str) -> u64 {
        let s = rng::derive_seed(self.cfg.seed, label);
        self.seeds.insert(label.to_string(), json!(s));
        s
    }

    fn lap(&mut self, phase: &'static str) {
        self.phases.push((phase, self.clock.elapsed().as_secs_f64()));
        self.clock = Instant::now();
    }

    fn write(&mut self, name: &str, contents: &str) -> AppResult<()> {
        let path = self.cfg.out.join(name);
        std::fs::write(&path, contents).map_err(|e| AppError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, inputs: &[&str], results: Value) -> AppResult<PathBuf> {
        self.lap("write");
        let inputs: serde_json::Map<String, Value> = self
            .cfg
            .input_records(inputs)
            .into_iter()
            .map(|(k, (source, sha))| (k, json!({ "source": source, "sha256": sha })))
            .collect();
        let summary = json!({
            "command": self.command,
            "seed": self.cfg.seed,
            "component_seeds": self.seeds,
            "config_sha256": self.cfg.config_sha256,
            "inputs": inputs,
            "outputs": self.files,
            "results": results,
        });
        let name = format!("summary_{}.json", self.command);
        let path = self.cfg.out.join(&name);
        write_json(&path, &summary)?;
        let timings = json!({
            "command": self.command,
            "threads": rayon::current_num_threads(),
            "seconds": self.phases.iter().map(|(p, s)| (p.to_string(), json!(s))).collect::<serde_json::Map<_, _>>(),
        });
        write_json(&self.cfg.out.join(format!("timings_{}.json", self.command)), &timings)?;
        Ok(path)
    }
}

fn write_json(path: &Path, v: &Value) -> AppResult<()> {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| AppError::io(path, e))
}

fn matrix_csv(cfg: &RunConfig, m: &SquareMatrix) -> AppResult<String> {
    Ok(io::write_rating_matrix(&cfg.labels, m, None)?)
}

/// Reference reconstructed matrix: the configured input, or the cohort
/// reconstruction with the configured weights.
fn reference_matrix(cfg: &RunConfig) -> AppResult<(SquareMatrix, bool)> {
    match &cfg.reconstructed {
        Some(m) => Ok((m.clone(), true)),
        None => {
            let w = cfg.weights.provider().weights(&cfg.cohort)?;
            Ok((reconstruct(&cfg.cohort, &w)?.into_matrix(), false))
        }
    }
}

pub fn reconstruct_cmd(cfg: &RunConfig) -> AppResult<PathBuf> {
    let mut run = Run::start(cfg, "reconstruct")?;
    let w = cfg.weights.provider().weights(&cfg.cohort)?;
    let rec = reconstruct(&cfg.cohort, &w)?;
    let (reference, from_input) = reference_matrix(cfg)?;
    let cohort = cfg.cohort.as_matrix();
    let d = distance_matrix(&reference, cohort)?;
    let adj = adjusted_matrix(cohort, &reference)?;
    let unc = uncertainty_target(&reference, &adj)?;
    run.lap("compute");
    run.write("reconstructed.csv", &matrix_csv(cfg, rec.as_matrix())?)?;
    run.write("distance.csv", &matrix_csv(cfg, &d)?)?;
    run.write("adjusted.csv", &matrix_csv(cfg, &adj)?)?;
    run.write("uncertainty.csv", &matrix_csv(cfg, &unc)?)?;
    let check = validate_stochastic(rec.as_matrix(), 1e-12);
    run.finish(
        &["cohort", "reconstructed", "weights"],
        json!({
            "weights": cfg.raw.inputs.weights,
            "reference": if from_input { cfg.raw.inputs.reconstructed.as_str() } else { COMPUTED },
            "withdrawals": withdrawal_rates(&cfg.cohort),
            "max_row_sum_deviation": check.max_row_sum_deviation(),
        }),
    )
}

fn metric_csv(rows: &[(String, String)]) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        writeln!(s, "{k},{v}").unwrap();
    }
    s
}

pub fn calibrate_hist_cmd(cfg: &RunConfig) -> AppResult<PathBuf> {
    let mut run = Run::start(cfg, "calibrate-hist")?;
    let (reference, from_input) = reference_matrix(cfg)?;
    let tol = if from_input { PUBLISHED_TOL } else { 1e-10 };
    let target = StochasticMatrix::new(reference, tol).context("reference matrix")?;
    let adjusted = adjusted_matrix(cfg.cohort.as_matrix(), target.as_matrix())?;
    let c = &cfg.raw.calibration;
    let k = cfg.k();
    let mut spec = HistCalibrationSpec::new(target, adjusted, cfg.grid, cfg.raw.sizes.m, run.seed("calibrate-hist"))?;
    spec.w1 = c.w1;
    spec.w2 = c.w2;
    spec.max_iter = c.max_iter;
    spec.start = SdeParams::uniform(k, c.start[0], c.start[1], c.start[2])?;
    let n = spec.lower.len();
    spec.lower = vec![c.lower; n];
    spec.upper = vec![c.upper; n];
    spec.validate()?;
    let cal = calibrate_historical(&spec, EXEC)?;
    let (mean, var) = HistObjective::new(&spec, EXEC)?.moments(&cal.params)?;
    run.lap("compute");
    run.write("params_hist.csv", &io::write_sde_params(&cal.params))?;
    run.write(
        "calibration_hist.csv",
        &metric_csv(&[
            ("sse".into(), cal.sse.to_string()),
            ("iterations".into(), cal.iterations.to_string()),
            ("evaluations".into(), cal.evaluations.to_string()),
            ("status".into(), format!("{:?}", cal.status)),
            ("warning".into(), cal.warning.clone().unwrap_or_default()),
        ]),
    )?;
    run.write("fit_mean.csv", &matrix_csv(cfg, &mean)?)?;
    run.write("fit_variance.csv", &matrix_csv(cfg, &var)?)?;
    run.finish(
        &["cohort", "reconstructed", "weights"],
        json!({
            "sse": cal.sse,
            "iterations": cal.iterations,
            "evaluations": cal.evaluations,
            "status": format!("{:?}", cal.status),
            "warning": cal.warning,
            "trajectories": cfg.raw.sizes.m,
        }),
    )
}

pub fn calibrate_rn_cmd(cfg: &RunConfig) -> AppResult<PathBuf> {
    let mut run = Run::start(cfg, "calibrate-rn")?;
    let mut spec = RnCalibrationSpec::new(
        cfg.params.clone(),
        cfg.rn_kind,
        cfg.pd.clone(),
        cfg.grid,
        cfg.raw.sizes.m,
        run.seed("calibrate-rn"),
    );
    spec.max_iter = cfg.raw.calibration.rn_max_iter;
    let cal = calibrate_risk_neutral(&spec, EXEC)?;
    run.lap("compute");
    run.write("measure_rn.csv", &io::write_measure(&cfg.labels, &cal.measure)?)?;
    let mut rows = vec![
        ("kind".to_string(), cfg.rn_kind.name().to_string()),
        ("sse".into(), cal.sse.to_string()),
        ("iterations".into(), cal.iterations.to_string()),
        ("status".into(), format!("{:?}", cal.status)),
        ("warning".into(), cal.warning.clone().unwrap_or_default()),
    ];
    for (l, r) in cfg.labels.iter().zip(&cal.residual) {
        rows.push((format!("residual_{l}"), r.to_string()));
    }
    run.write("calibration_rn.csv", &metric_csv(&rows))?;
    run.finish(
        &["params", "pd_targets"],
        json!({
            "kind": cfg.rn_kind.name(),
            "h": cal.measure.h(),
            "sse": cal.sse,
            "residual": cal.residual,
            "iterations": cal.iterations,
            "status": format!("{:?}", cal.status),
            "warning": cal.warning,
        }),
    )
}

fn entry_label(cfg: &RunConfig, i: usize, j: usize) -> String {
    format!("{}-{}", cfg.labels[i], cfg.labels[j])
}

fn fan_chart(cfg: &RunConfig, b: &MatrixPathBundle) -> AppResult<String> {
    let k = cfg.k();
    let grid = b.grid();
    let shown = cfg.raw.diagnostics.fan_paths.min(b.trajectories());
    let times: Vec<f64> = (0..=grid.steps()).map(|s| grid.time(s)).collect();
    let mut means = Vec::with_capacity(times.len());
    for &t in &times {
        means.push(mean_matrix(b, t)?);
    }
    let mut panels = Vec::new();
    for i in 0..k - 1 {
        for j in 0..k {
            let mut elems: Vec<Elem> = (0..shown)
                .map(|m| Elem::Line {
                    points: (0..times.len()).map(|s| (times[s], b.r_slice(m, s)[i * k + j])).collect(),
                    color: PALETTE[0].into(),
                    width: 0.6,
                    opacity: 0.35,
                    dashed: false,
                })
                .collect();
            elems.push(Elem::Line {
                points: times.iter().zip(&means).map(|(&t, m)| (t, m[(i, j)])).collect(),
                color: PALETTE[1].into(),
                width: 1.6,
                opacity: 1.0,
                dashed: false,
            });
            panels.push(Panel::fitted(entry_label(cfg, i, j), elems));
        }
    }
    Ok(svg::render(
        &format!("Matrix trajectories ({shown} of {} paths, mean in red)", b.trajectories()),
        &panels,
        k,
    ))
}

fn histogram_chart(cfg: &RunConfig, b: &MatrixPathBundle) -> String {
    let k = cfg.k();
    let last = b.grid().steps();
    let mut panels = Vec::new();
    for i in 0..k - 1 {
        for j in 0..k {
            let xs: Vec<f64> = (0..b.trajectories()).map(|m| b.r_slice(m, last)[i * k + j]).collect();
            panels.push(Panel::fitted(
                entry_label(cfg, i, j),
                svg::histogram(&xs, cfg.raw.diagnostics.histogram_bins, PALETTE[0]),
            ));
        }
    }
    svg::render(&format!("Entry distributions at t = {}", b.grid().horizon()), &panels, k)
}

pub fn simulate_cmd(cfg: &RunConfig) -> AppResult<PathBuf> {
    let mut run = Run::start(cfg, "simulate")?;
    let seed = run.seed("simulate");
    let bundle = simulate_paths(&cfg.params, &cfg.measure, &cfg.grid, cfg.raw.sizes.m, seed, EXEC)?;
    let horizon = cfg.grid.horizon();
    let mean = mean_matrix(&bundle, horizon)?;
    let var = var_matrix(&bundle, horizon)?;
    let props = property_report(&bundle, &cfg.checkpoints)?;
    let fans = fan_chart(cfg, &bundle)?;
    let hist = histogram_chart(cfg, &bundle);
    run.lap("compute");
    run.write("mean.csv", &matrix_csv(cfg, &mean)?)?;
    run.write("variance.csv", &matrix_csv(cfg, &var)?)?;
    run.write("properties.csv", &props.to_string())?;
    run.write("fans.svg", &fans)?;
    run.write("histograms.svg", &hist)?;
    let max_fraction: serde_json::Map<String, Value> = lierate::properties::Property::ALL
        .iter()
        .map(|&p| (p.name().to_string(), json!(props.max_fraction_from(p, 0.0))))
        .collect();
    run.finish(
        &["params", "measure"],
        json!({
            "measure": cfg.measure.kind.name(),
            "trajectories": cfg.raw.sizes.m,
            "max_violation_fraction": max_fraction,
        }),
    )
}

/// Occupancy frequencies `[m1]` at `step` from nested paths started in
/// every rating.
fn occupancy_at(paths: &NestedPaths, step: usize) -> Vec<SquareMatrix> {
    let k = paths.k();
    let m2 = paths.m2() as f64;
    (0..paths.m1())
        .map(|m1| {
            let mut o = SquareMatrix::zeros(k);
            for p in paths.of_generator(m1) {
                o[(p.initial(), p.snapshot(step))] += 1.0;
            }
            o.map(|c| c / m2)
        })
        .collect()
}

fn mean_of(ms: &[SquareMatrix]) -> SquareMatrix {
    lierate::sde::sample_mean(ms).expect("non-empty and same size")
}

fn occupancy_chart(cfg: &RunConfig, paths: &NestedPaths, bundle: &MatrixPathBundle) -> AppResult<String> {
    let k = cfg.k();
    let grid = bundle.grid();
    let times: Vec<f64> = (0..=grid.steps()).map(|s| grid.time(s)).collect();
    let mut occ = Vec::with_capacity(times.len());
    let mut gem = Vec::with_capacity(times.len());
    for (s, &t) in times.iter().enumerate() {
        occ.push(mean_of(&occupancy_at(paths, s)));
        gem.push(mean_matrix(bundle, t)?);
    }
    let mut panels = Vec::new();
    for i in 0..k - 1 {
        let mut elems = Vec::new();
        for j in 0..k {
            let color = PALETTE[j % PALETTE.len()].to_string();
            elems.push(Elem::Line {
                points: times.iter().zip(&occ).map(|(&t, m)| (t, m[(i, j)])).collect(),
                color: color.clone(),
                width: 1.2,
                opacity: 1.0,
                dashed: false,
            });
            elems.push(Elem::Line {
                points: times.iter().zip(&gem).map(|(&t, m)| (t, m[(i, j)])).collect(),
                color,
                width: 1.2,
                opacity: 0.8,
                dashed: true,
            });
        }
        panels.push(Panel::fitted(format!("start {}", cfg.labels[i]), elems));
    }
    let legend: Vec<String> = cfg
        .labels
        .iter()
        .enumerate()
        .map(|(j, l)| format!("{l}:{}", PALETTE[j % PALETTE.len()]))
        .collect();
    Ok(svg::render(
        &format!("Occupancy (SSA solid, matrix mean dashed; {})", legend.join(" ")),
        &panels,
        k - 1,
    ))
}

fn predefault_chart(cfg: &RunConfig, d: &PreDefaultDistribution) -> String {
    let f = d.fractions();
    let mut elems = Vec::new();
    for j in 0..cfg.k() {
        let mut base = 0.0;
        for (i, row) in f.iter().enumerate() {
            if row[j] > 0.0 {
                elems.push(Elem::Rect {
                    x0: j as f64 + 0.1,
                    x1: j as f64 + 0.9,
                    y0: base,
                    y1: base + row[j],
                    color: PALETTE[i % PALETTE.len()].into(),
                });
                base += row[j];
            }
        }
    }
    elems.push(Elem::Rect {
        x0: 0.0,
        x1: cfg.k() as f64,
        y0: 0.0,
        y1: 0.0,
        color: "none".into(),
    });
    let legend: Vec<String> = cfg
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("from {l}:{}", PALETTE[i % PALETTE.len()]))
        .collect();
    let title = format!("Pre-default rating ({} defaults; columns {})", d.defaults, cfg.labels.join(" "));
    svg::render(&title, &[Panel::fitted(legend.join(" "), elems)], 1)
}

fn predefault_csv(cfg: &RunConfig, d: &PreDefaultDistribution) -> String {
    let mut s = String::from("initial");
    for l in &cfg.labels {
        write!(s, ",{l}").unwrap();
    }
    s.push('\n');
    for (i, row) in d.counts.iter().enumerate() {
        s.push_str(&cfg.labels[i]);
        for c in row {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn ssa_cmd(cfg: &RunConfig) -> AppResult<PathBuf> {
    let mut run = Run::start(cfg, "ssa")?;
    let k = cfg.k();
    let gen_seed = run.seed("ssa-generators");
    let path_seed = run.seed("ssa-paths");
    let sizes = &cfg.raw.sizes;
    let bundle = simulate_paths(&cfg.params, &cfg.measure, &cfg.grid, sizes.m1, gen_seed, EXEC)?;
    let initials: Vec<usize> = (0..k).collect();
    let paths = nested_simulate(&bundle, &initials, sizes.m2, path_seed, EXEC)?;
    let mut errors = String::from("time,error\n");
    let mut error_json = serde_json::Map::new();
    for &t in &cfg.checkpoints {
        let step = cfg.grid.index_of(t)?;
        let e = nested_error(&bundle, &occupancy_at(&paths, step), step)?;
        writeln!(errors, "{t},{e}").unwrap();
        error_json.insert(t.to_string(), json!(e));
    }
    let terminal = mean_of(&occupancy_at(&paths, cfg.grid.steps()));
    let pre = predefault_distribution(k, paths.all().iter().filter(|p| p.initial() + 1 < k))?;
    let dump: Vec<_> = initials
        .iter()
        .flat_map(|&i| {
            let per = paths.of_generator(0);
            per[i * sizes.m2..i * sizes.m2 + cfg.raw.diagnostics.dump_paths.min(sizes.m2)].iter()
        })
        .collect();
    let occ_svg = occupancy_chart(cfg, &paths, &bundle)?;
    let pre_svg = predefault_chart(cfg, &pre);
    run.lap("compute");
    run.write("ssa_error.csv", &errors)?;
    run.write("occupancy.csv", &matrix_csv(cfg, &terminal)?)?;
    run.write("predefault.csv", &predefault_csv(cfg, &pre))?;
    run.write("paths.csv", &io::write_path_dump(&cfg.labels, dump))?;
    run.write("occupancy.svg", &occ_svg)?;
    run.write("predefault.svg", &pre_svg)?;
    run.finish(
        &["params", "measure"],
        json!({
            "measure": cfg.measure.kind.name(),
            "m1": sizes.m1,
            "m2": sizes.m2,
            "error": error_json,
            "defaults": pre.defaults,
            "modal_pre_default": pre.modal_pre_default().map(|j| cfg.labels[j].clone()),
        }),
    )
}

pub fn xva_cmd(cfg: &RunConfig) -> AppResult<PathBuf> {
    let mut run = Run::start(cfg, "xva")?;
    let portfolio_seed = run.seed("portfolio");
    let setup = XvaSetup {
        params: cfg.params.clone(),
        measure: cfg.measure.clone(),
        rating_grid: cfg.grid,
        m1: cfg.raw.xva.m1,
        m2: cfg.raw.xva.m2,
        portfolio: cfg.portfolio(portfolio_seed),
        terms: cfg.terms.clone(),
        bank_initial: cfg.bank_initial,
        counterparty_initial: cfg.counterparty_initial,
        seed: run.seed("xva"),
    };
    let out = run_xva(&setup, &cfg.regimes, EXEC)?;
    run.lap("compute");
    run.write("xva.csv", &io::write_xva_report(&out.results))?;
    let mut pf = String::from("component,sigma,lifetime\n");
    writeln!(pf, "0,{},inf", out.portfolio.sigma0).unwrap();
    for (i, (s, l)) in out.portfolio.sigmas.iter().zip(&out.portfolio.lifetimes).enumerate() {
        writeln!(pf, "{},{s},{l}", i + 1).unwrap();
    }
    run.write("portfolio.csv", &pf)?;
    let rows: Vec<Value> = out
        .results
        .iter()
        .map(|r| json!({ "regime": r.regime, "cva": r.cva, "dva": r.dva, "bva": r.bva }))
        .collect();
    run.finish(
        &["params", "measure"],
        json!({
            "measure": cfg.measure.kind.name(),
            "paths": setup.m1 * setup.m2,
            "regimes": rows,
        }),
    )
}
