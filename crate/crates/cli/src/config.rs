//! Run configuration: a TOML file with dotted keys, see `docs/config.md`.
//!
//! Loading resolves and parses every referenced input, checks that all of
//! them agree on the rating scale and that checkpoints sit on the grid. No
//! simulation runs before that.

use crate::error::{AppError, AppResult, Context};
use lierate::calibrate::PdTargets;
use lierate::cohort::{CohortMatrix, FixedWeights, ProportionalWeights, UniformWeights, WeightMatrix, WeightProvider};
use lierate::io;
use lierate::properties::DEFAULT_CHECKPOINTS;
use lierate::reference_data as data;
use lierate::xva::{CollateralRegime, CsaTerms, PortfolioSpec};
use lierate::{MeasureChange, MeasureKind, SdeParams, SquareMatrix, TimeGrid};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const BUILTIN: &str = "builtin:";
/// `inputs.reconstructed` value that reconstructs from the cohort instead.
pub const COMPUTED: &str = "computed";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawConfig {
    pub seed: Option<u64>,
    pub labels: Vec<String>,
    pub grid: GridCfg,
    pub sizes: SizesCfg,
    pub inputs: InputsCfg,
    pub calibration: CalibrationCfg,
    pub measure: MeasureCfg,
    pub diagnostics: DiagnosticsCfg,
    pub csa: CsaCfg,
    pub portfolio: PortfolioCfg,
    pub xva: XvaCfg,
    pub output: OutputCfg,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            seed: None,
            labels: data::LABELS.iter().map(|s| s.to_string()).collect(),
            grid: GridCfg::default(),
            sizes: SizesCfg::default(),
            inputs: InputsCfg::default(),
            calibration: CalibrationCfg::default(),
            measure: MeasureCfg::default(),
            diagnostics: DiagnosticsCfg::default(),
            csa: CsaCfg::default(),
            portfolio: PortfolioCfg::default(),
            xva: XvaCfg::default(),
            output: OutputCfg::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridCfg {
    pub horizon: f64,
    pub steps_per_year: usize,
}

impl Default for GridCfg {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps_per_year: 120,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizesCfg {
    /// Matrix trajectories for calibration and `simulate`.
    pub m: usize,
    /// Generator trajectories of the nested SSA.
    pub m1: usize,
    /// SSA paths per generator and initial rating.
    pub m2: usize,
}

impl Default for SizesCfg {
    fn default() -> Self {
        Self {
            m: 1000,
            m1: 100,
            m2: 1000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsCfg {
    pub cohort: String,
    pub reconstructed: String,
    pub params: String,
    pub pd_targets: String,
    /// `uniform`, `proportional` or a weight-matrix CSV.
    pub weights: String,
}

impl Default for InputsCfg {
    fn default() -> Self {
        Self {
            cohort: "builtin:cohort".into(),
            reconstructed: "builtin:reconstructed".into(),
            params: "builtin:params".into(),
            pd_targets: "builtin:pd-case-2".into(),
            weights: "uniform".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationCfg {
    pub max_iter: usize,
    pub w1: f64,
    pub w2: f64,
    /// Uniform start `(a, b, sigma)`.
    pub start: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    /// Measure family fitted by `calibrate-rn`.
    pub rn_kind: String,
    pub rn_max_iter: usize,
}

impl Default for CalibrationCfg {
    fn default() -> Self {
        let s = lierate::calibrate::DEFAULT_START;
        let b = lierate::calibrate::DEFAULT_BOUNDS;
        Self {
            max_iter: 100,
            w1: 1.0,
            w2: 1.0,
            start: [s.0, s.1, s.2],
            lower: b.0,
            upper: b.1,
            rn_kind: "exponential".into(),
            rn_max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureCfg {
    pub kind: String,
    /// Free entries `h_1..h_{K-1}`.
    pub h: Option<Vec<f64>>,
    /// Measure CSV or `builtin:case-N`.
    pub source: Option<String>,
}

impl Default for MeasureCfg {
    fn default() -> Self {
        Self {
            kind: "historical".into(),
            h: None,
            source: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsCfg {
    pub checkpoints: Vec<f64>,
    pub fan_paths: usize,
    pub histogram_bins: usize,
    /// SSA paths per initial rating written to the path dump.
    pub dump_paths: usize,
}

impl Default for DiagnosticsCfg {
    fn default() -> Self {
        Self {
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            fan_paths: 50,
            histogram_bins: 30,
            dump_paths: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsaCfg {
    /// Any of `none`, `perfect`, `triggers`.
    pub regimes: Vec<String>,
    pub bank_thresholds: Vec<f64>,
    /// Defaults to the bank thresholds.
    pub counterparty_thresholds: Option<Vec<f64>>,
    pub lgd_bank: f64,
    pub lgd_counterparty: f64,
    pub postings_per_year: usize,
}

impl Default for CsaCfg {
    fn default() -> Self {
        Self {
            regimes: vec!["none".into(), "perfect".into(), "triggers".into()],
            bank_thresholds: data::TRIGGER_THRESHOLDS.to_vec(),
            counterparty_thresholds: None,
            lgd_bank: 0.6,
            lgd_counterparty: 0.6,
            postings_per_year: 365,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortfolioCfg {
    pub v0: f64,
    pub n: usize,
    pub sigma_scale: f64,
}

impl Default for PortfolioCfg {
    fn default() -> Self {
        Self {
            v0: 0.0,
            n: 24,
            sigma_scale: 1e7,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XvaCfg {
    pub bank_initial: String,
    pub counterparty_initial: String,
    pub m1: usize,
    pub m2: usize,
}

impl Default for XvaCfg {
    fn default() -> Self {
        Self {
            bank_initial: "A".into(),
            counterparty_initial: "B".into(),
            m1: 100,
            m2: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputCfg {
    pub dir: String,
}

impl Default for OutputCfg {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// Provenance of one input: where it came from and its content hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputRecord {
    pub source: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub enum Weights {
    Uniform,
    Proportional,
    Fixed(WeightMatrix),
}

impl Weights {
    pub fn provider(&self) -> Box<dyn WeightProvider> {
        match self {
            Weights::Uniform => Box::new(UniformWeights),
            Weights::Proportional => Box::new(ProportionalWeights::default()),
            Weights::Fixed(w) => Box::new(FixedWeights(w.clone())),
        }
    }
}

/// A loaded and validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub seed: u64,
    pub labels: Vec<String>,
    pub grid: TimeGrid,
    pub checkpoints: Vec<f64>,
    pub out: PathBuf,
    pub config_sha256: String,
    pub cohort: CohortMatrix,
    /// `None` when the reference is reconstructed from the cohort.
    pub reconstructed: Option<SquareMatrix>,
    pub weights: Weights,
    pub params: SdeParams,
    pub pd: PdTargets,
    pub measure: MeasureChange,
    pub rn_kind: MeasureKind,
    pub terms: CsaTerms,
    pub regimes: Vec<CollateralRegime>,
    pub bank_initial: usize,
    pub counterparty_initial: usize,
    pub inputs: BTreeMap<&'static str, InputRecord>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads `path` (or uses built-in defaults) and validates everything.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> AppResult<Self> {
        let (text, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| AppError::io(p, e))?;
                (text, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (String::new(), PathBuf::new()),
        };
        let raw: RawConfig = toml::from_str(&text).map_err(|e| AppError::validation(format!("config: {e}")))?;
        Self::from_raw(raw, &base, sha256_hex(text.as_bytes()), ov)
    }

    pub fn from_raw(raw: RawConfig, base: &Path, config_sha256: String, ov: &Overrides) -> AppResult<Self> {
        let seed = ov
            .seed
            .or(raw.seed)
            .ok_or_else(|| AppError::validation("a seed is required (config `seed` or --seed)"))?;
        let labels = raw.labels.clone();
        let k = labels.len();
        if k < 2 {
            return Err(AppError::validation("`labels` needs at least two ratings"));
        }
        if (1..k).any(|i| labels[..i].contains(&labels[i])) {
            return Err(AppError::validation("`labels` contains duplicates"));
        }
        let grid = TimeGrid::with_rate(raw.grid.horizon, raw.grid.steps_per_year).context("grid")?;
        let checkpoints = raw.diagnostics.checkpoints.clone();
        if checkpoints.is_empty() {
            return Err(AppError::validation("diagnostics.checkpoints is empty"));
        }
        if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AppError::validation("diagnostics.checkpoints must be increasing"));
        }
        for &t in &checkpoints {
            grid.index_of(t).context("diagnostics.checkpoints")?;
        }
        let s = &raw.sizes;
        if s.m < 2 || s.m1 == 0 || s.m2 == 0 || raw.xva.m1 == 0 || raw.xva.m2 == 0 {
            return Err(AppError::validation("sizes must be positive (sizes.m at least 2)"));
        }

        let mut inputs = BTreeMap::new();
        let mut load = |name: &'static str, spec: &str, builtin: &dyn Fn(&str) -> Option<String>| -> AppResult<String> {
            let text = resolve(spec, base, builtin).context(format!("inputs.{name}"))?;
            inputs.insert(
                name,
                InputRecord {
                    source: spec.to_string(),
                    sha256: sha256_hex(text.as_bytes()),
                },
            );
            Ok(text)
        };

        let cohort_text = load("cohort", &raw.inputs.cohort, &builtin_matrix)?;
        let cohort = read_labelled(&cohort_text, &labels).context("inputs.cohort")?;
        let cohort = CohortMatrix::new(cohort).context("inputs.cohort")?;

        let reconstructed = if raw.inputs.reconstructed == COMPUTED {
            None
        } else {
            let text = load("reconstructed", &raw.inputs.reconstructed, &builtin_matrix)?;
            Some(read_labelled(&text, &labels).context("inputs.reconstructed")?)
        };

        let weights = match raw.inputs.weights.as_str() {
            "uniform" => Weights::Uniform,
            "proportional" => Weights::Proportional,
            spec => {
                let text = load("weights", spec, &|_| None)?;
                let m = read_labelled(&text, &labels).context("inputs.weights")?;
                Weights::Fixed(WeightMatrix::new(m).context("inputs.weights")?)
            }
        };

        let params_text = load("params", &raw.inputs.params, &|n| {
            (n == "params").then(|| io::write_sde_params(&data::hist_params()))
        })?;
        let params = io::read_sde_params(&params_text, k).context("inputs.params")?;

        let pd_text = load("pd_targets", &raw.inputs.pd_targets, &|n| {
            let pd = match n {
                "pd-case-1" => data::PD_CASE_1,
                "pd-case-2" => data::PD_CASE_2,
                "pd-case-3" => data::PD_CASE_3,
                _ => return None,
            };
            io::write_pd_targets(&reference_labels(), &PdTargets::new(pd.to_vec()).ok()?).ok()
        })?;
        let (pd_labels, pd) = io::read_pd_targets(&pd_text).context("inputs.pd_targets")?;
        check_labels(&pd_labels, &labels).context("inputs.pd_targets")?;

        let kind: MeasureKind = raw.measure.kind.parse().context("measure.kind")?;
        let measure = match (kind, &raw.measure.h, &raw.measure.source) {
            (MeasureKind::Historical, None, None) => MeasureChange::historical(k),
            (MeasureKind::Historical, _, _) => {
                return Err(AppError::validation("measure: the historical measure takes no h or source"));
            }
            (_, Some(h), None) => {
                if h.len() != k - 1 {
                    return Err(AppError::validation(format!("measure.h needs {} entries, got {}", k - 1, h.len())));
                }
                MeasureChange::from_free(kind, h).context("measure.h")?
            }
            (_, None, Some(src)) => {
                let text = resolve(src, base, &|n| builtin_measure(kind, n)).context("measure.source")?;
                inputs.insert(
                    "measure",
                    InputRecord {
                        source: src.clone(),
                        sha256: sha256_hex(text.as_bytes()),
                    },
                );
                let (l, m) = io::read_measure(&text, kind).context("measure.source")?;
                check_labels(&l, &labels).context("measure.source")?;
                m
            }
            _ => return Err(AppError::validation("measure: give exactly one of `h` and `source`")),
        };
        let rn_kind: MeasureKind = raw.calibration.rn_kind.parse().context("calibration.rn_kind")?;
        if rn_kind == MeasureKind::Historical {
            return Err(AppError::validation("calibration.rn_kind must be jlt or exponential"));
        }

        let c = &raw.csa;
        let terms = CsaTerms::new(
            c.bank_thresholds.clone(),
            c.counterparty_thresholds.clone().unwrap_or_else(|| c.bank_thresholds.clone()),
            c.lgd_bank,
            c.lgd_counterparty,
        )
        .map(|mut t| {
            t.postings_per_year = c.postings_per_year;
            t
        })
        .context("csa")?;
        terms.validate().context("csa")?;
        if terms.k() != k {
            return Err(AppError::validation(format!(
                "csa thresholds have {} ratings, labels have {k}",
                terms.k()
            )));
        }
        if c.regimes.is_empty() {
            return Err(AppError::validation("csa.regimes is empty"));
        }
        let regimes = c
            .regimes
            .iter()
            .map(|r| match r.as_str() {
                "none" => Ok(CollateralRegime::Uncollateralized),
                "perfect" => Ok(CollateralRegime::Perfect),
                "triggers" => Ok(CollateralRegime::Triggers(terms.clone())),
                other => Err(AppError::validation(format!("csa.regimes: unknown regime '{other}'"))),
            })
            .collect::<AppResult<Vec<_>>>()?;
        let rating = |field: &str, l: &str| {
            labels
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| AppError::validation(format!("{field}: unknown rating '{l}'")))
        };
        let bank_initial = rating("xva.bank_initial", &raw.xva.bank_initial)?;
        let counterparty_initial = rating("xva.counterparty_initial", &raw.xva.counterparty_initial)?;

        // K consistency across everything that carries a rating scale
        for (what, found) in [
            ("inputs.cohort", cohort.k()),
            ("inputs.params", params.k()),
            ("inputs.pd_targets", pd.k()),
            ("measure", measure.k()),
        ] {
            if found != k {
                return Err(AppError::validation(format!("{what} has {found} ratings, labels have {k}")));
            }
        }

        let out = ov.out.clone().unwrap_or_else(|| base.join(&raw.output.dir));
        Ok(Self {
            seed,
            labels,
            grid,
            checkpoints,
            out,
            config_sha256,
            cohort,
            reconstructed,
            weights,
            params,
            pd,
            measure,
            rn_kind,
            terms,
            regimes,
            bank_initial,
            counterparty_initial,
            inputs,
            raw,
        })
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn portfolio(&self, seed: u64) -> PortfolioSpec {
        let p = &self.raw.portfolio;
        PortfolioSpec {
            v0: p.v0,
            n: p.n,
            sigma_scale: p.sigma_scale,
            horizon: self.grid.horizon(),
            seed,
        }
    }

    pub fn input_records(&self, names: &[&str]) -> BTreeMap<String, (String, String)> {
        names
            .iter()
            .filter_map(|n| self.inputs.get(n).map(|r| (n.to_string(), (r.source.clone(), r.sha256.clone()))))
            .collect()
    }
}

/// Output directory named by a config file without validating the rest.
pub fn output_dir(path: Option<&Path>) -> AppResult<PathBuf> {
    let Some(p) = path else {
        return Ok(PathBuf::from(OutputCfg::default().dir));
    };
    let text = std::fs::read_to_string(p).map_err(|e| AppError::io(p, e))?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| AppError::validation(format!("config: {e}")))?;
    Ok(p.parent().map(Path::to_path_buf).unwrap_or_default().join(raw.output.dir))
}

fn reference_labels() -> Vec<String> {
    data::LABELS.iter().map(|s| s.to_string()).collect()
}

fn builtin_matrix(name: &str) -> Option<String> {
    let labels = reference_labels();
    match name {
        "cohort" => io::write_rating_matrix(&labels, &data::cohort_matrix(), Some(&data::COHORT_WITHDRAWALS)).ok(),
        "reconstructed" => io::write_rating_matrix(&labels, &data::reconstructed_matrix(), None).ok(),
        _ => None,
    }
}

fn builtin_measure(kind: MeasureKind, name: &str) -> Option<String> {
    let case = match name {
        "case-1" => 0,
        "case-2" => 1,
        "case-3" => 2,
        _ => return None,
    };
    let h = match kind {
        MeasureKind::Exponential => data::H_EXPONENTIAL[case],
        MeasureKind::Jlt => data::H_JLT[case],
        MeasureKind::Historical => return None,
    };
    io::write_measure(&reference_labels(), &MeasureChange::from_free(kind, &h).ok()?).ok()
}

/// Text of a `builtin:` preset or a file relative to `base`.
fn resolve(spec: &str, base: &Path, builtin: &dyn Fn(&str) -> Option<String>) -> AppResult<String> {
    if let Some(name) = spec.strip_prefix(BUILTIN) {
        return builtin(name).ok_or_else(|| AppError::validation(format!("unknown preset '{spec}'")));
    }
    let path = base.join(spec);
    std::fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))
}

fn read_labelled(text: &str, labels: &[String]) -> AppResult<SquareMatrix> {
    let m = io::read_rating_matrix(text)?;
    check_labels(&m.labels, labels)?;
    Ok(m.matrix)
}

fn check_labels(found: &[String], expected: &[String]) -> AppResult<()> {
    if found != expected {
        return Err(AppError::validation(format!(
            "rating labels {found:?} do not match configured {expected:?}"
        )));
    }
    Ok(())
}
