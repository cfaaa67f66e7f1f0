//! Seeded, parallel Monte Carlo studies.
//!
//! Replication `r` of the cell with sample size `n` and shape `γ` (or `ν`)
//! draws everything from the key `(seed, n, bits(γ), r)`: data from its
//! `DATA` child, bootstrap samples from its `BOOTSTRAP` child. Results are
//! collected in replication order and reduced sequentially, so a report is
//! bit-identical for any thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::distributions::{BbsParams, Gbs2Params, Sample};
use crate::error::{Error, Result};
use crate::estimation::{fit_bbs, fit_bbs_better_bootstrap, FitOptions};
use crate::hypothesis::one_sided::{one_sided_set_from_fits, slr_bootstrap_from_fits};
use crate::hypothesis::two_sided::{joint_bootstrap, lr_test, score_test, wald_test};
use crate::hypothesis::{chi_square_quantile, Correction, NestedFits, Parameter, TestSpec};
use crate::likelihood::{better_bootstrap_weights, PenaltySpec};
use crate::nonnested::{classify, test_nonnested_from_fits, NullModel, Outcome, Selected, WneFits};
use crate::stream::{purpose, StreamKey};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Estimation,
    Size,
    Power,
    OneSided,
    Nonnested,
    PhiGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum TrueModel {
    Bbs { alpha: f64, beta: f64, gamma: f64 },
    Gbs2 { alpha: f64, beta: f64, nu: f64 },
}

impl TrueModel {
    fn shape(&self) -> f64 {
        match *self {
            TrueModel::Bbs { gamma, .. } => gamma,
            TrueModel::Gbs2 { nu, .. } => nu,
        }
    }

    fn bbs(&self) -> Option<BbsParams> {
        match *self {
            TrueModel::Bbs { alpha, beta, gamma } => Some(BbsParams { alpha, beta, gamma }),
            TrueModel::Gbs2 { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            TrueModel::Bbs { alpha, beta, gamma } => BbsParams::new(alpha, beta, gamma).map(|_| ()),
            TrueModel::Gbs2 { alpha, beta, nu } => Gbs2Params::new(alpha, beta, nu).map(|_| ()),
        }
    }

    fn with_shape(&self, s: f64) -> Self {
        match *self {
            TrueModel::Bbs { alpha, beta, .. } => TrueModel::Bbs { alpha, beta, gamma: s },
            TrueModel::Gbs2 { alpha, beta, .. } => TrueModel::Gbs2 { alpha, beta, nu: s },
        }
    }

    fn sample(&self, n: usize, key: StreamKey) -> Result<Sample> {
        let mut rng = key.rng();
        match *self {
            TrueModel::Bbs { alpha, beta, gamma } => BbsParams::new(alpha, beta, gamma)?.sample(n, &mut rng),
            TrueModel::Gbs2 { alpha, beta, nu } => Gbs2Params::new(alpha, beta, nu)?.sample(n, &mut rng),
        }
    }
}

/// Estimators and tests a study can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMethod {
    Mle,
    MleP,
    MleJp,
    MleBboot,
    Lr,
    Score,
    Wald,
    LrPb,
    LrBbc,
    SPb,
    Slr,
    SlrC1,
    SlrC2,
    SlrBp,
}

impl SimMethod {
    pub fn tag(self) -> &'static str {
        match self {
            SimMethod::Mle => "mle",
            SimMethod::MleP => "mle_p",
            SimMethod::MleJp => "mle_jp",
            SimMethod::MleBboot => "mle_bboot",
            SimMethod::Lr => "lr",
            SimMethod::Score => "score",
            SimMethod::Wald => "wald",
            SimMethod::LrPb => "lr_pb",
            SimMethod::LrBbc => "lr_bbc",
            SimMethod::SPb => "s_pb",
            SimMethod::Slr => "slr",
            SimMethod::SlrC1 => "slr_c1",
            SimMethod::SlrC2 => "slr_c2",
            SimMethod::SlrBp => "slr_bp",
        }
    }

    fn is_estimator(self) -> bool {
        matches!(self, SimMethod::Mle | SimMethod::MleP | SimMethod::MleJp | SimMethod::MleBboot)
    }

    fn is_two_sided(self) -> bool {
        matches!(
            self,
            SimMethod::Lr | SimMethod::Score | SimMethod::Wald | SimMethod::LrPb | SimMethod::LrBbc | SimMethod::SPb
        )
    }

    fn is_one_sided(self) -> bool {
        matches!(self, SimMethod::Slr | SimMethod::SlrC1 | SimMethod::SlrC2 | SimMethod::SlrBp)
    }

    /// Compared to a `χ²` law, so empirical quantiles are reported.
    fn chi_square_reference(self) -> bool {
        matches!(self, SimMethod::Lr | SimMethod::Score | SimMethod::Wald | SimMethod::LrBbc)
    }
}

fn default_penalty() -> PenaltySpec {
    PenaltySpec::modified(1.0)
}

fn default_b() -> usize {
    299
}

fn default_epsilon() -> Vec<f64> {
    vec![0.1, 0.05, 0.01]
}

fn default_bboot() -> usize {
    1000
}

fn default_levels() -> Vec<f64> {
    vec![0.5, 0.9, 0.95, 0.99]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub study: Study,
    pub true_params: TrueModel,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    #[serde(default = "default_penalty")]
    pub penalty: PenaltySpec,
    /// Bootstrap resamples per test.
    #[serde(default = "default_b", alias = "B")]
    pub bootstrap_b: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: Vec<f64>,
    pub master_seed: u64,
    /// Empty means the study's default set.
    #[serde(default)]
    pub methods: Vec<SimMethod>,
    /// Hypothesis for `size`, `power` and `one_sided` studies.
    #[serde(default)]
    pub test: Option<TestSpec>,
    /// Penalty powers for `phi_grid`.
    #[serde(default)]
    pub phi_grid: Vec<f64>,
    /// Overrides `γ` (or `ν`) of `true_params` cell by cell.
    #[serde(default)]
    pub gamma_grid: Vec<f64>,
    /// Resamples behind the better-bootstrap weights.
    #[serde(default = "default_bboot")]
    pub bboot_resamples: usize,
    /// Fraction trimmed from each end of the bootstrap LR mean.
    #[serde(default)]
    pub bartlett_trim: f64,
    /// Levels of the empirical statistic quantiles reported for `χ²` tests.
    #[serde(default = "default_levels")]
    pub quantile_levels: Vec<f64>,
    /// Execution setting only; left out of reports so they match across thread counts.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub fit: FitOptions,
}

impl SimConfig {
    /// Parses JSON (text starting with `{`) or flat `key = value` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SimConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_value(flat_to_json(text)?).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn resolved_methods(&self) -> Vec<SimMethod> {
        if !self.methods.is_empty() {
            return self.methods.clone();
        }
        use SimMethod::*;
        match self.study {
            Study::Estimation => vec![Mle, MleP, MleJp, MleBboot],
            Study::Size | Study::Power => vec![Lr, Score, Wald],
            Study::OneSided => vec![Slr, SlrC1, SlrC2, SlrBp],
            Study::PhiGrid => vec![MleP],
            Study::Nonnested => vec![],
        }
    }

    fn test_spec(&self) -> TestSpec {
        match (&self.test, self.study) {
            (Some(t), _) => t.clone(),
            (None, Study::OneSided) => TestSpec::bimodality(),
            (None, _) => TestSpec::scalar(Parameter::Gamma, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n < 5) {
            return bad("sample_sizes must be nonempty with every n ≥ 5".into());
        }
        if self.epsilon.is_empty() || self.epsilon.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return bad("epsilon must be a nonempty list in (0, 1)".into());
        }
        self.true_params.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.penalty.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.gamma_grid.iter().any(|g| !g.is_finite()) {
            return bad("gamma_grid entries must be finite".into());
        }
        if let TrueModel::Gbs2 { .. } = self.true_params {
            if self.gamma_grid.iter().any(|&v| v <= 0.0) {
                return bad("for GBS2 the grid holds ν and must be positive".into());
            }
            if self.study != Study::Nonnested {
                return bad(format!("{:?} studies need a BBS true model", self.study));
            }
        }
        if self.study == Study::PhiGrid && (self.phi_grid.is_empty() || self.gamma_grid.is_empty()) {
            return bad("phi_grid studies need nonempty phi_grid and gamma_grid".into());
        }
        if self.phi_grid.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return bad("phi_grid entries must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        let methods = self.resolved_methods();
        let ok = |m: &SimMethod| match self.study {
            Study::Estimation | Study::PhiGrid => m.is_estimator(),
            Study::Size | Study::Power => m.is_two_sided(),
            Study::OneSided => m.is_one_sided(),
            Study::Nonnested => false,
        };
        if let Some(m) = methods.iter().find(|m| !ok(m)) {
            return bad(format!("method {} does not belong to a {:?} study", m.tag(), self.study));
        }
        let boot = methods.iter().any(|m| matches!(m, SimMethod::LrPb | SimMethod::LrBbc | SimMethod::SPb | SimMethod::SlrBp))
            || self.study == Study::Nonnested;
        if boot && self.bootstrap_b < 99 {
            return bad("bootstrap studies need B ≥ 99".into());
        }
        if methods.contains(&SimMethod::MleBboot) && self.bboot_resamples == 0 {
            return bad("bboot_resamples must be positive".into());
        }
        if matches!(self.study, Study::Size | Study::Power | Study::OneSided) {
            let t = self.test_spec();
            t.validate().map_err(|e| Error::Config(e.to_string()))?;
            let scalar_only = methods.iter().any(|m| {
                matches!(m, SimMethod::Score | SimMethod::Wald | SimMethod::SPb) || m.is_one_sided()
            });
            if scalar_only && t.q() != 1 {
                return bad("score, Wald and signed tests need a scalar parameter".into());
            }
        }
        if self.quantile_levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return bad("quantile_levels must lie in (0, 1)".into());
        }
        Ok(())
    }
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn number(key: &str, v: &str) -> Result<Value> {
    if let Ok(i) = v.parse::<u64>() {
        return Ok(json!(i));
    }
    v.parse::<f64>().map(|f| json!(f)).map_err(|_| Error::Config(format!("{key}: `{v}` is not a number")))
}

/// Turns `key = value` lines into the JSON shape of [`SimConfig`].
fn flat_to_json(text: &str) -> Result<Value> {
    let mut top = Map::new();
    let mut model = Map::new();
    let mut penalty = Map::new();
    let mut test = Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let nums = |vs: Vec<&str>| -> Result<Value> { vs.into_iter().map(|s| number(k, s)).collect::<Result<Vec<_>>>().map(Value::Array) };
        match k {
            "model" => {
                model.insert("model".into(), json!(v));
            }
            "alpha" | "beta" | "gamma" | "nu" => {
                model.insert(k.into(), number(k, v)?);
            }
            "penalty" => {
                penalty.insert("kind".into(), json!(v));
            }
            "phi" => {
                penalty.insert("power".into(), number(k, v)?);
            }
            "parameter" => {
                test.insert("parameters".into(), json!(list(v)));
            }
            "null" | "null_value" => {
                test.insert("null_values".into(), nums(list(v))?);
            }
            "alternative" => {
                test.insert("alternative".into(), json!(v));
            }
            "sample_sizes" | "epsilon" | "phi_grid" | "gamma_grid" | "quantile_levels" => {
                top.insert(k.into(), nums(list(v))?);
            }
            "methods" => {
                top.insert(k.into(), json!(list(v)));
            }
            "study" => {
                top.insert(k.into(), json!(v));
            }
            "seed" | "master_seed" => {
                top.insert("master_seed".into(), number(k, v)?);
            }
            "B" | "bootstrap_b" => {
                top.insert("bootstrap_b".into(), number(k, v)?);
            }
            "replications" | "bboot_resamples" | "bartlett_trim" | "threads" => {
                top.insert(k.into(), number(k, v)?);
            }
            other => return Err(Error::Config(format!("line {}: unknown key `{other}`", i + 1))),
        }
    }
    model.entry("model").or_insert(json!("bbs"));
    top.insert("true_params".into(), Value::Object(model));
    if !penalty.is_empty() {
        penalty.entry("kind").or_insert(json!("modified"));
        top.insert("penalty".into(), Value::Object(penalty));
    }
    if !test.is_empty() {
        top.insert("test".into(), Value::Object(test));
    }
    Ok(Value::Object(top))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Estimate,
    Rejection,
    Outcome,
    Quantile,
}

/// One row of a report, in long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub study: Study,
    pub kind: RecordKind,
    pub n: usize,
    /// `γ` (BBS) or `ν` (GBS₂) of the cell.
    pub shape: f64,
    pub phi: Option<f64>,
    pub method: String,
    pub parameter: Option<String>,
    pub epsilon: Option<f64>,
    pub bias: Option<f64>,
    pub mse: Option<f64>,
    pub rejection_rate: Option<f64>,
    pub proportion: Option<f64>,
    /// Binomial standard error of the rate or proportion.
    pub se: Option<f64>,
    pub level: Option<f64>,
    pub quantile: Option<f64>,
    pub reference_quantile: Option<f64>,
    pub replications: usize,
    /// Replications that entered the summary.
    pub used: usize,
    /// Replications whose fit or test failed.
    pub nf: usize,
    pub pnf: f64,
    /// Replications excluded for an undefined higher-order correction.
    pub excluded: usize,
}

impl SimRecord {
    fn new(study: Study, kind: RecordKind, cell: &Cell, method: &str, reps: usize, nf: usize) -> Self {
        Self {
            study,
            kind,
            n: cell.n,
            shape: cell.shape,
            phi: cell.phi,
            method: method.to_string(),
            parameter: None,
            epsilon: None,
            bias: None,
            mse: None,
            rejection_rate: None,
            proportion: None,
            se: None,
            level: None,
            quantile: None,
            reference_quantile: None,
            replications: reps,
            used: 0,
            nf,
            pnf: nf as f64 / reps as f64,
            excluded: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub config: SimConfig,
    pub records: Vec<SimRecord>,
}

impl SimReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join("report.csv");
        let json_path = dir.join("report.json");
        let csv = self.to_csv().map_err(|e| std::io::Error::other(e.to_string()))?;
        std::fs::write(&csv_path, csv)?;
        std::fs::write(&json_path, self.to_json())?;
        Ok((csv_path, json_path))
    }

    /// Fixed-width text table for terminals.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<9} {:>5} {:>7} {:>5} {:<10} {:<6} {:>6} {:>9} {:>9} {:>9} {:>6} {:>6}",
            "kind", "n", "shape", "phi", "method", "param", "eps", "bias", "mse", "rate", "used", "nf"
        );
        let f = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.p$}"));
        for r in &self.records {
            if r.kind == RecordKind::Quantile {
                continue;
            }
            let _ = writeln!(
                s,
                "{:<9} {:>5} {:>7.3} {:>5} {:<10} {:<6} {:>6} {:>9} {:>9} {:>9} {:>6} {:>6}",
                format!("{:?}", r.kind).to_lowercase(),
                r.n,
                r.shape,
                f(r.phi, 2),
                r.method,
                r.parameter.as_deref().unwrap_or("-"),
                f(r.epsilon, 3),
                f(r.bias, 4),
                f(r.mse, 4),
                f(r.rejection_rate.or(r.proportion), 4),
                r.used,
                r.nf
            );
        }
        s
    }

    pub fn find(&self, kind: RecordKind, method: &str) -> impl Iterator<Item = &SimRecord> {
        let method = method.to_string();
        self.records.iter().filter(move |r| r.kind == kind && r.method == method)
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    n: usize,
    shape: f64,
    phi: Option<f64>,
    model: TrueModel,
}

/// What one replication produced.
#[derive(Debug, Clone)]
enum RepOutput {
    Estimates(Vec<Option<[f64; 3]>>),
    /// `(p-value, statistic, excluded)` per method.
    Tests(Vec<Option<(f64, f64, bool)>>),
    Nonnested(Option<(f64, f64, f64)>),
}

/// Runs a study on a dedicated worker pool.
pub fn run_study(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let threads = config.threads.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let records = pool.install(|| run_cells(config));
    Ok(SimReport { schema_version: SCHEMA_VERSION, config: config.clone(), records })
}

/// MSE and `nf` over a `γ × φ` grid of modified penalties.
pub fn phi_sensitivity(config: &SimConfig) -> Result<SimReport> {
    if config.study != Study::PhiGrid {
        return Err(Error::Config("phi_sensitivity needs study = phi_grid".into()));
    }
    run_study(config)
}

fn cells(config: &SimConfig) -> Vec<(Cell, StreamKey)> {
    let shapes = if config.gamma_grid.is_empty() { vec![config.true_params.shape()] } else { config.gamma_grid.clone() };
    let phis: Vec<Option<f64>> =
        if config.study == Study::PhiGrid { config.phi_grid.iter().map(|&p| Some(p)).collect() } else { vec![None] };
    let root = StreamKey::new(config.master_seed);
    let mut out = Vec::new();
    for &n in &config.sample_sizes {
        for &s in &shapes {
            // cells sharing n and shape share data across φ
            let key = root.path(&[n as u64, s.to_bits()]);
            for &phi in &phis {
                out.push((Cell { n, shape: s, phi, model: config.true_params.with_shape(s) }, key));
            }
        }
    }
    out
}

fn run_cells(config: &SimConfig) -> Vec<SimRecord> {
    let methods = config.resolved_methods();
    let mut records = Vec::new();
    for (cell, key) in cells(config) {
        let outputs: Vec<RepOutput> = (0..config.replications as u64)
            .into_par_iter()
            .map(|r| replicate(config, &cell, &methods, key.child(r)))
            .collect();
        match config.study {
            Study::Estimation | Study::PhiGrid => summarize_estimates(config, &cell, &methods, &outputs, &mut records),
            Study::Size | Study::Power | Study::OneSided => {
                summarize_tests(config, &cell, &methods, &outputs, &mut records)
            }
            Study::Nonnested => summarize_nonnested(config, &cell, &outputs, &mut records),
        }
    }
    records
}

fn replicate(config: &SimConfig, cell: &Cell, methods: &[SimMethod], key: StreamKey) -> RepOutput {
    let x = cell.model.sample(cell.n, key.child(purpose::DATA));
    let boot = key.child(purpose::BOOTSTRAP);
    match config.study {
        Study::Estimation | Study::PhiGrid => {
            let penalty = match cell.phi {
                Some(p) => PenaltySpec::modified(p),
                None => config.penalty,
            };
            let Ok(x) = x else { return RepOutput::Estimates(vec![None; methods.len()]) };
            RepOutput::Estimates(methods.iter().map(|&m| estimate(&x, m, &penalty, config, key)).collect())
        }
        Study::Size | Study::Power => {
            let Ok(x) = x else { return RepOutput::Tests(vec![None; methods.len()]) };
            RepOutput::Tests(two_sided_tests(&x, methods, config, boot))
        }
        Study::OneSided => {
            let Ok(x) = x else { return RepOutput::Tests(vec![None; methods.len()]) };
            RepOutput::Tests(one_sided_tests(&x, methods, config, boot))
        }
        Study::Nonnested => RepOutput::Nonnested(x.ok().and_then(|x| nonnested_rep(&x, config, boot))),
    }
}

fn estimate(x: &Sample, m: SimMethod, penalty: &PenaltySpec, config: &SimConfig, key: StreamKey) -> Option<[f64; 3]> {
    let fit = match m {
        SimMethod::Mle => fit_bbs(x, &PenaltySpec::none(), &config.fit),
        SimMethod::MleP => fit_bbs(x, penalty, &config.fit),
        SimMethod::MleJp => fit_bbs(x, &PenaltySpec::jeffreys(), &config.fit),
        SimMethod::MleBboot => {
            let w = better_bootstrap_weights(x, config.bboot_resamples, &mut key.child(purpose::WEIGHTS).rng()).ok()?;
            fit_bbs_better_bootstrap(x, &w, &config.fit)
        }
        _ => return None,
    }
    .ok()?;
    fit.converged().then(|| fit.params.as_array())
}

fn two_sided_tests(x: &Sample, methods: &[SimMethod], config: &SimConfig, boot: StreamKey) -> Vec<Option<(f64, f64, bool)>> {
    let spec = config.test_spec();
    let (pen, opts) = (&config.penalty, &config.fit);
    let needs_boot = methods.iter().any(|m| matches!(m, SimMethod::LrPb | SimMethod::LrBbc | SimMethod::SPb));
    let joint = if needs_boot { joint_bootstrap(x, &spec, pen, config.bootstrap_b, boot, opts).ok() } else { None };
    let wrap = |r: Result<crate::hypothesis::TestResult>| r.ok().map(|t| (t.p_value, t.statistic, false));
    methods
        .iter()
        .map(|m| match m {
            SimMethod::Lr => wrap(lr_test(x, &spec, pen, opts)),
            SimMethod::Score => wrap(score_test(x, &spec, pen, opts)),
            SimMethod::Wald => wrap(wald_test(x, &spec, pen, opts)),
            SimMethod::LrPb => joint.as_ref().map(|j| (j.lr.p_value(), j.lr.observed, false)),
            SimMethod::LrBbc => joint.as_ref().and_then(|j| wrap(j.lr.bartlett_result(config.bartlett_trim))),
            SimMethod::SPb => joint.as_ref().and_then(|j| j.score.as_ref()).map(|s| (s.p_value(), s.observed, false)),
            _ => None,
        })
        .collect()
}

fn one_sided_tests(x: &Sample, methods: &[SimMethod], config: &SimConfig, boot: StreamKey) -> Vec<Option<(f64, f64, bool)>> {
    let spec = config.test_spec();
    let (pen, opts) = (&config.penalty, &config.fit);
    let Some(fits) = NestedFits::compute(x, &spec, pen, opts).ok().filter(|f| f.both_converged()) else {
        return vec![None; methods.len()];
    };
    let set = one_sided_set_from_fits(x, &fits, &spec).ok();
    let flagged = |t: &crate::hypothesis::TestResult| {
        Some((t.p_value, t.statistic, t.diagnostics.correction == Some(Correction::Undefined)))
    };
    methods
        .iter()
        .map(|m| match m {
            SimMethod::Slr => set.as_ref().and_then(|s| flagged(&s.slr)),
            SimMethod::SlrC1 => set.as_ref().and_then(|s| flagged(&s.c1)),
            SimMethod::SlrC2 => set.as_ref().and_then(|s| flagged(&s.c2)),
            SimMethod::SlrBp => slr_bootstrap_from_fits(x, &fits, &spec, pen, config.bootstrap_b, boot, opts)
                .ok()
                .map(|t| (t.p_value, t.statistic, false)),
            _ => None,
        })
        .collect()
}

/// `(W_ne, p_f, p_g)`; the two nulls use the same substreams as [`crate::nonnested::decide`].
fn nonnested_rep(x: &Sample, config: &SimConfig, boot: StreamKey) -> Option<(f64, f64, f64)> {
    let (pen, opts) = (&config.penalty, &config.fit);
    let fits = WneFits::compute(x, pen, opts).ok()?;
    let n = x.len();
    let b = config.bootstrap_b;
    let (rf, rg) = rayon::join(
        || test_nonnested_from_fits(n, &fits, NullModel::Hf, b, boot.child(purpose::BOOTSTRAP_F), pen, opts),
        || test_nonnested_from_fits(n, &fits, NullModel::Hg, b, boot.child(purpose::BOOTSTRAP_G), pen, opts),
    );
    Some((fits.w_ne(), rf.ok()?.0, rg.ok()?.0))
}

fn binomial_se(p: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| (p * (1.0 - p) / n as f64).sqrt())
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize_estimates(
    config: &SimConfig,
    cell: &Cell,
    methods: &[SimMethod],
    outputs: &[RepOutput],
    out: &mut Vec<SimRecord>,
) {
    let truth = cell.model.bbs().expect("validated").as_array();
    let reps = config.replications;
    for (k, m) in methods.iter().enumerate() {
        let est: Vec<[f64; 3]> = outputs
            .iter()
            .filter_map(|o| match o {
                RepOutput::Estimates(v) => v[k],
                _ => None,
            })
            .collect();
        let nf = reps - est.len();
        for (j, name) in ["alpha", "beta", "gamma"].iter().enumerate() {
            let mut r = SimRecord::new(config.study, RecordKind::Estimate, cell, m.tag(), reps, nf);
            r.parameter = Some(name.to_string());
            r.used = est.len();
            if !est.is_empty() {
                let c = est.len() as f64;
                r.bias = Some(est.iter().map(|e| e[j] - truth[j]).sum::<f64>() / c);
                r.mse = Some(est.iter().map(|e| (e[j] - truth[j]).powi(2)).sum::<f64>() / c);
            }
            out.push(r);
        }
    }
}

fn summarize_tests(
    config: &SimConfig,
    cell: &Cell,
    methods: &[SimMethod],
    outputs: &[RepOutput],
    out: &mut Vec<SimRecord>,
) {
    let reps = config.replications;
    let spec = config.test_spec();
    let param = spec.parameters.iter().map(|p| p.name()).collect::<Vec<_>>().join("+");
    for (k, m) in methods.iter().enumerate() {
        let got: Vec<(f64, f64, bool)> = outputs
            .iter()
            .filter_map(|o| match o {
                RepOutput::Tests(v) => v[k],
                _ => None,
            })
            .collect();
        let nf = reps - got.len();
        let excluded = got.iter().filter(|g| g.2).count();
        let used: Vec<(f64, f64)> = got.iter().filter(|g| !g.2).map(|g| (g.0, g.1)).collect();
        for &eps in &config.epsilon {
            let mut r = SimRecord::new(config.study, RecordKind::Rejection, cell, m.tag(), reps, nf);
            r.parameter = Some(param.clone());
            r.epsilon = Some(eps);
            r.used = used.len();
            r.excluded = excluded;
            if !used.is_empty() {
                let rate = used.iter().filter(|u| u.0 <= eps).count() as f64 / used.len() as f64;
                r.rejection_rate = Some(rate);
                r.se = binomial_se(rate, used.len());
            }
            out.push(r);
        }
        if m.chi_square_reference() && !used.is_empty() {
            let mut stats: Vec<f64> = used.iter().map(|u| u.1).collect();
            stats.sort_by(f64::total_cmp);
            let q = if matches!(m, SimMethod::Score | SimMethod::Wald) { 1 } else { spec.q() };
            for &level in &config.quantile_levels {
                let mut r = SimRecord::new(config.study, RecordKind::Quantile, cell, m.tag(), reps, nf);
                r.parameter = Some(param.clone());
                r.used = used.len();
                r.level = Some(level);
                r.quantile = Some(empirical_quantile(&stats, level));
                r.reference_quantile = Some(chi_square_quantile(level, q));
                out.push(r);
            }
        }
    }
}

fn summarize_nonnested(config: &SimConfig, cell: &Cell, outputs: &[RepOutput], out: &mut Vec<SimRecord>) {
    let reps = config.replications;
    let got: Vec<(f64, f64, f64)> = outputs
        .iter()
        .filter_map(|o| match o {
            RepOutput::Nonnested(v) => *v,
            _ => None,
        })
        .collect();
    let nf = reps - got.len();
    for &eps in &config.epsilon {
        let decided: Vec<(Outcome, Selected)> = got.iter().map(|&(w, pf, pg)| classify(w, pf, pg, eps)).collect();
        let m = decided.len();
        let share = |count: usize| (m > 0).then(|| count as f64 / m as f64);
        let mut push = |kind: RecordKind, tag: &str, count: usize| {
            let mut r = SimRecord::new(config.study, kind, cell, tag, reps, nf);
            r.epsilon = Some(eps);
            r.used = m;
            let p = share(count);
            match kind {
                RecordKind::Rejection => r.rejection_rate = p,
                _ => r.proportion = p,
            }
            r.se = p.and_then(|p| binomial_se(p, m));
            out.push(r);
        };
        for (o, tag) in [(Outcome::R1, "R1"), (Outcome::R2, "R2"), (Outcome::R3, "R3"), (Outcome::R4, "R4")] {
            push(RecordKind::Outcome, tag, decided.iter().filter(|d| d.0 == o).count());
        }
        for (s, tag) in [(Selected::Bbs, "select_bbs"), (Selected::Gbs2, "select_gbs2"), (Selected::None, "select_none")] {
            push(RecordKind::Outcome, tag, decided.iter().filter(|d| d.1 == s).count());
        }
        push(RecordKind::Rejection, "reject_hf", got.iter().filter(|g| g.1 < eps).count());
        push(RecordKind::Rejection, "reject_hg", got.iter().filter(|g| g.2 < eps).count());
    }
}
