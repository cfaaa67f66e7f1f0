//! Starting values, BFGS fitting and convergence classification.
//!
//! Positive parameters are optimized on the log scale. A fit never fails
//! with an error for statistical reasons; nonconvergence is reported in
//! [`FitResult::status`] so that Monte Carlo studies can count it.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::distributions::{BbsParams, Gbs2Params, Sample};
use crate::error::{Error, Result};
use crate::likelihood::{self, BetterBootstrapWeights, PenaltySpec};
use crate::optim::{minimize, BfgsOptions, OptimReport, OptimStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    GradientNotSmall,
    ImplausibleEstimates,
    ObjectiveFailure,
}

/// Estimates outside this box are classified as implausible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityBox {
    /// Upper bound for `α` (and for `ν` in GBS₂ fits).
    pub shape_max: f64,
    pub gamma_abs_max: f64,
    /// `β` must lie in `[min(x)/f, max(x)·f]`.
    pub scale_factor: f64,
}

impl Default for PlausibilityBox {
    fn default() -> Self {
        Self { shape_max: 1e3, gamma_abs_max: 50.0, scale_factor: 1e3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub bfgs: BfgsOptions,
    pub plausibility: PlausibilityBox,
    /// Converged fits need `‖g‖∞ < grad_tol·(1+|objective|)`.
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { bfgs: BfgsOptions::default(), plausibility: PlausibilityBox::default(), grad_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<P> {
    pub params: P,
    /// Square roots of the diagonal of the inverse penalized observed
    /// information; `None` when that matrix is not positive definite. Fixed
    /// parameters have standard error zero.
    pub stderr: Option<[f64; 3]>,
    pub loglik_plain: f64,
    pub loglik_penalized: f64,
    pub status: FitStatus,
    pub iterations: usize,
    /// Gradient sup-norm on the optimization scale.
    pub grad_norm: f64,
}

impl<P> FitResult<P> {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }
}

pub type BbsFit = FitResult<BbsParams>;
pub type Gbs2Fit = FitResult<Gbs2Params>;

/// Modified moment starting values with `γ₀ = 0`.
pub fn mmm_start(x: &Sample) -> Result<BbsParams> {
    if x.len() < 2 {
        return Err(Error::InvalidSample("at least two observations are needed".into()));
    }
    let n = x.len() as f64;
    let s = x.values().iter().sum::<f64>() / n;
    let r = n / x.values().iter().map(|v| 1.0 / v).sum::<f64>();
    let beta = (s * r).sqrt();
    let alpha = (2.0 * ((s / r).sqrt() - 1.0).max(0.0)).sqrt().max(0.01);
    BbsParams::new(alpha, beta, 0.0)
}

/// GBS₂ starting values: `β₀` the median, `ν₀ = 1`, `α₀` the standard
/// deviation of `x/β₀ − β₀/x`.
pub fn gbs2_start(x: &Sample) -> Result<Gbs2Params> {
    if x.len() < 2 {
        return Err(Error::InvalidSample("at least two observations are needed".into()));
    }
    let beta = x.median();
    let w: Vec<f64> = x.values().iter().map(|v| v / beta - beta / v).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Gbs2Params::new(var.sqrt().max(0.01), beta, 1.0)
}

/// Maps optimizer outcome and plausibility to a fit status.
pub fn classify_convergence(report: &OptimReport, plausible: bool, opts: &FitOptions) -> FitStatus {
    match report.status {
        OptimStatus::ObjectiveFailure => FitStatus::ObjectiveFailure,
        OptimStatus::MaxIterations => FitStatus::MaxIterations,
        OptimStatus::Converged | OptimStatus::Stalled => {
            if !plausible {
                FitStatus::ImplausibleEstimates
            } else if !(report.grad_norm() < opts.grad_tol * (1.0 + report.value.abs())) {
                FitStatus::GradientNotSmall
            } else {
                FitStatus::Converged
            }
        }
    }
}

fn scale_plausible(beta: f64, x: &Sample, b: &PlausibilityBox) -> bool {
    beta >= x.min() / b.scale_factor && beta <= x.max() * b.scale_factor
}

pub fn bbs_plausible(p: &BbsParams, x: &Sample, b: &PlausibilityBox) -> bool {
    p.alpha < b.shape_max && p.gamma.abs() < b.gamma_abs_max && scale_plausible(p.beta, x, b)
}

pub fn gbs2_plausible(q: &Gbs2Params, x: &Sample, b: &PlausibilityBox) -> bool {
    q.alpha < b.shape_max && q.nu < b.shape_max && scale_plausible(q.beta, x, b)
}

/// Everything that distinguishes one BBS fit from another.
#[derive(Debug, Clone, Copy, Default)]
pub struct BbsFitSpec<'a> {
    pub penalty: PenaltySpec,
    /// Per-observation log-likelihood weights (better bootstrap).
    pub weights: Option<&'a [f64]>,
    /// Parameters held at the given value, in `(α, β, γ)` order.
    pub fixed: [Option<f64>; 3],
    /// Overrides the modified-moment start for the free parameters.
    pub start: Option<BbsParams>,
}

impl BbsFitSpec<'_> {
    pub fn penalized(penalty: PenaltySpec) -> Self {
        Self { penalty, ..Default::default() }
    }
}

fn to_z(p: &BbsParams) -> [f64; 3] {
    [p.alpha.ln(), p.beta.ln(), p.gamma]
}

fn from_z(z: &[f64; 3]) -> BbsParams {
    BbsParams::from_array([z[0].exp(), z[1].exp(), z[2]])
}

/// Maximizes the penalized objective from the modified-moment start.
pub fn fit_bbs(x: &Sample, penalty: &PenaltySpec, opts: &FitOptions) -> Result<BbsFit> {
    fit_bbs_with(x, &BbsFitSpec::penalized(*penalty), opts)
}

/// Fit with some parameters held fixed.
pub fn fit_bbs_restricted(
    x: &Sample,
    penalty: &PenaltySpec,
    fixed: [Option<f64>; 3],
    opts: &FitOptions,
) -> Result<BbsFit> {
    fit_bbs_with(x, &BbsFitSpec { penalty: *penalty, fixed, ..Default::default() }, opts)
}

/// Unpenalized fit of the better-bootstrap weighted log-likelihood.
pub fn fit_bbs_better_bootstrap(x: &Sample, w: &BetterBootstrapWeights, opts: &FitOptions) -> Result<BbsFit> {
    let n = x.len() as f64;
    let scaled: Vec<f64> = w.mean_frequencies.iter().map(|p| n * p).collect();
    fit_bbs_with(
        x,
        &BbsFitSpec { penalty: PenaltySpec::none(), weights: Some(&scaled), ..Default::default() },
        opts,
    )
}

pub fn fit_bbs_with(x: &Sample, spec: &BbsFitSpec<'_>, opts: &FitOptions) -> Result<BbsFit> {
    spec.penalty.validate()?;
    if let Some(w) = spec.weights {
        if w.len() != x.len() {
            return Err(Error::InvalidSample(format!("{} weights for {} observations", w.len(), x.len())));
        }
    }
    let mut start = match spec.start {
        Some(s) => s.as_array(),
        None => mmm_start(x)?.as_array(),
    };
    for (k, f) in spec.fixed.iter().enumerate() {
        if let Some(v) = f {
            start[k] = *v;
        }
    }
    let start = BbsParams::from_array(start);
    start.validate()?;
    let z0 = to_z(&start);
    let free: Vec<usize> = (0..3).filter(|&k| spec.fixed[k].is_none()).collect();

    let full = |zf: &[f64]| {
        let mut z = z0;
        for (i, &k) in free.iter().enumerate() {
            z[k] = zf[i];
        }
        z
    };
    let objective = |zf: &[f64]| {
        let z = full(zf);
        let theta = from_z(&z);
        let (v, g) = likelihood::objective_with_weights(&theta, x, &spec.penalty, spec.weights).ok()?;
        let gz = [g[0] * theta.alpha, g[1] * theta.beta, g[2]];
        Some((-v, free.iter().map(|&k| -gz[k]).collect()))
    };
    let zf0: Vec<f64> = free.iter().map(|&k| z0[k]).collect();
    let report = if free.is_empty() {
        // nothing to optimize: evaluate once
        let f = objective;
        match f(&[]) {
            Some((v, _)) => OptimReport {
                x: vec![],
                value: v,
                grad: vec![],
                iterations: 0,
                evaluations: 1,
                status: OptimStatus::Converged,
            },
            None => OptimReport {
                x: vec![],
                value: f64::NAN,
                grad: vec![],
                iterations: 0,
                evaluations: 1,
                status: OptimStatus::ObjectiveFailure,
            },
        }
    } else {
        minimize(objective, &zf0, &opts.bfgs)
    };

    let theta = from_z(&full(&report.x));
    let status = if theta.validate().is_err() {
        FitStatus::ImplausibleEstimates
    } else {
        classify_convergence(&report, bbs_plausible(&theta, x, &opts.plausibility), opts)
    };
    let loglik_plain = if report.status == OptimStatus::ObjectiveFailure {
        f64::NAN
    } else {
        likelihood::weighted_value_and_score(&theta, x, None).0
    };
    let stderr = if status == FitStatus::Converged {
        likelihood::observed_info_weighted(&theta, x, &spec.penalty, spec.weights)
            .ok()
            .and_then(|j| stderr_from_info(&j, &free))
    } else {
        None
    };
    Ok(FitResult {
        params: theta,
        stderr,
        loglik_plain,
        loglik_penalized: -report.value,
        status,
        iterations: report.iterations,
        grad_norm: report.grad_norm(),
    })
}

/// Standard errors from the free block of an information matrix.
fn stderr_from_info(j: &Matrix3<f64>, free: &[usize]) -> Option<[f64; 3]> {
    let m = free.len();
    if m == 0 {
        return Some([0.0; 3]);
    }
    let block = DMatrix::from_fn(m, m, |r, c| j[(free[r], free[c])]);
    let inv = block.cholesky()?.inverse();
    let mut se = [0.0; 3];
    for (i, &k) in free.iter().enumerate() {
        se[k] = inv[(i, i)].sqrt();
    }
    Some(se)
}

/// Maximum likelihood fit of GBS₂ over `(log α, log β, log ν)`.
pub fn fit_gbs2(x: &Sample, opts: &FitOptions) -> Result<Gbs2Fit> {
    fit_gbs2_from(x, &gbs2_start(x)?, opts)
}

pub fn fit_gbs2_from(x: &Sample, start: &Gbs2Params, opts: &FitOptions) -> Result<Gbs2Fit> {
    start.validate()?;
    let objective = |z: &[f64]| {
        let q = Gbs2Params::from_array([z[0].exp(), z[1].exp(), z[2].exp()]);
        q.validate().ok()?;
        let (v, g) = likelihood::gbs2_loglik_and_grad(&q, x);
        if !v.is_finite() {
            return None;
        }
        Some((-v, vec![-g[0] * q.alpha, -g[1] * q.beta, -g[2] * q.nu]))
    };
    let z0 = [start.alpha.ln(), start.beta.ln(), start.nu.ln()];
    let report = minimize(objective, &z0, &opts.bfgs);
    let q = Gbs2Params::from_array([report.x[0].exp(), report.x[1].exp(), report.x[2].exp()]);
    let status = if q.validate().is_err() {
        FitStatus::ImplausibleEstimates
    } else {
        classify_convergence(&report, gbs2_plausible(&q, x, &opts.plausibility), opts)
    };
    let stderr = if status == FitStatus::Converged { gbs2_stderr(&q, x) } else { None };
    Ok(FitResult {
        params: q,
        stderr,
        loglik_plain: -report.value,
        loglik_penalized: -report.value,
        status,
        iterations: report.iterations,
        grad_norm: report.grad_norm(),
    })
}

fn gbs2_stderr(q: &Gbs2Params, x: &Sample) -> Option<[f64; 3]> {
    let base = q.as_array();
    let mut jac = Matrix3::zeros();
    for j in 0..3 {
        let h = 1e-5 * base[j];
        let mut up = base;
        up[j] += h;
        let mut dn = base;
        dn[j] -= h;
        let gu = likelihood::gbs2_loglik_and_grad(&Gbs2Params::from_array(up), x).1;
        let gd = likelihood::gbs2_loglik_and_grad(&Gbs2Params::from_array(dn), x).1;
        for i in 0..3 {
            jac[(i, j)] = (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    let info = -(jac + jac.transpose()) * 0.5;
    stderr_from_info(&info, &[0, 1, 2])
}
