//! Hypothesis tests on the BBS parameters.
//!
//! [`two_sided`] holds the likelihood-ratio, score and Wald tests with their
//! bootstrap and Bartlett-corrected versions; [`one_sided`] holds the signed
//! likelihood-ratio test for bimodality and its corrections.

pub mod one_sided;
pub mod two_sided;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::BbsParams;
use crate::error::{Error, Result};
use crate::estimation::{fit_bbs, fit_bbs_restricted, BbsFit, FitOptions};
use crate::likelihood::PenaltySpec;
use crate::normal;
use crate::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Alpha,
    Beta,
    Gamma,
}

impl Parameter {
    pub fn index(self) -> usize {
        match self {
            Parameter::Alpha => 0,
            Parameter::Beta => 1,
            Parameter::Gamma => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Parameter::Alpha => "alpha",
            Parameter::Beta => "beta",
            Parameter::Gamma => "gamma",
        }
    }
}

impl std::str::FromStr for Parameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Parameter::Alpha),
            "beta" => Ok(Parameter::Beta),
            "gamma" => Ok(Parameter::Gamma),
            other => Err(Error::InvalidTest(format!("unknown parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    Less,
    Greater,
}

/// `H₀: ψ = ψ₀` for one or more parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub parameters: Vec<Parameter>,
    pub null_values: Vec<f64>,
    #[serde(default = "two_sided")]
    pub alternative: Alternative,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn two_sided() -> Alternative {
    Alternative::TwoSided
}

fn default_level() -> f64 {
    0.05
}

impl TestSpec {
    pub fn scalar(parameter: Parameter, null_value: f64) -> Self {
        Self { parameters: vec![parameter], null_values: vec![null_value], alternative: Alternative::TwoSided, level: 0.05 }
    }

    /// `H₀: γ ≥ 0` against `H₁: γ < 0`.
    pub fn bimodality() -> Self {
        Self { alternative: Alternative::Less, ..Self::scalar(Parameter::Gamma, 0.0) }
    }

    pub fn q(&self) -> usize {
        self.parameters.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if !(1..=3).contains(&q) || self.null_values.len() != q {
            return Err(Error::InvalidTest(format!(
                "{q} parameters with {} null values",
                self.null_values.len()
            )));
        }
        for (i, p) in self.parameters.iter().enumerate() {
            if self.parameters[..i].contains(p) {
                return Err(Error::InvalidTest(format!("parameter {} listed twice", p.name())));
            }
        }
        for (p, &v) in self.parameters.iter().zip(&self.null_values) {
            let ok = v.is_finite() && (*p == Parameter::Gamma || v > 0.0);
            if !ok {
                return Err(Error::InvalidTest(format!("null value {v} invalid for {}", p.name())));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidTest(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }

    /// The restriction in the form taken by the restricted fit.
    pub fn fixed(&self) -> [Option<f64>; 3] {
        let mut f = [None; 3];
        for (p, &v) in self.parameters.iter().zip(&self.null_values) {
            f[p.index()] = Some(v);
        }
        f
    }

    pub(crate) fn scalar_parameter(&self) -> Result<Parameter> {
        match self.parameters.as_slice() {
            [p] => Ok(*p),
            _ => Err(Error::InvalidTest("this test needs a scalar parameter of interest".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lr,
    Score,
    Wald,
    LrBootstrap,
    ScoreBootstrap,
    LrBartlett,
    Slr,
    SlrC1,
    SlrC2,
    SlrBootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case")]
pub enum Reference {
    ChiSquare { df: usize },
    StandardNormal,
    Bootstrap { replicates: usize },
}

/// What happened to a higher-order correction of `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    Applied,
    /// `|R|` too small for `log(U/R)/R`; `R` is reported unchanged.
    SkippedSmallR,
    /// `U/R` not positive or not finite; `R` is reported unchanged.
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Bootstrap replicates discarded because a fit failed.
    pub failed_replicates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correction: Option<Correction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncorrected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub reference: Reference,
    pub bootstrap_b: Option<usize>,
    pub diagnostics: Diagnostics,
}

impl TestResult {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value <= level
    }
}

/// Upper tail of `χ²_q` for `q ∈ {1, 2, 3}`.
pub fn chi_square_sf(w: f64, q: usize) -> f64 {
    if w <= 0.0 {
        return 1.0;
    }
    let r = w.sqrt();
    match q {
        1 => 2.0 * normal::sf(r),
        2 => (-0.5 * w).exp(),
        3 => 2.0 * normal::sf(r) + 2.0 * r * normal::pdf(r),
        _ => panic!("chi-square tail only needed for 1 ≤ q ≤ 3, got {q}"),
    }
}

/// Inverse of [`chi_square_sf`]: the `p` quantile of `χ²_q`.
pub fn chi_square_quantile(p: f64, q: usize) -> f64 {
    match q {
        1 => normal::quantile_upper(0.5 * (1.0 - p)).powi(2),
        2 => -2.0 * (-p).ln_1p(),
        _ => {
            let (mut lo, mut hi) = (0.0, 1.0);
            while 1.0 - chi_square_sf(hi, q) < p {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if 1.0 - chi_square_sf(mid, q) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// Standard normal p-value of `r` against `alt`.
pub fn normal_p_value(r: f64, alt: Alternative) -> f64 {
    match alt {
        Alternative::Less => normal::cdf(r),
        Alternative::Greater => normal::sf(r),
        Alternative::TwoSided => (2.0 * normal::sf(r.abs())).min(1.0),
    }
}

/// Share of failed bootstrap replicates above which a test is abandoned.
pub const MAX_FAILED_SHARE: f64 = 0.2;

/// Unrestricted and restricted fits for one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedFits {
    pub unrestricted: BbsFit,
    pub restricted: BbsFit,
}

impl NestedFits {
    pub fn compute(x: &Sample, spec: &TestSpec, penalty: &PenaltySpec, opts: &FitOptions) -> Result<Self> {
        spec.validate()?;
        let mut unrestricted = fit_bbs(x, penalty, opts)?;
        let fixed = spec.fixed();
        let mut restricted = fit_bbs_restricted(x, penalty, fixed, opts)?;
        // With γ < 0 the likelihood has several local maxima in β, so the
        // restricted search is repeated from θ̂ projected onto the null.
        if unrestricted.converged() {
            let mut start = unrestricted.params.as_array();
            for (s, f) in start.iter_mut().zip(fixed) {
                if let Some(v) = f {
                    *s = v;
                }
            }
            let spec = crate::estimation::BbsFitSpec {
                penalty: *penalty,
                fixed,
                start: Some(BbsParams::from_array(start)),
                ..Default::default()
            };
            if let Ok(alt) = crate::estimation::fit_bbs_with(x, &spec, opts) {
                let better = alt.loglik_penalized > restricted.loglik_penalized || !restricted.converged();
                if alt.converged() && better {
                    restricted = alt;
                }
            }
        }
        // A restricted maximum above the unrestricted one means the
        // unrestricted search stopped early; restart it from the restricted optimum.
        if restricted.converged() && restricted.loglik_penalized > unrestricted.loglik_penalized + 1e-8 {
            let retry = crate::estimation::fit_bbs_with(
                x,
                &crate::estimation::BbsFitSpec {
                    penalty: *penalty,
                    start: Some(restricted.params),
                    ..Default::default()
                },
                opts,
            )?;
            if retry.loglik_penalized >= restricted.loglik_penalized - 1e-8 {
                unrestricted = retry;
            }
        }
        Ok(Self { unrestricted, restricted })
    }

    pub fn both_converged(&self) -> bool {
        self.unrestricted.converged() && self.restricted.converged()
    }

    pub(crate) fn require_both(&self) -> Result<()> {
        if self.both_converged() {
            Ok(())
        } else {
            Err(self.failure())
        }
    }

    pub(crate) fn failure(&self) -> Error {
        Error::FitFailed {
            unrestricted: Some(self.unrestricted.status),
            restricted: Some(self.restricted.status),
        }
    }

    /// Penalized likelihood-ratio statistic `2{ℓ*(θ̂) − ℓ*(θ̃)}`, clamped at zero.
    pub fn lr_statistic(&self) -> f64 {
        (2.0 * (self.unrestricted.loglik_penalized - self.restricted.loglik_penalized)).max(0.0)
    }
}

/// Runs `b` replicates in parallel, keeping their order. Returns the
/// successful values and the number of failures.
pub(crate) fn run_replicates<T, F>(b: usize, f: F) -> (Vec<T>, usize)
where
    T: Send,
    F: Fn(u64) -> Option<T> + Sync,
{
    let out: Vec<Option<T>> = (0..b as u64).into_par_iter().map(&f).collect();
    let failed = out.iter().filter(|o| o.is_none()).count();
    (out.into_iter().flatten().collect(), failed)
}

pub(crate) fn check_failures(failed: usize, requested: usize) -> Result<()> {
    if failed as f64 > MAX_FAILED_SHARE * requested as f64 {
        Err(Error::BootstrapFailures { failed, requested })
    } else {
        Ok(())
    }
}

pub(crate) fn check_b(b: usize) -> Result<()> {
    if b < 99 {
        Err(Error::InvalidTest(format!("bootstrap needs B ≥ 99, got {b}")))
    } else {
        Ok(())
    }
}

/// `(#{r ≥ observed} + 1)/(B + 1)`.
pub fn p_upper(observed: f64, replicates: &[f64]) -> f64 {
    let k = replicates.iter().filter(|&&r| r >= observed).count();
    (k + 1) as f64 / (replicates.len() + 1) as f64
}

/// `(#{r ≤ observed} + 1)/(B + 1)`.
pub fn p_lower(observed: f64, replicates: &[f64]) -> f64 {
    let k = replicates.iter().filter(|&&r| r <= observed).count();
    (k + 1) as f64 / (replicates.len() + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chi_square_tails() {
        assert_relative_eq!(chi_square_sf(3.841_458_820_694_124, 1), 0.05, epsilon = 1e-12);
        assert_relative_eq!(chi_square_sf(5.991_464_547_107_979, 2), 0.05, epsilon = 1e-12);
        assert_relative_eq!(chi_square_sf(7.814_727_903_251_178, 3), 0.05, epsilon = 1e-12);
        assert_eq!(chi_square_sf(0.0, 1), 1.0);
        // independent route: numerical integral of the χ²₃ density
        let dens = |u: f64| (u.sqrt() * (-u / 2.0).exp() / (2.0f64 * std::f64::consts::PI).sqrt(), u);
        let mut acc = 0.0;
        let (a, b, m) = (2.5, 80.0, 200_000);
        let h = (b - a) / m as f64;
        for i in 0..m {
            acc += dens(a + (i as f64 + 0.5) * h).0 * h;
        }
        assert_relative_eq!(chi_square_sf(2.5, 3), acc, epsilon = 1e-8);
    }

    #[test]
    fn chi_square_quantiles_invert_tails() {
        for q in 1..=3 {
            for p in [0.5, 0.9, 0.95, 0.99] {
                let w = chi_square_quantile(p, q);
                assert_relative_eq!(chi_square_sf(w, q), 1.0 - p, epsilon = 1e-12);
            }
        }
        assert_relative_eq!(chi_square_quantile(0.95, 1), 3.841_458_820_694_124, epsilon = 1e-10);
    }

    #[test]
    fn bootstrap_counting() {
        let reps: Vec<f64> = (0..99).map(|i| i as f64).collect();
        assert_relative_eq!(p_upper(1000.0, &reps), 0.01);
        assert_relative_eq!(p_upper(-1.0, &reps), 1.0);
        assert_relative_eq!(p_lower(-1.0, &reps), 0.01);
        assert_relative_eq!(p_lower(1000.0, &reps), 1.0);
        assert!(check_failures(20, 100).is_ok());
        assert!(check_failures(21, 100).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(TestSpec::scalar(Parameter::Alpha, 0.5).validate().is_ok());
        assert!(TestSpec::scalar(Parameter::Alpha, -0.5).validate().is_err());
        let dup = TestSpec {
            parameters: vec![Parameter::Alpha, Parameter::Alpha],
            null_values: vec![1.0, 1.0],
            ..TestSpec::scalar(Parameter::Alpha, 1.0)
        };
        assert!(dup.validate().is_err());
        let t = TestSpec::bimodality();
        assert_eq!(t.fixed(), [None, None, Some(0.0)]);
    }

    #[test]
    fn normal_p_values() {
        assert_relative_eq!(normal_p_value(0.0, Alternative::Less), 0.5);
        assert_relative_eq!(normal_p_value(-1.959_963_984_540_054, Alternative::Less), 0.025, epsilon = 1e-12);
        assert_relative_eq!(normal_p_value(1.959_963_984_540_054, Alternative::TwoSided), 0.05, epsilon = 1e-12);
    }
}
