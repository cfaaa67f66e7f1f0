//! Likelihood-ratio, score and Wald tests with bootstrap versions.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{
    check_b, check_failures, chi_square_sf, p_upper, run_replicates, Diagnostics, Method, NestedFits, Reference,
    TestResult, TestSpec,
};
use crate::distributions::{BbsParams, Sample};
use crate::error::{Error, Result};
use crate::estimation::{fit_bbs_restricted, BbsFit, FitOptions};
use crate::likelihood::{penalized_expected_info, penalized_objective, PenaltySpec};
use crate::stream::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    Lr,
    Score,
}

fn chi_square_result(statistic: f64, q: usize, method: Method) -> TestResult {
    TestResult {
        statistic,
        p_value: chi_square_sf(statistic, q),
        method,
        reference: Reference::ChiSquare { df: q },
        bootstrap_b: None,
        diagnostics: Diagnostics::default(),
    }
}

/// `W = 2{ℓ*(θ̂) − ℓ*(θ̃)}` against `χ²_q`.
pub fn lr_test(x: &Sample, spec: &TestSpec, penalty: &PenaltySpec, opts: &FitOptions) -> Result<TestResult> {
    let fits = NestedFits::compute(x, spec, penalty, opts)?;
    fits.require_both()?;
    Ok(chi_square_result(fits.lr_statistic(), spec.q(), Method::Lr))
}

fn score_statistic(x: &Sample, restricted: &BbsParams, penalty: &PenaltySpec) -> Result<f64> {
    let (_, u) = penalized_objective(restricted, x, penalty)?;
    let k = penalized_expected_info(restricted, x.len(), penalty)?;
    let u = nalgebra::Vector3::from(u);
    let sol = k
        .cholesky()
        .ok_or_else(|| Error::Numerical("penalized expected information not positive definite".into()))?
        .solve(&u);
    Ok(u.dot(&sol).max(0.0))
}

fn require(fit: &BbsFit, restricted: bool) -> Result<()> {
    if fit.converged() {
        return Ok(());
    }
    Err(if restricted {
        Error::FitFailed { unrestricted: None, restricted: Some(fit.status) }
    } else {
        Error::FitFailed { unrestricted: Some(fit.status), restricted: None }
    })
}

/// `W_S = U*(θ̃)ᵀ K*(θ̃)⁻¹ U*(θ̃)` against `χ²₁`.
pub fn score_test(x: &Sample, spec: &TestSpec, penalty: &PenaltySpec, opts: &FitOptions) -> Result<TestResult> {
    spec.validate()?;
    spec.scalar_parameter()?;
    let restricted = fit_bbs_restricted(x, penalty, spec.fixed(), opts)?;
    require(&restricted, true)?;
    let w = score_statistic(x, &restricted.params, penalty)?;
    Ok(chi_square_result(w, 1, Method::Score))
}

fn wald_statistic(theta: &BbsParams, n: usize, k: usize, psi0: f64, penalty: &PenaltySpec) -> Result<f64> {
    let kstar: Matrix3<f64> = penalized_expected_info(theta, n, penalty)?;
    let inv = kstar
        .try_inverse()
        .ok_or_else(|| Error::Numerical("penalized expected information is singular".into()))?;
    let v = inv[(k, k)];
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Numerical(format!("nonpositive inverse information entry {v}")));
    }
    Ok((theta.as_array()[k] - psi0).powi(2) / v)
}

/// `W_W = (ψ̂ − ψ₀)²/K*(θ̂)^{ψψ}` against `χ²₁`.
pub fn wald_test(x: &Sample, spec: &TestSpec, penalty: &PenaltySpec, opts: &FitOptions) -> Result<TestResult> {
    spec.validate()?;
    let psi = spec.scalar_parameter()?;
    let fit = crate::estimation::fit_bbs(x, penalty, opts)?;
    require(&fit, false)?;
    let w = wald_statistic(&fit.params, x.len(), psi.index(), spec.null_values[0], penalty)?;
    Ok(chi_square_result(w, 1, Method::Wald))
}

/// Observed statistic and bootstrap replicates under `BBS(θ̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub observed: f64,
    pub replicates: Vec<f64>,
    pub failed: usize,
    pub requested: usize,
    pub q: usize,
}

impl BootstrapDraws {
    pub fn p_value(&self) -> f64 {
        p_upper(self.observed, &self.replicates)
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics { failed_replicates: self.failed, ..Default::default() }
    }

    pub fn bootstrap_result(&self, method: Method) -> TestResult {
        TestResult {
            statistic: self.observed,
            p_value: self.p_value(),
            method,
            reference: Reference::Bootstrap { replicates: self.replicates.len() },
            bootstrap_b: Some(self.replicates.len()),
            diagnostics: self.diagnostics(),
        }
    }

    /// `W·q/mean(W*)` against `χ²_q`; `trim` is the fraction cut from each
    /// end before averaging.
    pub fn bartlett_result(&self, trim: f64) -> Result<TestResult> {
        let m = trimmed_mean(&self.replicates, trim);
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Numerical(format!("bootstrap mean of the LR statistic is {m}")));
        }
        let w = self.observed * self.q as f64 / m;
        Ok(TestResult {
            statistic: w,
            p_value: chi_square_sf(w, self.q),
            method: Method::LrBartlett,
            reference: Reference::ChiSquare { df: self.q },
            bootstrap_b: Some(self.replicates.len()),
            diagnostics: self.diagnostics(),
        })
    }
}

pub fn trimmed_mean(v: &[f64], trim: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = (trim.clamp(0.0, 0.49) * s.len() as f64).floor() as usize;
    let kept = &s[k..s.len() - k];
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn replicate_statistic(
    y: &Sample,
    spec: &TestSpec,
    penalty: &PenaltySpec,
    kind: StatisticKind,
    opts: &FitOptions,
) -> Option<f64> {
    match kind {
        StatisticKind::Lr => {
            let fits = NestedFits::compute(y, spec, penalty, opts).ok()?;
            fits.both_converged().then(|| fits.lr_statistic())
        }
        StatisticKind::Score => {
            let r = fit_bbs_restricted(y, penalty, spec.fixed(), opts).ok()?;
            if !r.converged() {
                return None;
            }
            score_statistic(y, &r.params, penalty).ok()
        }
    }
}

/// Draws the parametric bootstrap for `kind`. Replicate `b` uses the stream `key.child(b)`.
pub fn bootstrap_draws(
    x: &Sample,
    spec: &TestSpec,
    penalty: &PenaltySpec,
    kind: StatisticKind,
    b: usize,
    key: StreamKey,
    opts: &FitOptions,
) -> Result<BootstrapDraws> {
    spec.validate()?;
    check_b(b)?;
    let (observed, null) = match kind {
        StatisticKind::Lr => {
            let fits = NestedFits::compute(x, spec, penalty, opts)?;
            fits.require_both()?;
            (fits.lr_statistic(), fits.restricted.params)
        }
        StatisticKind::Score => {
            spec.scalar_parameter()?;
            let r = fit_bbs_restricted(x, penalty, spec.fixed(), opts)?;
            require(&r, true)?;
            (score_statistic(x, &r.params, penalty)?, r.params)
        }
    };
    let n = x.len();
    let (replicates, failed) = run_replicates(b, |i| {
        let mut rng = key.child(i).rng();
        let y = null.sample(n, &mut rng).ok()?;
        replicate_statistic(&y, spec, penalty, kind, opts)
    });
    check_failures(failed, b)?;
    Ok(BootstrapDraws { observed, replicates, failed, requested: b, q: spec.q() })
}

/// LR and score replicates computed on the same pseudo-samples.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDraws {
    pub lr: BootstrapDraws,
    pub score: Option<BootstrapDraws>,
}

/// One bootstrap pass shared by `LR_pb`, `LR_bbc` and (for scalar `ψ`) `S_pb`.
pub fn joint_bootstrap(
    x: &Sample,
    spec: &TestSpec,
    penalty: &PenaltySpec,
    b: usize,
    key: StreamKey,
    opts: &FitOptions,
) -> Result<JointDraws> {
    spec.validate()?;
    check_b(b)?;
    let fits = NestedFits::compute(x, spec, penalty, opts)?;
    fits.require_both()?;
    let scalar = spec.q() == 1;
    let observed_score = if scalar { score_statistic(x, &fits.restricted.params, penalty).ok() } else { None };
    let null = fits.restricted.params;
    let n = x.len();
    let out: Vec<(Option<f64>, Option<f64>)> = {
        use rayon::prelude::*;
        (0..b as u64)
            .into_par_iter()
            .map(|i| {
                let Ok(y) = null.sample(n, &mut key.child(i).rng()) else { return (None, None) };
                let Ok(f) = NestedFits::compute(&y, spec, penalty, opts) else { return (None, None) };
                let lr = f.both_converged().then(|| f.lr_statistic());
                let sc = (observed_score.is_some() && f.restricted.converged())
                    .then(|| score_statistic(&y, &f.restricted.params, penalty).ok())
                    .flatten();
                (lr, sc)
            })
            .collect()
    };
    let collect = |pick: fn(&(Option<f64>, Option<f64>)) -> Option<f64>| {
        let v: Vec<f64> = out.iter().filter_map(pick).collect();
        let failed = b - v.len();
        (v, failed)
    };
    let (lr_reps, lr_failed) = collect(|o| o.0);
    check_failures(lr_failed, b)?;
    let lr = BootstrapDraws { observed: fits.lr_statistic(), replicates: lr_reps, failed: lr_failed, requested: b, q: spec.q() };
    let score = match observed_score {
        Some(obs) => {
            let (reps, failed) = collect(|o| o.1);
            check_failures(failed, b)?;
            Some(BootstrapDraws { observed: obs, replicates: reps, failed, requested: b, q: 1 })
        }
        None => None,
    };
    Ok(JointDraws { lr, score })
}

/// Bootstrap p-value `(#{W* ≥ W} + 1)/(B + 1)` from pseudo-samples drawn under the null fit.
pub fn bootstrap_two_sided(
    x: &Sample,
    spec: &TestSpec,
    penalty: &PenaltySpec,
    kind: StatisticKind,
    b: usize,
    key: StreamKey,
    opts: &FitOptions,
) -> Result<TestResult> {
    let draws = bootstrap_draws(x, spec, penalty, kind, b, key, opts)?;
    let method = match kind {
        StatisticKind::Lr => Method::LrBootstrap,
        StatisticKind::Score => Method::ScoreBootstrap,
    };
    Ok(draws.bootstrap_result(method))
}

/// Bootstrap Bartlett-corrected LR statistic `W·q/mean(W*)`.
pub fn bartlett_bootstrap_lr(
    x: &Sample,
    spec: &TestSpec,
    penalty: &PenaltySpec,
    b: usize,
    key: StreamKey,
    trim: f64,
    opts: &FitOptions,
) -> Result<TestResult> {
    bootstrap_draws(x, spec, penalty, StatisticKind::Lr, b, key, opts)?.bartlett_result(trim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::fit_bbs;
    use crate::hypothesis::Parameter;
    use approx::assert_relative_eq;

    fn data(theta: (f64, f64, f64), n: usize, seed: u64) -> Sample {
        let p = BbsParams::new(theta.0, theta.1, theta.2).unwrap();
        p.sample(n, &mut StreamKey::new(seed).rng()).unwrap()
    }

    #[test]
    fn null_at_estimate_gives_zero_statistics() {
        let x = data((0.5, 1.0, -0.5), 80, 3);
        let pen = PenaltySpec::modified(1.0);
        let opts = FitOptions::default();
        let fit = fit_bbs(&x, &pen, &opts).unwrap();
        assert!(fit.converged());
        for (p, k) in [(Parameter::Alpha, 0), (Parameter::Gamma, 2)] {
            let spec = TestSpec::scalar(p, fit.params.as_array()[k]);
            let lr = lr_test(&x, &spec, &pen, &opts).unwrap();
            assert!(lr.statistic < 1e-8, "{lr:?}");
            assert!(lr.p_value > 0.999);
            let wald = wald_test(&x, &spec, &pen, &opts).unwrap();
            assert!(wald.statistic < 1e-12);
            let score = score_test(&x, &spec, &pen, &opts).unwrap();
            assert!(score.statistic < 1e-8, "{score:?}");
        }
    }

    #[test]
    fn statistics_nonnegative_on_random_instances() {
        let pen = PenaltySpec::modified(1.0);
        let opts = FitOptions::default();
        let mut checked = 0;
        for seed in 0..20 {
            let x = data((0.5, 1.0, 0.0), 40, 100 + seed);
            let spec = TestSpec::scalar(Parameter::Alpha, 0.5);
            let (Ok(lr), Ok(sc), Ok(wd)) =
                (lr_test(&x, &spec, &pen, &opts), score_test(&x, &spec, &pen, &opts), wald_test(&x, &spec, &pen, &opts))
            else {
                continue;
            };
            for r in [&lr, &sc, &wd] {
                assert!(r.statistic >= 0.0 && r.statistic.is_finite());
                assert!((0.0..=1.0).contains(&r.p_value));
            }
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} instances converged");
    }

    #[test]
    fn vector_lr_uses_q_degrees_of_freedom() {
        let x = data((0.5, 1.0, 0.0), 60, 9);
        let spec = TestSpec {
            parameters: vec![Parameter::Alpha, Parameter::Gamma],
            null_values: vec![0.5, 0.0],
            ..TestSpec::scalar(Parameter::Alpha, 0.5)
        };
        let opts = FitOptions::default();
        let r = lr_test(&x, &spec, &PenaltySpec::modified(1.0), &opts).unwrap();
        assert_eq!(r.reference, Reference::ChiSquare { df: 2 });
        assert_relative_eq!(r.p_value, (-r.statistic / 2.0).exp(), epsilon = 1e-14);
        assert!(score_test(&x, &spec, &PenaltySpec::modified(1.0), &opts).is_err());
    }

    #[test]
    fn lr_p_value_decreases_away_from_estimate() {
        let x = data((0.5, 1.0, -0.5), 100, 21);
        let pen = PenaltySpec::modified(1.0);
        let opts = FitOptions::default();
        let a_hat = fit_bbs(&x, &pen, &opts).unwrap().params.alpha;
        let mut last = 1.0 + 1e-12;
        for k in 0..8 {
            let a0 = a_hat * (1.0 + 0.04 * k as f64);
            let p = lr_test(&x, &TestSpec::scalar(Parameter::Alpha, a0), &pen, &opts).unwrap().p_value;
            assert!(p <= last + 1e-9, "α₀ = {a0}: {p} > {last}");
            last = p;
        }
        assert!(last < 0.5);
    }

    #[test]
    fn wald_gamma_invariant_under_rescaling() {
        let pen = PenaltySpec::modified(1.0);
        let opts = FitOptions::default();
        let spec = TestSpec::scalar(Parameter::Gamma, 0.0);
        let mut checked = 0;
        for seed in 0..10 {
            let x = data((0.5, 1.0, -0.5), 60, 300 + seed);
            let Ok(a) = wald_test(&x, &spec, &pen, &opts) else { continue };
            let b = wald_test(&x.scaled(7.3).unwrap(), &spec, &pen, &opts).unwrap();
            assert_relative_eq!(a.statistic, b.statistic, max_relative = 1e-4);
            checked += 1;
        }
        assert!(checked >= 8);
    }

    #[test]
    fn bootstrap_p_value_on_grid_and_reproducible() {
        let x = data((0.5, 1.0, 0.0), 30, 5);
        let spec = TestSpec::scalar(Parameter::Alpha, 0.5);
        let pen = PenaltySpec::modified(1.0);
        let opts = FitOptions::default();
        let key = StreamKey::new(77);
        let b = 99;
        let d = bootstrap_draws(&x, &spec, &pen, StatisticKind::Lr, b, key, &opts).unwrap();
        assert_eq!(d.replicates.len() + d.failed, b);
        let r = d.bootstrap_result(Method::LrBootstrap);
        let k = r.p_value * (d.replicates.len() + 1) as f64;
        assert!((k - k.round()).abs() < 1e-9 && k >= 1.0);
        let again = bootstrap_draws(&x, &spec, &pen, StatisticKind::Lr, b, key, &opts).unwrap();
        assert_eq!(d, again);
        let joint = joint_bootstrap(&x, &spec, &pen, b, key, &opts).unwrap();
        assert_eq!(joint.lr, d);
        let bb = d.bartlett_result(0.0).unwrap();
        assert!(bb.statistic / d.observed > 0.0);
        let sc = bootstrap_two_sided(&x, &spec, &pen, StatisticKind::Score, b, key, &opts).unwrap();
        assert!(sc.p_value > 0.0 && sc.p_value <= 1.0);
    }

    #[test]
    fn bartlett_identity_when_mean_is_q() {
        let d = BootstrapDraws { observed: 2.5, replicates: vec![0.5, 1.5, 1.0], failed: 0, requested: 3, q: 1 };
        assert_relative_eq!(d.bartlett_result(0.0).unwrap().statistic, 2.5);
        assert_relative_eq!(trimmed_mean(&[100.0, 1.0, 2.0, 3.0, -50.0], 0.2), 2.0);
        let low = BootstrapDraws { observed: 2.0, replicates: vec![0.0; 5], ..d.clone() };
        assert!(low.bartlett_result(0.0).is_err());
    }

    #[test]
    fn bootstrap_counting_extremes() {
        let d = BootstrapDraws { observed: 10.0, replicates: vec![1.0; 99], failed: 0, requested: 99, q: 1 };
        assert_relative_eq!(d.p_value(), 0.01);
        let d = BootstrapDraws { observed: 0.0, ..d };
        assert_relative_eq!(d.p_value(), 1.0);
    }
}
