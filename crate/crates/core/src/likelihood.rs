//! Plain, penalized and bootstrap-weighted BBS log-likelihoods.
//!
//! Scores are analytic. Observed information is the central-difference
//! Jacobian of the analytic score; expected information is obtained from the
//! information identity `K = n E[s sᵀ]` by quadrature. Penalties are smooth
//! data-free functions of `θ`, so their derivatives are taken numerically.

use nalgebra::Matrix3;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::distributions::{t_inverse, BbsParams, Gbs2Params, Sample};
use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::{integrate, QuadOptions};

/// Which penalty, if any, is added to the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    None,
    Jeffreys,
    Modified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    /// Exponent `φ` on the modified penalty. Ignored by the other kinds.
    #[serde(default = "default_power")]
    pub power: f64,
}

fn default_power() -> f64 {
    1.0
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self::modified(1.0)
    }
}

impl PenaltySpec {
    pub const fn none() -> Self {
        Self { kind: PenaltyKind::None, power: 1.0 }
    }

    pub const fn jeffreys() -> Self {
        Self { kind: PenaltyKind::Jeffreys, power: 1.0 }
    }

    pub const fn modified(power: f64) -> Self {
        Self { kind: PenaltyKind::Modified, power }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::InvalidParams(format!("penalty power {} must be positive", self.power)));
        }
        Ok(())
    }
}

/// Observed and expected information, plain and penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrices {
    pub observed: Matrix3<f64>,
    pub expected: Matrix3<f64>,
    pub penalized_expected: Matrix3<f64>,
    pub penalized_observed: Matrix3<f64>,
}

/// Mean bootstrap selection frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetterBootstrapWeights {
    pub mean_frequencies: Vec<f64>,
    pub resamples_used: usize,
}

#[inline]
fn sign(t: f64) -> f64 {
    if t < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Per-observation log-density and score.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Terms {
    pub value: f64,
    pub score: [f64; 3],
}

/// Quantities that depend on `θ` only.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamConsts {
    alpha: f64,
    beta: f64,
    gamma: f64,
    ln_norm: f64,
    omega: f64,
    sqrt_beta: f64,
}

impl ParamConsts {
    pub(crate) fn new(p: &BbsParams) -> Self {
        Self {
            alpha: p.alpha,
            beta: p.beta,
            gamma: p.gamma,
            ln_norm: p.ln_norm() + normal::LN_SQRT_2PI,
            omega: normal::hazard(p.gamma),
            sqrt_beta: p.beta.sqrt(),
        }
    }

    #[inline]
    pub(crate) fn terms(&self, x: f64) -> Terms {
        let (a, b, g) = (self.alpha, self.beta, self.gamma);
        let sx = x.sqrt();
        let r = sx / self.sqrt_beta;
        let t = (r - 1.0 / r) / a;
        let at = t.abs();
        let y = at + g;
        let value = -self.ln_norm - 1.5 * x.ln() + (x + b).ln() - 0.5 * y * y;
        let s_a = (t * t + g * at - 1.0) / a;
        let s_b = -0.5 / b + 1.0 / (x + b) + sign(t) * y * (r + 1.0 / r) / (2.0 * a * b);
        let s_g = self.omega - g - at;
        Terms { value, score: [s_a, s_b, s_g] }
    }
}

fn check_weights(x: &Sample, w: Option<&[f64]>) -> Result<()> {
    if let Some(w) = w {
        if w.len() != x.len() {
            return Err(Error::InvalidSample(format!(
                "{} weights for {} observations",
                w.len(),
                x.len()
            )));
        }
    }
    Ok(())
}

/// `Σ wᵢ log f(xᵢ)` and its gradient. Unit weights when `w` is `None`.
pub(crate) fn weighted_value_and_score(theta: &BbsParams, x: &Sample, w: Option<&[f64]>) -> (f64, [f64; 3]) {
    let c = ParamConsts::new(theta);
    let mut value = 0.0;
    let mut score = [0.0; 3];
    for (i, &xi) in x.values().iter().enumerate() {
        let wi = w.map_or(1.0, |w| w[i]);
        let tm = c.terms(xi);
        value += wi * tm.value;
        for k in 0..3 {
            score[k] += wi * tm.score[k];
        }
    }
    (value, score)
}

/// Log-likelihood.
pub fn loglik(theta: &BbsParams, x: &Sample) -> Result<f64> {
    theta.validate()?;
    Ok(weighted_value_and_score(theta, x, None).0)
}

/// Score vector `(U_α, U_β, U_γ)`.
pub fn score(theta: &BbsParams, x: &Sample) -> Result<[f64; 3]> {
    theta.validate()?;
    Ok(weighted_value_and_score(theta, x, None).1)
}

/// Per-observation scores, one row per observation.
pub fn observation_scores(theta: &BbsParams, x: &Sample) -> Vec<[f64; 3]> {
    let c = ParamConsts::new(theta);
    x.values().iter().map(|&xi| c.terms(xi).score).collect()
}

/// Per-observation log-densities.
pub fn observation_logliks(theta: &BbsParams, x: &Sample) -> Vec<f64> {
    let c = ParamConsts::new(theta);
    x.values().iter().map(|&xi| c.terms(xi).value).collect()
}

/// Better-bootstrap log-likelihood: every data term weighted by `n P*ᵢ`.
pub fn weighted_loglik(theta: &BbsParams, x: &Sample, w: &BetterBootstrapWeights) -> Result<f64> {
    theta.validate()?;
    let n = x.len() as f64;
    let scaled: Vec<f64> = w.mean_frequencies.iter().map(|p| n * p).collect();
    check_weights(x, Some(&scaled))?;
    Ok(weighted_value_and_score(theta, x, Some(&scaled)).0)
}

/// Mean selection frequencies over `b` nonparametric resamples.
pub fn better_bootstrap_weights<R: Rng + ?Sized>(x: &Sample, b: usize, rng: &mut R) -> Result<BetterBootstrapWeights> {
    if b == 0 {
        return Err(Error::Domain("better bootstrap needs at least one resample".into()));
    }
    let n = x.len();
    let mut counts = vec![0u64; n];
    for _ in 0..b * n {
        counts[rng.random_range(0..n)] += 1;
    }
    let denom = (b * n) as f64;
    Ok(BetterBootstrapWeights {
        mean_frequencies: counts.into_iter().map(|c| c as f64 / denom).collect(),
        resamples_used: b,
    })
}

/// `A(γ) = (γ−ω)ω[3+γ(γ−ω)]/2 + 1`, the argument of the log in `Q_γ`.
///
/// Direct evaluation cancels catastrophically for large `γ`; past 25 the
/// asymptotic expansion is more accurate.
pub fn penalty_argument(gamma: f64) -> f64 {
    if gamma >= 25.0 {
        let r = 1.0 / (gamma * gamma);
        2.0 * r * r * r * (1.0 - 24.0 * r + 465.0 * r * r - 8792.0 * r * r * r)
    } else {
        let w = normal::hazard(gamma);
        let d = gamma - w;
        let a = d * w * (3.0 + gamma * d) / 2.0 + 1.0;
        debug_assert!(a > 0.0 && a <= 1.0 + 1e-12, "penalty argument {a} at γ = {gamma}");
        a.min(1.0)
    }
}

/// `Q_γ = −½ log A(γ)`.
pub fn q_gamma(gamma: f64) -> f64 {
    -0.5 * penalty_argument(gamma).ln()
}

/// `Q_α = ½ log(1+α²)`.
pub fn q_alpha(alpha: f64) -> f64 {
    0.5 * (alpha * alpha).ln_1p()
}

/// Modified penalty raised to `power`: `Q^φ`.
pub fn modified_penalty(theta: &BbsParams, power: f64) -> f64 {
    let q = (q_gamma(theta.gamma) + q_alpha(theta.alpha)).max(0.0);
    if power == 1.0 {
        q
    } else {
        q.powf(power)
    }
}

fn lbb_options() -> QuadOptions {
    QuadOptions { abs_tol: 1e-14, rel_tol: 1e-13, ..Default::default() }
}

/// `L_ββ = E[(X+β)⁻²]`.
///
/// Written over `Y = |T|+γ` with both signs of `T` folded together, which
/// leaves a bounded integrand in `[1/2, 1]`: with `s = (X/β)^{1/2}` at
/// `T = |T|`, `(1+s⁴)/(1+s²)²`.
pub fn l_beta_beta(theta: &BbsParams) -> Result<f64> {
    theta.validate()?;
    let (a, g) = (theta.alpha, theta.gamma);
    let ln_mass = normal::ln_sf(g);
    let f = |y: f64| {
        let w = (normal::ln_pdf(y) - ln_mass).exp();
        if !(w > 0.0 && w.is_finite()) {
            return [0.0];
        }
        let inv = 1.0 / t_inverse(y - g, a, 1.0);
        let fold = (1.0 + inv * inv) / ((1.0 + inv) * (1.0 + inv));
        [0.5 * w * fold]
    };
    let split = g.max(0.0);
    let mut total = 0.0;
    if g < split {
        total += integrate(f, g, split, lbb_options())?.value[0];
    }
    total += integrate(f, split, f64::INFINITY, lbb_options())?.value[0];
    Ok(total / (theta.beta * theta.beta))
}

/// Jeffreys penalty `½ log|K|` in the product form with the `3+γ(γ−ω)` factor.
pub fn jeffreys_penalty(theta: &BbsParams) -> Result<f64> {
    let (a, b, g) = (theta.alpha, theta.beta, theta.gamma);
    let w = normal::hazard(g);
    let first = l_beta_beta(theta)? + 1.0 / (a * a * b * b) + g * (g - w) / (4.0 * b * b);
    let second = 2.0 * penalty_argument(g) / (a * a);
    if !(first > 0.0 && second > 0.0) {
        return Err(Error::Numerical(format!(
            "Jeffreys penalty brackets not positive at {theta:?}: {first}, {second}"
        )));
    }
    Ok(0.5 * first.ln() + 0.5 * second.ln())
}

/// Signed penalty contribution: the penalized objective is `ℓ + penalty_term`.
pub fn penalty_term(theta: &BbsParams, spec: &PenaltySpec) -> Result<f64> {
    match spec.kind {
        PenaltyKind::None => Ok(0.0),
        PenaltyKind::Jeffreys => jeffreys_penalty(theta),
        PenaltyKind::Modified => Ok(-modified_penalty(theta, spec.power)),
    }
}

const PENALTY_GRAD_STEP: f64 = 1e-6;
const PENALTY_HESS_STEP: f64 = 1e-4;

fn shifted(theta: &BbsParams, j: usize, h: f64) -> BbsParams {
    let mut v = theta.as_array();
    v[j] += h;
    BbsParams::from_array(v)
}

/// Central-difference gradient of the penalty term.
pub fn penalty_gradient(theta: &BbsParams, spec: &PenaltySpec) -> Result<[f64; 3]> {
    let mut g = [0.0; 3];
    if spec.kind == PenaltyKind::None {
        return Ok(g);
    }
    let v = theta.as_array();
    for j in 0..3 {
        let h = PENALTY_GRAD_STEP * v[j].abs().max(1.0);
        let h = if j < 2 { h.min(0.5 * v[j]) } else { h };
        g[j] = (penalty_term(&shifted(theta, j, h), spec)? - penalty_term(&shifted(theta, j, -h), spec)?) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Hessian of the penalty term.
pub fn penalty_hessian(theta: &BbsParams, spec: &PenaltySpec) -> Result<Matrix3<f64>> {
    let mut hm = Matrix3::zeros();
    if spec.kind == PenaltyKind::None {
        return Ok(hm);
    }
    let v = theta.as_array();
    let mut h = [0.0; 3];
    for j in 0..3 {
        h[j] = PENALTY_HESS_STEP * v[j].abs().max(1.0);
        if j < 2 {
            h[j] = h[j].min(0.25 * v[j]);
        }
    }
    let f = |d: [f64; 3]| -> Result<f64> {
        let mut p = v;
        for k in 0..3 {
            p[k] += d[k];
        }
        penalty_term(&BbsParams::from_array(p), spec)
    };
    let f0 = f([0.0; 3])?;
    for i in 0..3 {
        let mut e = [0.0; 3];
        e[i] = h[i];
        let fp = f(e)?;
        e[i] = -h[i];
        let fm = f(e)?;
        hm[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let corner = |si: f64, sj: f64| -> Result<f64> {
                let mut d = [0.0; 3];
                d[i] = si * h[i];
                d[j] = sj * h[j];
                f(d)
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * h[i] * h[j]);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    Ok(hm)
}

/// Penalized objective and its gradient.
pub fn penalized_objective(theta: &BbsParams, x: &Sample, spec: &PenaltySpec) -> Result<(f64, [f64; 3])> {
    objective_with_weights(theta, x, spec, None)
}

/// Penalized objective with optional per-observation weights.
pub(crate) fn objective_with_weights(
    theta: &BbsParams,
    x: &Sample,
    spec: &PenaltySpec,
    w: Option<&[f64]>,
) -> Result<(f64, [f64; 3])> {
    theta.validate()?;
    spec.validate()?;
    check_weights(x, w)?;
    let (mut value, mut grad) = weighted_value_and_score(theta, x, w);
    if spec.kind != PenaltyKind::None {
        value += penalty_term(theta, spec)?;
        let pg = penalty_gradient(theta, spec)?;
        for k in 0..3 {
            grad[k] += pg[k];
        }
    }
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("objective not finite at {theta:?}")));
    }
    Ok((value, grad))
}

/// Jacobian of the analytic (weighted) score by central differences, unsymmetrized.
pub(crate) fn score_jacobian(theta: &BbsParams, x: &Sample, w: Option<&[f64]>) -> Matrix3<f64> {
    let v = theta.as_array();
    let mut jac = Matrix3::zeros();
    for j in 0..3 {
        let mut h = 1e-5 * v[j].abs().max(1.0);
        if j < 2 {
            h = h.min(0.5 * v[j]);
        }
        let up = weighted_value_and_score(&shifted(theta, j, h), x, w).1;
        let dn = weighted_value_and_score(&shifted(theta, j, -h), x, w).1;
        for i in 0..3 {
            jac[(i, j)] = (up[i] - dn[i]) / (2.0 * h);
        }
    }
    jac
}

/// Observed information `J = −∂²ℓ/∂θ∂θᵀ`, optionally of the penalized objective.
pub fn observed_info(theta: &BbsParams, x: &Sample, spec: &PenaltySpec) -> Result<Matrix3<f64>> {
    observed_info_weighted(theta, x, spec, None)
}

pub(crate) fn observed_info_weighted(
    theta: &BbsParams,
    x: &Sample,
    spec: &PenaltySpec,
    w: Option<&[f64]>,
) -> Result<Matrix3<f64>> {
    theta.validate()?;
    check_weights(x, w)?;
    let h = score_jacobian(theta, x, w);
    let mut j = -(h + h.transpose()) * 0.5;
    if spec.kind != PenaltyKind::None {
        j -= penalty_hessian(theta, spec)?;
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("observed information not finite at {theta:?}")));
    }
    Ok(j)
}

/// Expected information `K = n ∫ s sᵀ f` for a sample of size `n`.
pub fn expected_info(theta: &BbsParams, n: usize) -> Result<Matrix3<f64>> {
    theta.validate()?;
    let c = ParamConsts::new(theta);
    let e = theta.expect(
        |x| {
            let s = c.terms(x).score;
            [s[0] * s[0], s[0] * s[1], s[0] * s[2], s[1] * s[1], s[1] * s[2], s[2] * s[2]]
        },
        QuadOptions::default(),
    )?;
    let nf = n as f64;
    Ok(Matrix3::new(e[0], e[1], e[2], e[1], e[3], e[4], e[2], e[4], e[5]) * nf)
}

/// Expected information of the penalized objective: `K − ∇²(penalty term)`.
pub fn penalized_expected_info(theta: &BbsParams, n: usize, spec: &PenaltySpec) -> Result<Matrix3<f64>> {
    Ok(expected_info(theta, n)? - penalty_hessian(theta, spec)?)
}

pub fn info_matrices(theta: &BbsParams, x: &Sample, spec: &PenaltySpec) -> Result<InfoMatrices> {
    let observed = observed_info(theta, x, &PenaltySpec::none())?;
    let expected = expected_info(theta, x.len())?;
    let ph = penalty_hessian(theta, spec)?;
    Ok(InfoMatrices {
        observed,
        expected,
        penalized_expected: expected - ph,
        penalized_observed: observed - ph,
    })
}

/// GBS₂ log-likelihood and its gradient in `(α, β, ν)`.
pub fn gbs2_loglik_and_grad(q: &Gbs2Params, x: &Sample) -> (f64, [f64; 3]) {
    let (a, b, nu) = (q.alpha, q.beta, q.nu);
    let mut value = 0.0;
    let mut g = [0.0; 3];
    for &xi in x.values() {
        let l = (xi / b).ln();
        let nl = nu * l;
        let w = 2.0 * nl.sinh();
        let c = 2.0 * nl.cosh();
        let th = nl.tanh();
        value += q.ln_pdf_unchecked(xi);
        g[0] += -1.0 / a + w * w / (a * a * a);
        g[1] += (-th + w * c / (a * a)) * nu / b;
        g[2] += 1.0 / nu + l * (th - w * c / (a * a));
    }
    (value, g)
}

pub fn gbs2_loglik(q: &Gbs2Params, x: &Sample) -> Result<f64> {
    q.validate()?;
    Ok(x.values().iter().map(|&v| q.ln_pdf_unchecked(v)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::StreamKey;
    use approx::assert_relative_eq;
    use rand::RngExt;

    fn random_instance(k: u64, n: usize) -> (BbsParams, Sample) {
        let mut rng = StreamKey::new(42).child(k).rng();
        let a = rng.random_range(0.2..2.0);
        let b = rng.random_range(0.5..3.0);
        let g = rng.random_range(-2.0..1.5);
        let p = BbsParams::new(a, b, g).unwrap();
        let x = p.sample(n, &mut rng).unwrap();
        // evaluate away from the generating point
        let q = BbsParams::new(a * 1.1, b * 0.95, g + 0.2).unwrap();
        (q, x)
    }

    #[test]
    fn loglik_is_sum_of_log_densities() {
        for k in 0..5 {
            let (p, x) = random_instance(k, 50);
            let direct: f64 = x.values().iter().map(|&v| p.ln_pdf(v).unwrap()).sum();
            assert_relative_eq!(loglik(&p, &x).unwrap(), direct, epsilon = 1e-10, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_observation_at_median() {
        let p = BbsParams::new(0.5, 1.0, 0.0).unwrap();
        let x = Sample::new(vec![1.0]).unwrap();
        assert_relative_eq!(loglik(&p, &x).unwrap(), p.ln_pdf(1.0).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn score_matches_finite_differences() {
        for k in 0..20 {
            let (p, x) = random_instance(k, 40);
            let s = score(&p, &x).unwrap();
            let v = p.as_array();
            for j in 0..3 {
                let h = 1e-6 * v[j].abs().max(1.0);
                let fd = (loglik(&shifted(&p, j, h), &x).unwrap() - loglik(&shifted(&p, j, -h), &x).unwrap())
                    / (2.0 * h);
                let err = (s[j] - fd).abs() / s[j].abs().max(1.0);
                assert!(err < 1e-6, "instance {k} component {j}: {} vs {fd}", s[j]);
            }
        }
    }

    #[test]
    fn gamma_score_far_in_bimodal_region() {
        let p = BbsParams::new(0.5, 1.0, -10.0).unwrap();
        let x = Sample::new(vec![0.8, 1.2, 2.0]).unwrap();
        let s = score(&p, &x).unwrap()[2];
        let sum_abs_t: f64 = x.values().iter().map(|&v| crate::distributions::t_transform(v, 0.5, 1.0).abs()).sum();
        assert_relative_eq!(s, 30.0 - sum_abs_t, epsilon = 1e-12);
        assert!(s < 30.3);
    }

    #[test]
    fn penalty_argument_in_unit_interval() {
        let mut g = -30.0;
        while g <= 30.0 {
            let a = penalty_argument(g);
            assert!(a > 0.0 && a <= 1.0, "A({g}) = {a}");
            assert!(q_gamma(g) >= 0.0);
            g += 0.01;
        }
        for &a in &[1e-8, 0.1, 1.0, 10.0] {
            assert!(q_alpha(a) >= 0.0);
        }
    }

    #[test]
    fn penalty_branches_meet() {
        let lo = {
            let w = normal::hazard(25.0);
            let d = 25.0 - w;
            d * w * (3.0 + 25.0 * d) / 2.0 + 1.0
        };
        assert_relative_eq!(penalty_argument(25.0), lo, max_relative = 1e-4);
    }

    #[test]
    fn modified_penalty_values() {
        let w0 = normal::hazard(0.0);
        // A(0) = 1 − 3ω²/2
        let oracle = -0.5 * (1.0 - 1.5 * w0 * w0).ln();
        assert_relative_eq!(q_gamma(0.0), oracle, epsilon = 1e-14);
        assert!((q_gamma(0.0) - 1.5498).abs() < 1e-3);
        let p = BbsParams::new(0.5, 1.0, 0.0).unwrap();
        assert!((modified_penalty(&p, 1.0) - 1.6614).abs() < 1e-3);
        assert!(q_gamma(-20.0) < 1e-12);
        assert_eq!(q_alpha(0.0), 0.0);
        assert!(q_gamma(10.0) > q_gamma(5.0));
        assert!(q_gamma(60.0) > q_gamma(30.0));
        let q = modified_penalty(&p, 1.0);
        assert_relative_eq!(modified_penalty(&p, 2.0), q * q, epsilon = 1e-14);
    }

    #[test]
    fn power_changes_objective_by_q_minus_q_squared() {
        let (p, x) = random_instance(3, 30);
        let one = penalized_objective(&p, &x, &PenaltySpec::modified(1.0)).unwrap().0;
        let two = penalized_objective(&p, &x, &PenaltySpec::modified(2.0)).unwrap().0;
        let q = modified_penalty(&p, 1.0);
        assert_relative_eq!(one - two, q * q - q, epsilon = 1e-10);
    }

    #[test]
    fn unpenalized_objective_is_loglik() {
        let (p, x) = random_instance(1, 30);
        let (v, g) = penalized_objective(&p, &x, &PenaltySpec::none()).unwrap();
        assert_eq!(v, loglik(&p, &x).unwrap());
        assert_eq!(g, score(&p, &x).unwrap());
    }

    #[test]
    fn penalized_gradient_matches_finite_differences() {
        for spec in [PenaltySpec::modified(1.0), PenaltySpec::modified(0.6), PenaltySpec::jeffreys()] {
            for k in 0..20 {
                let (p, x) = random_instance(k, 30);
                let (_, g) = penalized_objective(&p, &x, &spec).unwrap();
                let v = p.as_array();
                for j in 0..3 {
                    let h = 1e-5 * v[j].abs().max(1.0);
                    let up = penalized_objective(&shifted(&p, j, h), &x, &spec).unwrap().0;
                    let dn = penalized_objective(&shifted(&p, j, -h), &x, &spec).unwrap().0;
                    let fd = (up - dn) / (2.0 * h);
                    let err = (g[j] - fd).abs() / g[j].abs().max(1.0);
                    assert!(err < 1e-5, "{spec:?} instance {k} component {j}: {} vs {fd}", g[j]);
                }
            }
        }
    }

    #[test]
    fn lbb_against_generic_quadrature_and_scaling() {
        for &(a, g) in &[(0.5, 0.0), (0.3, -2.0), (2.0, 1.0), (1.0, -8.0), (0.5, 20.0)] {
            let p = BbsParams::new(a, 1.7, g).unwrap();
            let direct = p.expect(|x| [1.0 / ((x + 1.7) * (x + 1.7))], QuadOptions::default()).unwrap()[0];
            assert_relative_eq!(l_beta_beta(&p).unwrap(), direct, max_relative = 1e-8);
            let scaled = BbsParams::new(a, 1.7 * 3.0, g).unwrap();
            assert_relative_eq!(l_beta_beta(&scaled).unwrap(), l_beta_beta(&p).unwrap() / 9.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn lbb_matches_monte_carlo() {
        let p = BbsParams::new(0.5, 1.0, 0.0).unwrap();
        let mut rng = StreamKey::new(7).rng();
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = 1.0 / (p.draw(&mut rng) + 1.0).powi(2);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((l_beta_beta(&p).unwrap() - mean).abs() < 3.0 * se);
    }

    #[test]
    fn jeffreys_term_by_term() {
        let p = BbsParams::new(0.8, 1.3, -0.7).unwrap();
        let w = normal::hazard(-0.7);
        let first = l_beta_beta(&p).unwrap() + 1.0 / (0.64 * 1.69) + (-0.7) * (-0.7 - w) / (4.0 * 1.69);
        let second = ((-0.7 - w) * w * (3.0 + (-0.7) * (-0.7 - w)) + 2.0) / 0.64;
        assert_relative_eq!(jeffreys_penalty(&p).unwrap(), 0.5 * (first * second).ln(), epsilon = 1e-12);
    }

    #[test]
    fn expected_info_determinant_matches_product_formula() {
        let p = BbsParams::new(0.5, 1.0, 0.0).unwrap();
        let k = expected_info(&p, 1).unwrap();
        let formula = (2.0 * jeffreys_penalty(&p).unwrap()).exp();
        assert_relative_eq!(k.determinant(), formula, max_relative = 1e-4);
        let k2 = expected_info(&p, 2).unwrap();
        assert_relative_eq!(k2, k * 2.0, max_relative = 1e-14);
    }

    #[test]
    fn expected_info_matches_simulated_outer_products() {
        let p = BbsParams::new(0.7, 1.5, -0.5).unwrap();
        let k = expected_info(&p, 1).unwrap();
        let mut rng = StreamKey::new(11).rng();
        let x = p.sample(200_000, &mut rng).unwrap();
        let mut acc = Matrix3::zeros();
        for s in observation_scores(&p, &x) {
            let v = nalgebra::Vector3::from(s);
            acc += v * v.transpose();
        }
        acc /= x.len() as f64;
        for i in 0..3 {
            for j in 0..3 {
                let scale = (k[(i, i)] * k[(j, j)]).sqrt();
                assert!((acc[(i, j)] - k[(i, j)]).abs() < 0.05 * scale, "({i},{j}) {} vs {}", acc[(i, j)], k[(i, j)]);
            }
        }
        assert!(k.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn observed_info_symmetric_and_converges_to_expected() {
        let p = BbsParams::new(0.5, 1.0, 0.0).unwrap();
        let mut rng = StreamKey::new(5).rng();
        let x = p.sample(10_000, &mut rng).unwrap();
        let h = score_jacobian(&p, &x, None);
        let defect = (h - h.transpose()).abs().max() / h.abs().max();
        assert!(defect < 1e-6, "asymmetry {defect}");
        let j = observed_info(&p, &x, &PenaltySpec::none()).unwrap() / x.len() as f64;
        let k = expected_info(&p, 1).unwrap();
        for i in 0..3 {
            for c in 0..3 {
                let scale = (k[(i, i)] * k[(c, c)]).sqrt();
                assert!((j[(i, c)] - k[(i, c)]).abs() < 0.05 * scale, "({i},{c}) {} vs {}", j[(i, c)], k[(i, c)]);
            }
        }
    }

    #[test]
    fn penalized_information_adds_penalty_curvature() {
        let p = BbsParams::new(0.5, 1.0, 0.3).unwrap();
        let kn = penalized_expected_info(&p, 20, &PenaltySpec::none()).unwrap();
        assert_eq!(kn, expected_info(&p, 20).unwrap());
        let km = penalized_expected_info(&p, 20, &PenaltySpec::modified(1.0)).unwrap();
        let d = km - kn;
        // Q is separable in α and γ, and free of β
        assert!(d[(0, 2)].abs() < 1e-5 && d[(1, 1)].abs() < 1e-5);
        // ∂²Q_α/∂α² = (1−α²)/(1+α²)²
        assert_relative_eq!(d[(0, 0)], 0.75 / 1.5625, max_relative = 1e-5);
        assert!(km.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn better_bootstrap_weights_behave() {
        let x = Sample::new((1..=20).map(|v| v as f64 / 7.0).collect()).unwrap();
        let mut rng = StreamKey::new(3).rng();
        let w = better_bootstrap_weights(&x, 10_000, &mut rng).unwrap();
        let total: f64 = w.mean_frequencies.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let bound = 5.0 / (10_000.0f64 * 20.0).sqrt();
        assert!(w.mean_frequencies.iter().all(|p| (p - 0.05).abs() < bound));

        let p = BbsParams::new(0.6, 1.1, -0.4).unwrap();
        let uniform = BetterBootstrapWeights { mean_frequencies: vec![0.05; 20], resamples_used: 1 };
        assert_relative_eq!(weighted_loglik(&p, &x, &uniform).unwrap(), loglik(&p, &x).unwrap(), epsilon = 1e-10);

        let direct: f64 = x
            .values()
            .iter()
            .zip(&w.mean_frequencies)
            .map(|(&v, &pi)| 20.0 * pi * p.ln_pdf(v).unwrap())
            .sum();
        assert_relative_eq!(weighted_loglik(&p, &x, &w).unwrap(), direct, epsilon = 1e-10);
    }

    #[test]
    fn gbs2_gradient_matches_finite_differences() {
        let mut rng = StreamKey::new(9).rng();
        for k in 0..10 {
            let q0 = Gbs2Params::new(0.5 + k as f64 * 0.5, 1.3, 0.6 + 0.5 * k as f64).unwrap();
            let x = q0.sample(40, &mut rng).unwrap();
            let q = Gbs2Params::new(q0.alpha * 1.1, 1.2, q0.nu * 0.9).unwrap();
            let (v, g) = gbs2_loglik_and_grad(&q, &x);
            assert_relative_eq!(v, gbs2_loglik(&q, &x).unwrap(), epsilon = 1e-12);
            let base = q.as_array();
            for j in 0..3 {
                let h = 1e-6 * base[j];
                let mut up = base;
                up[j] += h;
                let mut dn = base;
                dn[j] -= h;
                let fd = (gbs2_loglik(&Gbs2Params::from_array(up), &x).unwrap()
                    - gbs2_loglik(&Gbs2Params::from_array(dn), &x).unwrap())
                    / (2.0 * h);
                assert!((g[j] - fd).abs() < 1e-6 * g[j].abs().max(1.0), "{k} {j}: {} vs {fd}", g[j]);
            }
        }
    }
}
