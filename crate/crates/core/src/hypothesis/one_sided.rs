//! Signed likelihood-ratio test with higher-order corrections.
//!
//! `R` comes from the penalized fits. The corrections `U₁` (sample-space
//! derivatives through the pivots `zᵢ`) and `U₂` (covariance approximation)
//! use the unpenalized log-likelihood evaluated at the penalized estimates.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, RowVector3};

use super::{
    check_b, check_failures, normal_p_value, p_lower, p_upper, run_replicates, Alternative, Correction, Diagnostics,
    Method, NestedFits, Parameter, Reference, TestResult, TestSpec,
};
use crate::distributions::{BbsParams, Sample};
use crate::error::{Error, Result};
use crate::estimation::FitOptions;
use crate::likelihood::{observation_logliks, observation_scores, observed_info, PenaltySpec};
use crate::normal;
use crate::stream::StreamKey;

/// Below this `|R|` the term `log(U/R)/R` is not evaluated.
pub const SMALL_R: f64 = 1e-4;

/// Sample-space derivatives of one observation at one `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationDerivatives {
    pub t: f64,
    /// `y = |t| + γ`.
    pub y: f64,
    /// Pivot `z = {Φ(y) − Φ(γ)}/Φ(−γ)`.
    pub z: f64,
    pub dz_dx: f64,
    /// `∂z/∂(α, β, γ)`.
    pub dz_dtheta: [f64; 3],
    /// `vⱼ = −(∂z/∂x)⁻¹ ∂z/∂θⱼ`.
    pub v: [f64; 3],
    /// `∂ℓ/∂x`.
    pub l_x: f64,
    /// `∂²ℓ/∂θⱼ∂x`.
    pub l_theta_x: [f64; 3],
}

/// Moves `x` off `β` so that `sign(t)` is well defined.
fn untie(x: f64, beta: f64) -> f64 {
    if (x - beta).abs() <= 1e-12 * beta {
        beta * (1.0 + 1e-12)
    } else {
        x
    }
}

pub fn observation_derivatives(theta: &BbsParams, x: f64) -> ObservationDerivatives {
    let (a, b, g) = (theta.alpha, theta.beta, theta.gamma);
    let x = untie(x, b);
    let sb = b.sqrt();
    let x32 = x * x.sqrt();
    let r = (x / b).sqrt();
    let t = (r - 1.0 / r) / a;
    let sg = if t < 0.0 { -1.0 } else { 1.0 };
    let y = t.abs() + g;
    let sf_g = normal::sf(g);
    let z = -(normal::ln_sf(y) - normal::ln_sf(g)).exp_m1();
    let dt_dx = (x + b) / (2.0 * a * sb * x32);
    let dens = normal::pdf(y) / sf_g;
    let dz_dx = dens * sg * dt_dx;
    let dz_da = -dens * sg * t / a;
    let dz_db = -dens * sg * (r + 1.0 / r) / (2.0 * a * b);
    let dz_dg = (normal::cdf(y) - normal::cdf(g)) * normal::pdf(g) / (sf_g * sf_g) + (normal::pdf(y) - normal::pdf(g)) / sf_g;

    let v_a = 2.0 * sb * x32 * t / (x + b);
    let v_b = x / b;
    // 1 − Φ(−y)φ(γ)/{φ(y)Φ(−γ)}, free of the cancellation in the raw ∂z/∂γ
    let v_g = -2.0 * a * sb * x32 * (1.0 - normal::mills_ratio(y) * normal::hazard(g)) / (sg * (x + b));

    let l_x = -1.5 / x + 1.0 / (x + b) - y * sg * dt_dx;
    let l_ax = sg * (x + b) * (2.0 * t.abs() + g) / (2.0 * sb * x32 * a * a);
    let l_bx = -1.0 / (x + b).powi(2)
        + (x + b) * (r + 1.0 / r) / (4.0 * a * a * b * sb * x32)
        + sg * y * (x - b) / (4.0 * a * b * sb * x32);
    let l_gx = -sg * dt_dx;
    ObservationDerivatives {
        t,
        y,
        z,
        dz_dx,
        dz_dtheta: [dz_da, dz_db, dz_dg],
        v: [v_a, v_b, v_g],
        l_x,
        l_theta_x: [l_ax, l_bx, l_gx],
    }
}

/// Everything `U₁` needs, for a scalar parameter of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpaceDerivatives {
    /// `n × 3`, columns `(v_α, v_β, v_γ)` at `θ̂`.
    pub v: DMatrix<f64>,
    pub l_x_hat: DVector<f64>,
    pub l_x_tilde: DVector<f64>,
    /// `3 × n`.
    pub l_theta_x_hat: DMatrix<f64>,
    pub l_theta_x_tilde: DMatrix<f64>,
    /// Unpenalized observed information at `θ̂`.
    pub j_hat: Matrix3<f64>,
    /// Nuisance block of the unpenalized observed information at `θ̃`.
    pub j_lambda_tilde: Matrix2<f64>,
    /// Pivots at `θ̂`.
    pub z: DVector<f64>,
    /// `yᵢ = |tᵢ| + γ̂`.
    pub y: DVector<f64>,
}

fn nuisance(psi: Parameter) -> [usize; 2] {
    match psi {
        Parameter::Alpha => [1, 2],
        Parameter::Beta => [0, 2],
        Parameter::Gamma => [0, 1],
    }
}

fn nuisance_block(j: &Matrix3<f64>, psi: Parameter) -> Matrix2<f64> {
    let l = nuisance(psi);
    Matrix2::from_fn(|r, c| j[(l[r], l[c])])
}

pub fn sample_space_derivatives(
    x: &Sample,
    theta_hat: &BbsParams,
    theta_tilde: &BbsParams,
    psi: Parameter,
) -> Result<SampleSpaceDerivatives> {
    let n = x.len();
    let hat: Vec<_> = x.values().iter().map(|&xi| observation_derivatives(theta_hat, xi)).collect();
    let tilde: Vec<_> = x.values().iter().map(|&xi| observation_derivatives(theta_tilde, xi)).collect();
    let none = PenaltySpec::none();
    let d = SampleSpaceDerivatives {
        v: DMatrix::from_fn(n, 3, |i, j| hat[i].v[j]),
        l_x_hat: DVector::from_fn(n, |i, _| hat[i].l_x),
        l_x_tilde: DVector::from_fn(n, |i, _| tilde[i].l_x),
        l_theta_x_hat: DMatrix::from_fn(3, n, |j, i| hat[i].l_theta_x[j]),
        l_theta_x_tilde: DMatrix::from_fn(3, n, |j, i| tilde[i].l_theta_x[j]),
        j_hat: observed_info(theta_hat, x, &none)?,
        j_lambda_tilde: nuisance_block(&observed_info(theta_tilde, x, &none)?, psi),
        z: DVector::from_fn(n, |i, _| hat[i].z),
        y: DVector::from_fn(n, |i, _| hat[i].y),
    };
    let finite = d.v.iter().chain(d.l_x_hat.iter()).chain(d.l_x_tilde.iter()).all(|v| v.is_finite())
        && d.l_theta_x_hat.iter().chain(d.l_theta_x_tilde.iter()).all(|v| v.is_finite());
    if !finite {
        return Err(Error::Numerical("sample-space derivatives not finite".into()));
    }
    Ok(d)
}

/// `det[A; B_λ] / (|J̃_λλ|^{1/2} |Ĵ|^{1/2})` with the columns ordered `(ψ, λ)`.
fn determinant_ratio(
    top: &RowVector3<f64>,
    rows: &Matrix3<f64>,
    psi: Parameter,
    j_hat: &Matrix3<f64>,
    j_lambda_tilde: &Matrix2<f64>,
) -> f64 {
    let l = nuisance(psi);
    let cols = [psi.index(), l[0], l[1]];
    let m = Matrix3::from_fn(|r, c| if r == 0 { top[cols[c]] } else { rows[(l[r - 1], cols[c])] });
    m.determinant() / (j_lambda_tilde.determinant().sqrt() * j_hat.determinant().sqrt())
}

/// Fraser's `U₁`.
pub fn u1(d: &SampleSpaceDerivatives, psi: Parameter) -> f64 {
    // φ(θ) = ℓ_{;x}(θ)V̂ and φ_θ(θ) = ℓ_{θ;x}(θ)V̂
    let phi_hat = d.l_x_hat.transpose() * &d.v;
    let phi_tilde = d.l_x_tilde.transpose() * &d.v;
    let phi_t_hat = Matrix3::from_iterator((&d.l_theta_x_hat * &d.v).iter().copied());
    let phi_t_tilde = Matrix3::from_iterator((&d.l_theta_x_tilde * &d.v).iter().copied());
    let Some(inv) = phi_t_hat.try_inverse() else { return f64::NAN };
    let diff = RowVector3::from_iterator((phi_hat - phi_tilde).iter().copied());
    let gamma = diff * inv * d.j_hat;
    let psi_m = phi_t_tilde * inv * d.j_hat;
    determinant_ratio(&gamma, &psi_m, psi, &d.j_hat, &d.j_lambda_tilde)
}

/// `Q(θ; θ₀) = Σ ℓ⁽ⁱ⁾(θ) sᵢ(θ₀)ᵀ` and `I(θ; θ₀) = Σ sᵢ(θ) sᵢ(θ₀)ᵀ`.
pub fn covariance_terms(x: &Sample, theta: &BbsParams, theta0: &BbsParams) -> (RowVector3<f64>, Matrix3<f64>) {
    let l = observation_logliks(theta, x);
    let s = observation_scores(theta, x);
    let s0 = observation_scores(theta0, x);
    let mut q = RowVector3::zeros();
    let mut i_m = Matrix3::zeros();
    for k in 0..x.len() {
        let s0k = RowVector3::from(s0[k]);
        q += s0k * l[k];
        i_m += nalgebra::Vector3::from(s[k]) * s0k;
    }
    (q, i_m)
}

/// Severini's `U₂`.
pub fn u2(x: &Sample, theta_hat: &BbsParams, theta_tilde: &BbsParams, psi: Parameter) -> Result<f64> {
    let none = PenaltySpec::none();
    let j_hat = observed_info(theta_hat, x, &none)?;
    let j_lt = nuisance_block(&observed_info(theta_tilde, x, &none)?, psi);
    let (q_hh, i_hh) = covariance_terms(x, theta_hat, theta_hat);
    let (q_th, i_th) = covariance_terms(x, theta_tilde, theta_hat);
    let inv = i_hh.try_inverse().ok_or_else(|| Error::Numerical("I(θ̂; θ̂) is singular".into()))?;
    let delta = (q_hh - q_th) * inv * j_hat;
    let sigma = i_th * inv * j_hat;
    Ok(determinant_ratio(&delta, &sigma, psi, &j_hat, &j_lt))
}

/// `R + log(U/R)/R`, or `R` with a flag when the correction cannot be applied.
pub fn corrected_r(r: f64, u: f64) -> (f64, Correction) {
    if r.abs() < SMALL_R {
        return (r, Correction::SkippedSmallR);
    }
    let ratio = u / r;
    if !(ratio.is_finite() && ratio > 0.0) {
        return (r, Correction::Undefined);
    }
    (r + ratio.ln() / r, Correction::Applied)
}

/// `R = sign(ψ̂ − ψ₀)√W` from already computed fits.
pub fn signed_root(fits: &NestedFits, spec: &TestSpec) -> Result<f64> {
    let psi = spec.scalar_parameter()?;
    let d = fits.unrestricted.params.as_array()[psi.index()] - spec.null_values[0];
    Ok(if d < 0.0 { -1.0 } else { 1.0 } * fits.lr_statistic().sqrt())
}

fn normal_result(statistic: f64, alt: Alternative, method: Method, diagnostics: Diagnostics) -> TestResult {
    TestResult {
        statistic,
        p_value: normal_p_value(statistic, alt),
        method,
        reference: Reference::StandardNormal,
        bootstrap_b: None,
        diagnostics,
    }
}

fn checked_fits(x: &Sample, spec: &TestSpec, penalty: &PenaltySpec, opts: &FitOptions) -> Result<NestedFits> {
    spec.validate()?;
    spec.scalar_parameter()?;
    let fits = NestedFits::compute(x, spec, penalty, opts)?;
    fits.require_both()?;
    Ok(fits)
}

/// The signed penalized likelihood-ratio test.
pub fn slr(x: &Sample, spec: &TestSpec, penalty: &PenaltySpec, opts: &FitOptions) -> Result<TestResult> {
    let fits = checked_fits(x, spec, penalty, opts)?;
    let r = signed_root(&fits, spec)?;
    Ok(normal_result(r, spec.alternative, Method::Slr, Diagnostics::default()))
}

/// The three normal-reference one-sided statistics from one pair of fits.
#[derive(Debug, Clone, PartialEq)]
pub struct OneSidedSet {
    pub slr: TestResult,
    pub c1: TestResult,
    pub c2: TestResult,
}

fn corrected_result(r: f64, u: Result<f64>, spec: &TestSpec, method: Method) -> TestResult {
    let u = u.unwrap_or(f64::NAN);
    let (stat, flag) = corrected_r(r, u);
    let diag = Diagnostics { correction: Some(flag), u: Some(u), uncorrected: Some(r), ..Default::default() };
    normal_result(stat, spec.alternative, method, diag)
}

/// `SLR`, `SLR_c1` and `SLR_c2` sharing one pair of fits.
pub fn one_sided_set_from_fits(x: &Sample, fits: &NestedFits, spec: &TestSpec) -> Result<OneSidedSet> {
    let psi = spec.scalar_parameter()?;
    let r = signed_root(fits, spec)?;
    let (hat, tilde) = (&fits.unrestricted.params, &fits.restricted.params);
    let u_1 = sample_space_derivatives(x, hat, tilde, psi).map(|d| u1(&d, psi));
    let u_2 = u2(x, hat, tilde, psi);
    Ok(OneSidedSet {
        slr: normal_result(r, spec.alternative, Method::Slr, Diagnostics::default()),
        c1: corrected_result(r, u_1, spec, Method::SlrC1),
        c2: corrected_result(r, u_2, spec, Method::SlrC2),
    })
}

pub fn one_sided_set(x: &Sample, spec: &TestSpec, penalty: &PenaltySpec, opts: &FitOptions) -> Result<OneSidedSet> {
    let fits = checked_fits(x, spec, penalty, opts)?;
    one_sided_set_from_fits(x, &fits, spec)
}

/// `R_c1 = R + log(U₁/R)/R`.
pub fn slr_c1(x: &Sample, spec: &TestSpec, penalty: &PenaltySpec, opts: &FitOptions) -> Result<TestResult> {
    let fits = checked_fits(x, spec, penalty, opts)?;
    let psi = spec.scalar_parameter()?;
    let r = signed_root(&fits, spec)?;
    let u = sample_space_derivatives(x, &fits.unrestricted.params, &fits.restricted.params, psi).map(|d| u1(&d, psi));
    Ok(corrected_result(r, u, spec, Method::SlrC1))
}

/// `R_c2 = R + log(U₂/R)/R`.
pub fn slr_c2(x: &Sample, spec: &TestSpec, penalty: &PenaltySpec, opts: &FitOptions) -> Result<TestResult> {
    let fits = checked_fits(x, spec, penalty, opts)?;
    let psi = spec.scalar_parameter()?;
    let r = signed_root(&fits, spec)?;
    let u = u2(x, &fits.unrestricted.params, &fits.restricted.params, psi)?;
    Ok(corrected_result(r, Ok(u), spec, Method::SlrC2))
}

/// Parametric bootstrap of `R` under `BBS(θ̃)`.
pub fn slr_bootstrap(
    x: &Sample,
    spec: &TestSpec,
    penalty: &PenaltySpec,
    b: usize,
    key: StreamKey,
    opts: &FitOptions,
) -> Result<TestResult> {
    let fits = checked_fits(x, spec, penalty, opts)?;
    slr_bootstrap_from_fits(x, &fits, spec, penalty, b, key, opts)
}

pub fn slr_bootstrap_from_fits(
    x: &Sample,
    fits: &NestedFits,
    spec: &TestSpec,
    penalty: &PenaltySpec,
    b: usize,
    key: StreamKey,
    opts: &FitOptions,
) -> Result<TestResult> {
    check_b(b)?;
    let r = signed_root(fits, spec)?;
    let null = fits.restricted.params;
    let n = x.len();
    let (reps, failed) = run_replicates(b, |i| {
        let y = null.sample(n, &mut key.child(i).rng()).ok()?;
        let f = NestedFits::compute(&y, spec, penalty, opts).ok()?;
        if !f.both_converged() {
            return None;
        }
        signed_root(&f, spec).ok()
    });
    check_failures(failed, b)?;
    let p_value = match spec.alternative {
        Alternative::Less => p_lower(r, &reps),
        Alternative::Greater => p_upper(r, &reps),
        Alternative::TwoSided => {
            let abs: Vec<f64> = reps.iter().map(|v| v.abs()).collect();
            p_upper(r.abs(), &abs)
        }
    };
    Ok(TestResult {
        statistic: r,
        p_value,
        method: Method::SlrBootstrap,
        reference: Reference::Bootstrap { replicates: reps.len() },
        bootstrap_b: Some(reps.len()),
        diagnostics: Diagnostics { failed_replicates: failed, ..Default::default() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::fit_bbs;
    use crate::likelihood::expected_info;
    use approx::assert_relative_eq;
    use rand::RngExt;

    fn ln_f(theta: &BbsParams, x: f64) -> f64 {
        theta.ln_pdf(x).unwrap()
    }

    fn instances() -> Vec<(BbsParams, f64)> {
        let mut rng = StreamKey::new(11).rng();
        (0..30)
            .map(|_| {
                let p = BbsParams::new(rng.random_range(0.2..2.0), rng.random_range(0.5..3.0), rng.random_range(-2.0..2.0))
                    .unwrap();
                let x = p.draw(&mut rng);
                (p, x)
            })
            .filter(|(p, x)| (x - p.beta).abs() > 1e-3 * p.beta)
            .collect()
    }

    #[test]
    fn l_x_matches_finite_difference() {
        for (p, x) in instances() {
            let h = 1e-6 * x;
            let fd = (ln_f(&p, x + h) - ln_f(&p, x - h)) / (2.0 * h);
            let d = observation_derivatives(&p, x);
            assert!((d.l_x - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "{p:?} x={x}: {} vs {fd}", d.l_x);
        }
    }

    #[test]
    fn mixed_derivatives_match_both_routes() {
        for (p, x) in instances() {
            let d = observation_derivatives(&p, x);
            let th = p.as_array();
            // route 1: θ-difference of ∂ℓ/∂x
            // route 2: x-difference of the θ-difference of ℓ
            for j in 0..3 {
                let hj = 1e-6 * th[j].abs().max(1.0);
                let shift = |s: f64| {
                    let mut v = th;
                    v[j] += s * hj;
                    BbsParams::from_array(v)
                };
                let r1 = (observation_derivatives(&shift(1.0), x).l_x - observation_derivatives(&shift(-1.0), x).l_x)
                    / (2.0 * hj);
                let hx = 1e-4 * x;
                let hj2 = 1e-4 * th[j].abs().max(1.0);
                let shift2 = |s: f64| {
                    let mut v = th;
                    v[j] += s * hj2;
                    BbsParams::from_array(v)
                };
                let g = |xx: f64| (ln_f(&shift2(1.0), xx) - ln_f(&shift2(-1.0), xx)) / (2.0 * hj2);
                let r2 = (g(x + hx) - g(x - hx)) / (2.0 * hx);
                let scale = d.l_theta_x[j].abs().max(1e-2);
                assert!((d.l_theta_x[j] - r1).abs() < 1e-5 * scale, "{p:?} x={x} j={j}: {} vs {r1}", d.l_theta_x[j]);
                assert!((d.l_theta_x[j] - r2).abs() < 1e-3 * scale, "{p:?} x={x} j={j}: {} vs {r2}", d.l_theta_x[j]);
            }
        }
    }

    #[test]
    fn pivot_is_folded_cdf_and_v_satisfies_definition() {
        for (p, x) in instances() {
            let d = observation_derivatives(&p, x);
            assert!(d.z > 0.0 && d.z < 1.0);
            let sg = if d.t < 0.0 { -1.0 } else { 1.0 };
            assert_relative_eq!((1.0 + sg * d.z) / 2.0, p.cdf(x).unwrap(), epsilon = 1e-12);
            for j in 0..3 {
                let lhs = -d.dz_dx * d.v[j];
                assert!(
                    (lhs - d.dz_dtheta[j]).abs() <= 1e-8 * d.dz_dtheta[j].abs().max(1e-12),
                    "{p:?} x={x} j={j}: {lhs} vs {}",
                    d.dz_dtheta[j]
                );
            }
            // ∂z/∂θ against differences of the pivot itself
            let th = p.as_array();
            for j in 0..3 {
                let h = 1e-6 * th[j].abs().max(1.0);
                let mut up = th;
                up[j] += h;
                let mut dn = th;
                dn[j] -= h;
                let fd = (observation_derivatives(&BbsParams::from_array(up), x).z
                    - observation_derivatives(&BbsParams::from_array(dn), x).z)
                    / (2.0 * h);
                assert!((fd - d.dz_dtheta[j]).abs() < 1e-6 * d.dz_dtheta[j].abs().max(1e-3));
            }
        }
    }

    #[test]
    fn tie_rule_keeps_derivatives_finite() {
        let p = BbsParams::new(0.5, 2.0, -1.0).unwrap();
        let d = observation_derivatives(&p, 2.0);
        assert!(d.t > 0.0);
        assert!(d.v.iter().chain(d.l_theta_x.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn gram_matrix_and_information_identity() {
        let p = BbsParams::new(0.5, 1.0, -0.5).unwrap();
        let x = p.sample(10_000, &mut StreamKey::new(4).rng()).unwrap();
        let fit = fit_bbs(&x, &PenaltySpec::none(), &FitOptions::default()).unwrap();
        let th = fit.params;
        let (_, i_m) = covariance_terms(&x, &th, &th);
        assert!((i_m - i_m.transpose()).abs().max() < 1e-9 * i_m.abs().max());
        assert!(i_m.symmetric_eigenvalues().min() >= 0.0);
        let k = expected_info(&th, x.len()).unwrap();
        // entries compared on the scale √(KᵢᵢKⱼⱼ), since some vanish by symmetry
        for r in 0..3 {
            for c in 0..3 {
                let scale = (k[(r, r)] * k[(c, c)]).sqrt();
                assert!((i_m[(r, c)] - k[(r, c)]).abs() < 0.1 * scale, "{i_m} vs {k}");
            }
        }
    }

    #[test]
    fn slr_identities() {
        let p = BbsParams::new(0.5, 1.0, -0.5).unwrap();
        let x = p.sample(60, &mut StreamKey::new(8).rng()).unwrap();
        let pen = PenaltySpec::modified(1.0);
        let opts = FitOptions::default();
        let spec = TestSpec::bimodality();
        let fits = NestedFits::compute(&x, &spec, &pen, &opts).unwrap();
        let r = slr(&x, &spec, &pen, &opts).unwrap();
        assert_relative_eq!(r.statistic * r.statistic, fits.lr_statistic(), max_relative = 1e-12);
        assert_eq!(r.statistic < 0.0, fits.unrestricted.params.gamma < 0.0);

        let g_hat = fit_bbs(&x, &pen, &opts).unwrap().params.gamma;
        let at_hat = TestSpec { null_values: vec![g_hat], ..spec.clone() };
        let r0 = slr(&x, &at_hat, &pen, &opts).unwrap();
        assert!(r0.statistic.abs() < 1e-4);
        assert!((r0.p_value - 0.5).abs() < 1e-4);
        let c = slr_c1(&x, &at_hat, &pen, &opts).unwrap();
        assert_eq!(c.diagnostics.correction, Some(Correction::SkippedSmallR));
    }

    #[test]
    fn corrections_positive_on_null_instances() {
        let p = BbsParams::new(0.5, 1.0, 0.0).unwrap();
        let pen = PenaltySpec::modified(1.0);
        let opts = FitOptions::default();
        let spec = TestSpec::bimodality();
        let (mut good, mut total) = (0, 0);
        for seed in 0..40 {
            let x = p.sample(30, &mut StreamKey::new(500 + seed).rng()).unwrap();
            let Ok(set) = one_sided_set(&x, &spec, &pen, &opts) else { continue };
            for t in [&set.c1, &set.c2] {
                if t.diagnostics.correction == Some(Correction::SkippedSmallR) {
                    continue;
                }
                total += 1;
                if t.diagnostics.correction == Some(Correction::Applied) {
                    good += 1;
                    assert!(t.statistic.is_finite());
                }
            }
        }
        assert!(total >= 40 && good as f64 >= 0.9 * total as f64, "{good}/{total}");
    }

    #[test]
    fn correction_formula() {
        assert_eq!(corrected_r(1.5, 1.5), (1.5, Correction::Applied));
        assert_eq!(corrected_r(1e-5, 2.0).1, Correction::SkippedSmallR);
        assert_eq!(corrected_r(-1.0, 0.5).1, Correction::Undefined);
        assert_eq!(corrected_r(1.0, f64::NAN).1, Correction::Undefined);
        assert_relative_eq!(corrected_r(2.0, 2.0 * 1.5).0, 2.0 + 1.5f64.ln() / 2.0);
    }

    #[test]
    fn u_close_to_r_for_beta_and_alpha() {
        // column ordering keeps U and R on the same side for every ψ
        let p = BbsParams::new(0.5, 1.0, -0.5).unwrap();
        let x = p.sample(200, &mut StreamKey::new(31).rng()).unwrap();
        let pen = PenaltySpec::modified(1.0);
        let opts = FitOptions::default();
        for (psi, v0) in [(Parameter::Alpha, 0.45), (Parameter::Beta, 1.1), (Parameter::Gamma, 0.0)] {
            for v in [v0, 2.0 * p.as_array()[psi.index()] - v0] {
                let spec = TestSpec { alternative: Alternative::TwoSided, ..TestSpec::scalar(psi, v) };
                let set = one_sided_set(&x, &spec, &pen, &opts).unwrap();
                let r = set.slr.statistic;
                for t in [&set.c1, &set.c2] {
                    let u = t.diagnostics.u.unwrap();
                    assert!(u / r > 0.0, "{psi:?}={v}: U={u} R={r}");
                }
            }
        }
    }

    #[test]
    fn bootstrap_slr_is_reproducible() {
        let p = BbsParams::new(0.5, 1.0, 0.0).unwrap();
        let x = p.sample(30, &mut StreamKey::new(2).rng()).unwrap();
        let pen = PenaltySpec::modified(1.0);
        let opts = FitOptions::default();
        let spec = TestSpec::bimodality();
        let key = StreamKey::new(3);
        let a = slr_bootstrap(&x, &spec, &pen, 99, key, &opts).unwrap();
        let b = slr_bootstrap(&x, &spec, &pen, 99, key, &opts).unwrap();
        assert_eq!(a, b);
        let k = a.p_value * (a.bootstrap_b.unwrap() + 1) as f64;
        assert!((k - k.round()).abs() < 1e-9);
    }
}
