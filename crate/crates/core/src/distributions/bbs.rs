use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{open_unit, Sample};
use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::{integrate, QuadOptions};

/// Parameters `(α, β, γ)` of the bimodal Birnbaum–Saunders law.
///
/// `α > 0` is the shape, `β > 0` the scale (and median), and `γ` controls
/// bimodality: the density has two modes exactly when `γ < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbsParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// `t = (√(x/β) − √(β/x))/α`.
#[inline]
pub fn t_transform(x: f64, alpha: f64, beta: f64) -> f64 {
    let r = (x / beta).sqrt();
    (r - 1.0 / r) / alpha
}

/// Inverse of [`t_transform`]: `x = β[αt/2 + √((αt/2)² + 1)]²`.
#[inline]
pub fn t_inverse(t: f64, alpha: f64, beta: f64) -> f64 {
    let h = 0.5 * alpha * t;
    let root = h.hypot(1.0);
    // avoid cancellation on the negative branch
    let s = if h >= 0.0 { h + root } else { 1.0 / (root - h) };
    beta * s * s
}

/// Two-parameter Birnbaum–Saunders density.
pub fn bs_pdf(x: f64, alpha: f64, beta: f64) -> f64 {
    let t = t_transform(x, alpha, beta);
    x.powf(-1.5) * (x + beta) * normal::pdf(t) / (2.0 * alpha * beta.sqrt())
}

fn check_x(x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("x = {x} must be finite and positive")))
    }
}

impl BbsParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let p = Self { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParams(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidParams(format!("beta = {} must be positive", self.beta)));
        }
        if !self.gamma.is_finite() {
            return Err(Error::InvalidParams(format!("gamma = {} must be finite", self.gamma)));
        }
        Ok(())
    }

    pub fn is_bimodal(&self) -> bool {
        self.gamma < 0.0
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { alpha: a[0], beta: a[1], gamma: a[2] }
    }

    /// Log normalizing constant `log{4αβ^{1/2}Φ(−γ)}`.
    #[inline]
    pub(crate) fn ln_norm(&self) -> f64 {
        (4.0 * self.alpha).ln() + 0.5 * self.beta.ln() + normal::ln_sf(self.gamma)
    }

    /// Log density without argument checks.
    #[inline]
    pub(crate) fn ln_pdf_unchecked(&self, x: f64) -> f64 {
        let t = t_transform(x, self.alpha, self.beta);
        -1.5 * x.ln() + (x + self.beta).ln() + normal::ln_pdf(t.abs() + self.gamma) - self.ln_norm()
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        Ok(self.ln_pdf_unchecked(x))
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        self.ln_pdf(x).map(f64::exp)
    }

    /// Half the tail mass beyond `|t|`: `Φ(−(|t|+γ)) / (2Φ(−γ))`.
    fn half_tail(&self, t: f64) -> f64 {
        0.5 * (normal::ln_sf(t.abs() + self.gamma) - normal::ln_sf(self.gamma)).exp()
    }

    /// Distribution function.
    ///
    /// Below the median this is `Φ(t−γ)/(2Φ(−γ))`; at or above it,
    /// `1/2 + (Φ(t+γ) − Φ(γ))/(2Φ(−γ))`. The upper branch uses `t+γ`: that is
    /// the only form continuous at `x = β` and consistent with integrating the
    /// density. Both branches reduce to a tail ratio of the truncated normal.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        let t = t_transform(x, self.alpha, self.beta);
        let tail = self.half_tail(t);
        Ok(if x < self.beta { tail } else { 1.0 - tail })
    }

    pub fn quantile(&self, prob: f64) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Domain(format!("probability {prob} outside (0, 1)")));
        }
        let lower = prob.min(1.0 - prob);
        let q = (2.0 * lower).ln() + normal::ln_sf(self.gamma);
        let abs_t = (normal::quantile_upper(q.exp()) - self.gamma).max(0.0);
        let t = if prob < 0.5 { -abs_t } else { abs_t };
        Ok(t_inverse(t, self.alpha, self.beta))
    }

    /// One draw through the truncated-normal representation `Y = |T| + γ`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = open_unit(rng);
        let positive = rng.next_u32() & 1 == 0;
        self.from_uniforms(u, positive)
    }

    /// Maps a uniform `u` and a sign to a BBS variate.
    pub fn from_uniforms(&self, u: f64, positive: bool) -> f64 {
        // Y = Φ⁻¹(Φ(γ) + u Φ(−γ)), written through the upper tail.
        let y = normal::quantile_upper((1.0 - u) * normal::sf(self.gamma));
        let t = (y - self.gamma).max(0.0);
        t_inverse(if positive { t } else { -t }, self.alpha, self.beta)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Sample> {
        if n == 0 {
            return Err(Error::Domain("sample size must be at least 1".into()));
        }
        Sample::new((0..n).map(|_| self.draw(rng)).collect())
    }

    /// `E(X^r)` by adaptive quadrature over `u = log(x/β)`.
    pub fn moment(&self, r: u32) -> Result<f64> {
        if !(1..=4).contains(&r) {
            return Err(Error::Domain(format!("moment order {r} not in 1..=4")));
        }
        let rf = r as f64;
        let f = |u: f64| {
            let x = self.beta * u.exp();
            let v = (rf * x.ln() + self.ln_pdf_unchecked(x) + x.ln()).exp();
            [if v.is_finite() { v } else { 0.0 }]
        };
        let opts = QuadOptions { abs_tol: 1e-12 * self.beta.powi(r as i32), rel_tol: 1e-11, ..Default::default() };
        let lo = integrate(f, f64::NEG_INFINITY, 0.0, opts)?;
        let hi = integrate(f, 0.0, f64::INFINITY, opts)?;
        Ok(lo.value[0] + hi.value[0])
    }

    /// `∫ g(x) f(x) dx` over `(0, ∞)`, split at the median where the density has a kink.
    pub fn expect<const N: usize, G>(&self, g: G, opts: QuadOptions) -> Result<[f64; N]>
    where
        G: Fn(f64) -> [f64; N],
    {
        let f = |u: f64| {
            let x = self.beta * u.exp();
            let w = (self.ln_pdf_unchecked(x) + x.ln()).exp();
            let mut v = [0.0; N];
            if w > 0.0 && w.is_finite() {
                let gx = g(x);
                for k in 0..N {
                    v[k] = gx[k] * w;
                }
            }
            v
        };
        let lo = integrate(f, f64::NEG_INFINITY, 0.0, opts)?;
        let hi = integrate(f, 0.0, f64::INFINITY, opts)?;
        let mut out = [0.0; N];
        for k in 0..N {
            out[k] = lo.value[k] + hi.value[k];
        }
        Ok(out)
    }
}
