use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{std_normal, Sample};
use crate::error::{Error, Result};
use crate::normal;

/// Parameters `(α, β, ν)` of the GBS₂ law. Bimodal when `α > 2` and `ν > 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gbs2Params {
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
}

impl Gbs2Params {
    pub fn new(alpha: f64, beta: f64, nu: f64) -> Result<Self> {
        let p = Self { alpha, beta, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("nu", self.nu)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    pub fn is_bimodal(&self) -> bool {
        self.alpha > 2.0 && self.nu > 2.0
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.nu]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { alpha: a[0], beta: a[1], nu: a[2] }
    }

    /// `w = (x/β)^ν − (β/x)^ν`.
    #[inline]
    pub(crate) fn w(&self, x: f64) -> f64 {
        2.0 * (self.nu * (x / self.beta).ln()).sinh()
    }

    #[inline]
    pub(crate) fn ln_pdf_unchecked(&self, x: f64) -> f64 {
        let nl = self.nu * (x / self.beta).ln();
        let a = nl.abs();
        // log[(x/β)^ν + (β/x)^ν] = |νL| + log(1 + e^{-2|νL|})
        let ln_c = a + (-2.0 * a).exp().ln_1p();
        let w = 2.0 * nl.sinh();
        self.nu.ln() - self.alpha.ln() - x.ln() + ln_c + normal::ln_pdf(w / self.alpha)
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::Domain(format!("x = {x} must be finite and positive")));
        }
        Ok(self.ln_pdf_unchecked(x))
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        self.ln_pdf(x).map(f64::exp)
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::Domain(format!("x = {x} must be finite and positive")));
        }
        Ok(normal::cdf(self.w(x) / self.alpha))
    }

    pub fn quantile(&self, prob: f64) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Domain(format!("probability {prob} outside (0, 1)")));
        }
        Ok(self.from_normal(normal::quantile(prob)))
    }

    /// Inverts the pivot `w/α = z`: `x = β[(αz + √(α²z² + 4))/2]^{1/ν}`.
    pub fn from_normal(&self, z: f64) -> f64 {
        self.beta * ((0.5 * self.alpha * z).asinh() / self.nu).exp()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.from_normal(std_normal(rng))
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Sample> {
        if n == 0 {
            return Err(Error::Domain("sample size must be at least 1".into()));
        }
        Sample::new((0..n).map(|_| self.draw(rng)).collect())
    }
}
