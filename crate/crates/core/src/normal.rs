//! Standard normal functions with tail-safe complements.
//!
//! The lower tail `Φ(z)` is computed from `erfc`, which keeps full relative
//! precision down to the underflow threshold. Beyond that the log variants
//! switch to the continued fraction for the Mills ratio, so `log Φ(-γ)` and
//! `φ(γ)/Φ(-γ)` stay finite for any finite `γ`. Quantiles use Wichura's
//! AS241 (PPND16) polynomials followed by one Halley step.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `log(sqrt(2π))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Density of the standard normal.
#[inline]
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Lower tail probability `Φ(z)`.
#[inline]
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail probability `1 - Φ(z) = Φ(-z)`.
#[inline]
pub fn sf(z: f64) -> f64 {
    cdf(-z)
}

/// Mills ratio `Φ(-x)/φ(x)`.
pub fn mills_ratio(x: f64) -> f64 {
    if x < 5.0 {
        return sf(x) / pdf(x);
    }
    // Laplace continued fraction, evaluated backwards.
    let mut tail = x;
    for k in (1..=120).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}

/// `log Φ(z)`, finite for every finite `z`.
pub fn ln_cdf(z: f64) -> f64 {
    if z > -30.0 {
        let p = cdf(z);
        if p > 0.5 {
            (-sf(z)).ln_1p()
        } else {
            p.ln()
        }
    } else {
        ln_pdf(z) + mills_ratio(-z).ln()
    }
}

/// `log Φ(-z)`.
#[inline]
pub fn ln_sf(z: f64) -> f64 {
    ln_cdf(-z)
}

/// Inverse hazard of the truncation point: `ω(γ) = φ(γ)/Φ(-γ)`.
pub fn hazard(gamma: f64) -> f64 {
    if gamma <= 0.0 {
        pdf(gamma) / sf(gamma)
    } else {
        1.0 / mills_ratio(gamma)
    }
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "quantile probability {p} outside (0,1)");
    if p > 0.5 {
        -lower_quantile(1.0 - p)
    } else {
        lower_quantile(p)
    }
}

/// Upper quantile: the `z` with `Φ(-z) = q`. Accurate for tiny `q`.
pub fn quantile_upper(q: f64) -> f64 {
    if q > 0.5 {
        lower_quantile(1.0 - q)
    } else {
        -lower_quantile(q)
    }
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// `Φ⁻¹(p)` for `0 < p ≤ 1/2`.
fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_5, 133.141_667_891_784_38, 1_971.590_950_306_551_3,
        13_731.693_765_509_461, 45_921.953_931_549_87, 67_265.770_927_008_7,
        33_430.575_583_588_13, 2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0, 42.313_330_701_600_91, 687.187_007_492_057_9, 5_394.196_021_424_751,
        21_213.794_301_586_597, 39_307.895_800_092_71, 28_729.085_735_721_943,
        5_226.495_278_852_545,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5, 4.630_337_846_156_546, 5.769_497_221_460_691,
        3.647_848_324_763_204_5, 1.270_458_252_452_368_4, 0.241_780_725_177_450_6,
        0.022_723_844_989_269_184, 7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0, 2.053_191_626_637_759, 1.676_384_830_183_803_8, 0.689_767_334_985_1,
        0.148_103_976_427_480_08, 0.015_198_666_563_616_457, 5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103, 5.463_784_911_164_114, 1.784_826_539_917_291_3,
        0.296_560_571_828_504_9, 0.026_532_189_526_576_124, 0.001_242_660_947_388_078_4,
        2.711_555_568_743_487_6e-5, 2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0, 0.599_832_206_555_888, 0.136_929_880_922_735_8, 0.014_875_361_290_850_615,
        7.868_691_311_456_133e-4, 1.846_318_317_510_054_8e-5, 1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    let q = p - 0.5;
    let z = if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        q * poly(&A, r) / poly(&B, r)
    } else {
        let r = (-p.ln()).sqrt();
        let v = if r <= 5.0 {
            let r = r - 1.6;
            poly(&C, r) / poly(&D, r)
        } else {
            let r = r - 5.0;
            poly(&E, r) / poly(&F, r)
        };
        -v
    };
    // Halley refinement against the accurate cdf
    let d = pdf(z);
    if d > 0.0 {
        let e = cdf(z) - p;
        let u = e / d;
        z - u / (1.0 + 0.5 * z * u)
    } else {
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn known_values() {
        assert_relative_eq!(pdf(0.0), 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_relative_eq!(cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(cdf(1.959_963_984_540_054), 0.975, epsilon = 1e-14);
        assert_relative_eq!(quantile(0.975), 1.959_963_984_540_054, epsilon = 1e-12);
        assert_relative_eq!(quantile(0.025), -1.959_963_984_540_054, epsilon = 1e-12);
    }

    #[test]
    fn mills_ratio_branches_agree() {
        for &x in &[5.0, 6.0, 8.0, 12.0, 20.0, 30.0] {
            let direct = sf(x) / pdf(x);
            assert_relative_eq!(mills_ratio(x), direct, max_relative = 1e-13);
        }
    }

    #[test]
    fn log_tails_are_finite_far_out() {
        // Φ(-40) underflows in double precision but its log does not.
        let v = ln_cdf(-40.0);
        assert!(v.is_finite());
        // log Φ(-x) ≈ -x²/2 - log x - log√(2π) for large x
        let approx = -800.0 - 40f64.ln() - LN_SQRT_2PI;
        assert!((v - approx).abs() < 1e-3);
        assert_relative_eq!(ln_cdf(-10.0), cdf(-10.0).ln(), max_relative = 1e-13);
        assert_relative_eq!(ln_cdf(3.0), cdf(3.0).ln(), max_relative = 1e-12);
    }

    #[test]
    fn hazard_exceeds_gamma() {
        let mut g = -30.0;
        while g <= 30.0 {
            assert!(hazard(g) > g, "ω({g}) = {} not > γ", hazard(g));
            g += 0.25;
        }
        assert_relative_eq!(hazard(0.0), (2.0 / PI).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn upper_quantile_inverts_tiny_tails() {
        for &q in &[1e-300, 1e-150, 1e-20, 1e-5, 0.3, 0.7] {
            let z = quantile_upper(q);
            let back = ln_sf(z);
            assert_relative_eq!(back, q.ln(), max_relative = 1e-10);
        }
    }
}
