//! Adaptive Gauss–Kronrod (7, 15) quadrature for vector-valued integrands.
//!
//! Infinite limits are handled by the substitutions used in QUADPACK's
//! `qagi`: `x = a + s/(1-s)` on `[a, ∞)` and `x = s/(1-s²)` on `(-∞, ∞)`.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd Kronrod nodes (indices 1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Tolerances and limits for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_subdivisions: 400,
        }
    }
}

/// Integral estimate together with its error bound.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult<const N: usize> {
    pub value: [f64; N],
    pub abs_error: f64,
    pub evaluations: usize,
}

struct Segment<const N: usize> {
    lo: f64,
    hi: f64,
    value: [f64; N],
    error: f64,
}

fn kronrod<const N: usize, F>(f: &mut F, lo: f64, hi: f64) -> ([f64; N], f64)
where
    F: FnMut(f64) -> [f64; N],
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut rk = [0.0; N];
    let mut rg = [0.0; N];
    for k in 0..N {
        rk[k] = WGK[7] * fc[k];
        rg[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for k in 0..N {
            let s = f1[k] + f2[k];
            rk[k] += WGK[j] * s;
            if j % 2 == 1 {
                rg[k] += WG[j / 2] * s;
            }
        }
    }
    let mut err = 0.0_f64;
    for k in 0..N {
        rk[k] *= half;
        rg[k] *= half;
        err = err.max((rk[k] - rg[k]).abs());
    }
    (rk, err)
}

fn adaptive<const N: usize, F>(mut f: F, lo: f64, hi: f64, opts: QuadOptions) -> Result<QuadResult<N>>
where
    F: FnMut(f64) -> [f64; N],
{
    let mut evaluations = 0usize;
    let mut eval = |x: f64| {
        evaluations += 1;
        f(x)
    };
    let (value, error) = kronrod(&mut eval, lo, hi);
    let mut segments = vec![Segment { lo, hi, value, error }];
    loop {
        let mut total = [0.0; N];
        let mut total_err = 0.0;
        for s in &segments {
            for k in 0..N {
                total[k] += s.value[k];
            }
            total_err += s.error;
        }
        let scale = total.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if total_err <= opts.abs_tol.max(opts.rel_tol * scale) {
            return Ok(QuadResult { value: total, abs_error: total_err, evaluations });
        }
        if segments.len() >= opts.max_subdivisions {
            return Err(Error::Quadrature { error: total_err, subdivisions: segments.len() });
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.error.total_cmp(&b.1.error))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.lo + seg.hi);
        if !(mid > seg.lo && mid < seg.hi) {
            return Err(Error::Quadrature { error: total_err, subdivisions: segments.len() });
        }
        let (v1, e1) = kronrod(&mut eval, seg.lo, mid);
        let (v2, e2) = kronrod(&mut eval, mid, seg.hi);
        segments.push(Segment { lo: seg.lo, hi: mid, value: v1, error: e1 });
        segments.push(Segment { lo: mid, hi: seg.hi, value: v2, error: e2 });
    }
}

/// Integrates a vector-valued `f` over `[lo, hi]`; either limit may be infinite.
pub fn integrate<const N: usize, F>(mut f: F, lo: f64, hi: f64, opts: QuadOptions) -> Result<QuadResult<N>>
where
    F: FnMut(f64) -> [f64; N],
{
    if lo.is_nan() || hi.is_nan() {
        return Err(Error::Domain("NaN integration limit".into()));
    }
    if lo == hi {
        return Ok(QuadResult { value: [0.0; N], abs_error: 0.0, evaluations: 0 });
    }
    if lo > hi {
        let mut r = integrate(f, hi, lo, opts)?;
        r.value.iter_mut().for_each(|v| *v = -*v);
        return Ok(r);
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => adaptive(f, lo, hi, opts),
        (true, false) => adaptive(
            |s: f64| {
                let w = 1.0 - s;
                let mut v = f(lo + s / w);
                let jac = 1.0 / (w * w);
                v.iter_mut().for_each(|x| *x = if jac.is_finite() { *x * jac } else { 0.0 });
                v
            },
            0.0,
            1.0,
            opts,
        ),
        (false, true) => adaptive(
            |s: f64| {
                let w = 1.0 - s;
                let mut v = f(hi - s / w);
                let jac = 1.0 / (w * w);
                v.iter_mut().for_each(|x| *x = if jac.is_finite() { *x * jac } else { 0.0 });
                v
            },
            0.0,
            1.0,
            opts,
        ),
        (false, false) => adaptive(
            |s: f64| {
                let w = 1.0 - s * s;
                let mut v = f(s / w);
                let jac = (1.0 + s * s) / (w * w);
                v.iter_mut().for_each(|x| *x = if jac.is_finite() { *x * jac } else { 0.0 });
                v
            },
            -1.0,
            1.0,
            opts,
        ),
    }
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F>(mut f: F, lo: f64, hi: f64, opts: QuadOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate(|x| [f(x)], lo, hi, opts).map(|r| r.value[0])
}
