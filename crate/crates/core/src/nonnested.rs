//! Bootstrap discrimination between BBS (`H_f`) and GBS₂ (`H_g`).

use serde::{Deserialize, Serialize};

use crate::distributions::{BbsParams, Gbs2Params, Sample};
use crate::error::{Error, Result};
use crate::estimation::{fit_bbs, fit_gbs2, BbsFit, FitOptions, Gbs2Fit};
use crate::hypothesis::{check_b, check_failures, run_replicates};
use crate::likelihood::PenaltySpec;
use crate::stream::{purpose, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NullModel {
    /// The data come from BBS.
    Hf,
    /// The data come from GBS₂.
    Hg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    /// Neither null rejected.
    R1,
    /// Only `H_g` rejected.
    R2,
    /// Only `H_f` rejected.
    R3,
    /// Both rejected.
    R4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selected {
    #[serde(rename = "BBS")]
    Bbs,
    #[serde(rename = "GBS2")]
    Gbs2,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonnestedResult {
    pub w_ne: f64,
    pub p_f: f64,
    pub p_g: f64,
    pub outcome: Outcome,
    pub selected: Selected,
    pub epsilon: f64,
    pub bootstrap_b: usize,
    pub failed_f: usize,
    pub failed_g: usize,
}

/// Both fits behind one value of `W_ne`.
#[derive(Debug, Clone, PartialEq)]
pub struct WneFits {
    pub bbs: BbsFit,
    pub gbs2: Gbs2Fit,
}

impl WneFits {
    pub fn compute(x: &Sample, penalty: &PenaltySpec, opts: &FitOptions) -> Result<Self> {
        let bbs = fit_bbs(x, penalty, opts)?;
        let gbs2 = fit_gbs2(x, opts)?;
        if !(bbs.converged() && gbs2.converged()) {
            return Err(Error::FitFailed { unrestricted: Some(bbs.status), restricted: Some(gbs2.status) });
        }
        Ok(Self { bbs, gbs2 })
    }

    /// `ℓ̂_f − ℓ̂_g`, with `ℓ̂_f` the plain BBS log-likelihood at the penalized estimate.
    pub fn w_ne(&self) -> f64 {
        w_ne_from(self.bbs.loglik_plain, self.gbs2.loglik_plain)
    }
}

pub fn w_ne_from(l_f: f64, l_g: f64) -> f64 {
    l_f - l_g
}

pub fn w_ne(x: &Sample, penalty: &PenaltySpec, opts: &FitOptions) -> Result<f64> {
    Ok(WneFits::compute(x, penalty, opts)?.w_ne())
}

/// `H_f`: `(#{W* < W} + 1)/(B + 1)`. `H_g`: `(#{W* > W} + 1)/(B + 1)`.
pub fn nonnested_p_value(observed: f64, replicates: &[f64], null: NullModel) -> f64 {
    let k = match null {
        NullModel::Hf => replicates.iter().filter(|&&w| w < observed).count(),
        NullModel::Hg => replicates.iter().filter(|&&w| w > observed).count(),
    };
    (k + 1) as f64 / (replicates.len() + 1) as f64
}

/// Bootstrap replicates of `W_ne` under one null, given the observed fits.
/// Returns the p-value and the number of discarded replicates.
pub fn test_nonnested_from_fits(
    n: usize,
    fits: &WneFits,
    null: NullModel,
    b: usize,
    key: StreamKey,
    penalty: &PenaltySpec,
    opts: &FitOptions,
) -> Result<(f64, usize)> {
    check_b(b)?;
    let f: BbsParams = fits.bbs.params;
    let g: Gbs2Params = fits.gbs2.params;
    let (reps, failed) = run_replicates(b, |i| {
        let mut rng = key.child(i).rng();
        let y = match null {
            NullModel::Hf => f.sample(n, &mut rng),
            NullModel::Hg => g.sample(n, &mut rng),
        }
        .ok()?;
        w_ne(&y, penalty, opts).ok()
    });
    check_failures(failed, b)?;
    Ok((nonnested_p_value(fits.w_ne(), &reps, null), failed))
}

pub fn test_nonnested(
    x: &Sample,
    null: NullModel,
    b: usize,
    key: StreamKey,
    penalty: &PenaltySpec,
    opts: &FitOptions,
) -> Result<f64> {
    let fits = WneFits::compute(x, penalty, opts)?;
    Ok(test_nonnested_from_fits(x.len(), &fits, null, b, key, penalty, opts)?.0)
}

/// Maps the two rejections to an outcome and a selected model. A null is
/// rejected when its p-value is strictly below `epsilon`.
pub fn classify(w_ne: f64, p_f: f64, p_g: f64, epsilon: f64) -> (Outcome, Selected) {
    match (p_f < epsilon, p_g < epsilon) {
        (false, false) => (Outcome::R1, if w_ne > 0.0 { Selected::Bbs } else { Selected::Gbs2 }),
        (false, true) => (Outcome::R2, Selected::Bbs),
        (true, false) => (Outcome::R3, Selected::Gbs2),
        (true, true) => (Outcome::R4, Selected::None),
    }
}

/// Both bootstrap tests plus the decision. The two nulls use the substreams
/// `key.child(BOOTSTRAP_F)` and `key.child(BOOTSTRAP_G)`.
pub fn decide(
    x: &Sample,
    b: usize,
    epsilon: f64,
    key: StreamKey,
    penalty: &PenaltySpec,
    opts: &FitOptions,
) -> Result<NonnestedResult> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidTest(format!("epsilon {epsilon} outside (0, 1)")));
    }
    let fits = WneFits::compute(x, penalty, opts)?;
    let n = x.len();
    let (rf, rg) = rayon::join(
        || test_nonnested_from_fits(n, &fits, NullModel::Hf, b, key.child(purpose::BOOTSTRAP_F), penalty, opts),
        || test_nonnested_from_fits(n, &fits, NullModel::Hg, b, key.child(purpose::BOOTSTRAP_G), penalty, opts),
    );
    let ((p_f, failed_f), (p_g, failed_g)) = (rf?, rg?);
    Ok(decision(fits.w_ne(), p_f, p_g, epsilon, b, failed_f, failed_g))
}

pub(crate) fn decision(
    w_ne: f64,
    p_f: f64,
    p_g: f64,
    epsilon: f64,
    b: usize,
    failed_f: usize,
    failed_g: usize,
) -> NonnestedResult {
    let (outcome, selected) = classify(w_ne, p_f, p_g, epsilon);
    NonnestedResult { w_ne, p_f, p_g, outcome, selected, epsilon, bootstrap_b: b, failed_f, failed_g }
}
