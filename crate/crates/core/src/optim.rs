//! BFGS minimization with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Optimizer constants. Part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop when `‖g‖∞ ≤ grad_tol·(1+|f|)`.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Largest coordinate change allowed in one step.
    pub max_step: f64,
    pub max_line_search_evals: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            grad_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_step: 10.0,
            max_line_search_evals: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimStatus {
    /// Gradient tolerance reached.
    Converged,
    /// No acceptable step could be found, even along steepest descent.
    Stalled,
    MaxIterations,
    /// The objective was not finite at the starting point.
    ObjectiveFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: OptimStatus,
}

impl OptimReport {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> Counter<F> {
    fn eval(&mut self, x: &DVector<f64>) -> Option<Point> {
        self.evals += 1;
        let (f, g) = (self.f)(x.as_slice())?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Point { x: x.clone(), f, g: DVector::from_vec(g) })
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Minimizes `f`, which returns the value and gradient or `None` where it is
/// undefined.
pub fn minimize<F>(f: F, x0: &[f64], opts: &BfgsOptions) -> OptimReport
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut obj = Counter { f, evals: 0 };
    let Some(mut cur) = obj.eval(&DVector::from_column_slice(x0)) else {
        return OptimReport {
            x: x0.to_vec(),
            value: f64::NAN,
            grad: vec![f64::NAN; n],
            iterations: 0,
            evaluations: obj.evals,
            status: OptimStatus::ObjectiveFailure,
        };
    };
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iterations = 0;
    let status = loop {
        if inf_norm(&cur.g) <= opts.grad_tol * (1.0 + cur.f.abs()) {
            break OptimStatus::Converged;
        }
        if iterations >= opts.max_iterations {
            break OptimStatus::MaxIterations;
        }
        let mut p = -(&h * &cur.g);
        if p.dot(&cur.g) >= 0.0 {
            h.fill_with_identity();
            fresh = true;
            p = -cur.g.clone();
        }
        let init = if fresh { (1.0 / inf_norm(&cur.g)).min(1.0) } else { 1.0 };
        let a_max = opts.max_step / inf_norm(&p);
        let next = match line_search(&mut obj, &cur, &p, init.min(a_max), a_max, opts) {
            Some(next) => next,
            None if !fresh => {
                h.fill_with_identity();
                fresh = true;
                continue;
            }
            None => break OptimStatus::Stalled,
        };
        iterations += 1;
        let s = &next.x - &cur.x;
        let y = &next.g - &cur.g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h.fill_with_identity();
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(s·(Hy)ᵀ + Hy·sᵀ) + (ρ²yᵀHy + ρ)ssᵀ
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += &s * s.transpose() * (rho * rho * yhy + rho);
            fresh = false;
        }
        cur = next;
    };
    OptimReport {
        x: cur.x.as_slice().to_vec(),
        value: cur.f,
        grad: cur.g.as_slice().to_vec(),
        iterations,
        evaluations: obj.evals,
        status,
    }
}

/// Strong-Wolfe line search (bracketing then zoom). Returns `None` when no
/// point with sufficient decrease is found.
fn line_search<F>(
    obj: &mut Counter<F>,
    start: &Point,
    p: &DVector<f64>,
    mut a: f64,
    a_max: f64,
    opts: &BfgsOptions,
) -> Option<Point>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let f0 = start.f;
    let d0 = start.g.dot(p);
    let mut budget = opts.max_line_search_evals;
    let mut best: Option<Point> = None;
    let armijo = |a: f64, f: f64| f <= f0 + opts.c1 * a * d0;
    // Approximate Wolfe conditions: near a minimizer the sufficient-decrease
    // test drowns in rounding error, so accept a step whose value is within
    // noise of the start and whose slope has shrunk.
    let f_noise = 1e-10 * (1.0 + f0.abs());
    let approx_wolfe = |f: f64, d: f64| f <= f0 + f_noise && d >= opts.c2 * d0 && d <= (2.0 * opts.c1 - 1.0) * d0;
    let keep_best = |pt: &Point, a: f64, best: &mut Option<Point>| {
        if armijo(a, pt.f) && best.as_ref().is_none_or(|b| pt.f < b.f) {
            *best = Some(Point { x: pt.x.clone(), f: pt.f, g: pt.g.clone() });
        }
    };

    // (step, value, slope) of the last accepted trial
    let mut prev = (0.0, f0, d0);
    let mut bracket: Option<((f64, f64, f64), (f64, f64, f64))> = None;
    while budget > 0 {
        budget -= 1;
        let x = &start.x + p * a;
        let Some(pt) = obj.eval(&x) else {
            // undefined region: treat as an upper bracket end
            bracket = Some((prev, (a, f64::INFINITY, f64::NAN)));
            break;
        };
        keep_best(&pt, a, &mut best);
        let d = pt.g.dot(p);
        if approx_wolfe(pt.f, d) && !armijo(a, pt.f) {
            return Some(pt);
        }
        if !armijo(a, pt.f) || (prev.0 > 0.0 && pt.f >= prev.1) {
            bracket = Some((prev, (a, pt.f, d)));
            break;
        }
        if d.abs() <= -opts.c2 * d0 {
            return Some(pt);
        }
        if d >= 0.0 {
            bracket = Some(((a, pt.f, d), prev));
            break;
        }
        if a >= a_max {
            return Some(pt);
        }
        prev = (a, pt.f, d);
        a = (2.0 * a).min(a_max);
    }

    let (mut lo, mut hi) = bracket?;
    while budget > 0 {
        budget -= 1;
        let (al, ah) = (lo.0, hi.0);
        let width = ah - al;
        let mut trial = 0.5 * (al + ah);
        if hi.1.is_finite() {
            // minimizer of the quadratic through (lo, f_lo, d_lo) and (hi, f_hi)
            let denom = 2.0 * (hi.1 - lo.1 - lo.2 * width);
            if denom > 0.0 {
                let q = al - lo.2 * width * width / denom;
                let (l, u) = if al < ah { (al, ah) } else { (ah, al) };
                let margin = 0.1 * (u - l);
                if q > l + margin && q < u - margin {
                    trial = q;
                }
            }
        }
        if (trial - al).abs() < 1e-16 * al.abs().max(1.0) {
            break;
        }
        let x = &start.x + p * trial;
        let Some(pt) = obj.eval(&x) else {
            hi = (trial, f64::INFINITY, f64::NAN);
            continue;
        };
        keep_best(&pt, trial, &mut best);
        let d = pt.g.dot(p);
        if approx_wolfe(pt.f, d) && !armijo(trial, pt.f) {
            return Some(pt);
        }
        if !armijo(trial, pt.f) || pt.f >= lo.1 {
            hi = (trial, pt.f, d);
        } else {
            if d.abs() <= -opts.c2 * d0 {
                return Some(pt);
            }
            if d * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (trial, pt.f, d);
        }
    }
    // budget exhausted: settle for the best sufficient-decrease point
    best.filter(|b| b.f < f0)
}
