//! Strong-Wolfe line search (bracketing followed by zoom with safeguarded
//! cubic interpolation).

use super::Bounds;
use crate::error::{Error, Result};

pub(super) const FTOL: f64 = 1e-3;
pub(super) const GTOL: f64 = 0.9;
/// Relative change in `f` below which decrease is judged by the directional
/// derivative instead, as function values no longer resolve it.
const F_NOISE: f64 = 1e-10;

pub(super) struct Trial {
    pub alpha: f64,
    pub f: f64,
    pub dg: f64,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
}

pub(super) struct Search<'a, F> {
    pub objective: &'a mut F,
    pub x: &'a [f64],
    pub d: &'a [f64],
    pub f0: f64,
    pub dg0: f64,
    pub bounds: &'a Bounds,
    pub max_evals: usize,
    pub evals: usize,
}

fn cubic_min(a: &Trial, b: &Trial) -> f64 {
    let d1 = a.dg + b.dg - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dg * b.dg;
    if !(disc >= 0.0) {
        return f64::NAN;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    b.alpha - (b.alpha - a.alpha) * (b.dg + d2 - d1) / (b.dg - a.dg + 2.0 * d2)
}

impl<F> Search<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, alpha: f64) -> Result<Trial> {
        let x: Vec<f64> = self
            .x
            .iter()
            .zip(self.d)
            .map(|(xi, di)| self.bounds.clamp(xi + alpha * di))
            .collect();
        let (f, g) = (self.objective)(&x)?;
        self.evals += 1;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverAborted(format!(
                "objective returned a non-finite value at step {alpha:e}"
            )));
        }
        if g.len() != x.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient has {} entries, expected {}",
                g.len(),
                x.len()
            )));
        }
        let dg = g.iter().zip(self.d).map(|(a, b)| a * b).sum();
        Ok(Trial { alpha, f, dg, x, g })
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.f <= self.f0 + FTOL * t.alpha * self.dg0 && t.f < self.f0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.dg.abs() <= -GTOL * self.dg0
    }

    /// Approximate Wolfe conditions (Hager and Zhang), restricted to trials
    /// that do not increase `f`.
    fn approx_wolfe(&self, t: &Trial) -> bool {
        t.f <= self.f0
            && self.f0 - t.f <= F_NOISE * self.f0.abs()
            && t.dg >= GTOL * self.dg0
            && t.dg <= (2.0 * FTOL - 1.0) * self.dg0
    }

    /// Returns an accepted trial (sufficient decrease holds, or the
    /// approximate conditions when `f` is flat to rounding; curvature holds
    /// unless the evaluation budget or `stpmax` cut the search short) or
    /// `None` if no acceptable step was found.
    pub(super) fn run(&mut self, stp0: f64, stpmax: f64) -> Result<Option<Trial>> {
        let mut prev = Trial {
            alpha: 0.0,
            f: self.f0,
            dg: self.dg0,
            x: Vec::new(),
            g: Vec::new(),
        };
        let mut alpha = stp0.min(stpmax);
        let mut first = true;
        loop {
            let cur = self.eval(alpha)?;
            if self.approx_wolfe(&cur) {
                return Ok(Some(cur));
            }
            if !self.armijo(&cur) || (!first && cur.f >= prev.f) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.dg >= 0.0 {
                return self.zoom(cur, prev);
            }
            if alpha >= stpmax || self.evals >= self.max_evals {
                return Ok(Some(cur));
            }
            let step = alpha - prev.alpha;
            let lo = alpha + 1.1 * step;
            let hi = alpha + 4.0 * step;
            let c = cubic_min(&prev, &cur);
            let next = if c.is_finite() { c.clamp(lo, hi) } else { hi };
            prev = cur;
            alpha = next.min(stpmax);
            first = false;
        }
    }

    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Result<Option<Trial>> {
        while self.evals < self.max_evals {
            let (a, b) = if lo.alpha < hi.alpha {
                (lo.alpha, hi.alpha)
            } else {
                (hi.alpha, lo.alpha)
            };
            let width = b - a;
            if width <= f64::EPSILON * b.max(1e-300) {
                break;
            }
            let c = cubic_min(&lo, &hi);
            let alpha = if c.is_finite() {
                c.clamp(a + 0.1 * width, b - 0.1 * width)
            } else {
                0.5 * (a + b)
            };
            let t = self.eval(alpha)?;
            if self.approx_wolfe(&t) {
                return Ok(Some(t));
            }
            if !self.armijo(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Ok(Some(t));
                }
                if t.dg * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
        Ok((lo.alpha > 0.0).then_some(lo))
    }
}
