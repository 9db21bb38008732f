//! Limited-memory quasi-Newton minimization under uniform box constraints
//! (L-BFGS-B).
//!
//! Each iteration finds the generalized Cauchy point of the quadratic model
//! along the projected gradient path, minimizes the model over the variables
//! that remain free, projects the result back onto the box and performs a
//! strong-Wolfe line search along the resulting direction.

mod compact;
mod line_search;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use compact::{cauchy_point, subspace_step, Memory};
use line_search::Search;

/// Uniform bounds `lower <= x_i <= upper`. Either side may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || !(lower < upper) {
            return Err(Error::InvalidArgument(format!("bounds [{lower}, {upper}] are empty")));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit() -> Self {
        Self { lower: 0.0, upper: 1.0 }
    }

    pub fn unbounded() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }

    fn is_bounded(&self) -> bool {
        self.lower.is_finite() || self.upper.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `(f_k − f_{k+1}) / max(|f_k|, |f_{k+1}|, 1) <= f_rtol`;
    /// `0` disables the test.
    pub f_rtol: f64,
    /// Stop when the projected gradient's max-norm is at most this.
    pub pg_tol: f64,
    pub max_evals_per_linesearch: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 2000,
            f_rtol: 1e7 * f64::EPSILON,
            pg_tol: 1e-5,
            max_evals_per_linesearch: 20,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 || self.max_evals_per_linesearch == 0 {
            return Err(Error::InvalidArgument(
                "memory and line-search budget must be at least 1".into(),
            ));
        }
        if !(self.f_rtol >= 0.0) || !(self.pg_tol >= 0.0) {
            return Err(Error::InvalidArgument("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    ConvergedF,
    ConvergedPg,
    MaxIter,
    LinesearchFail,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::ConvergedF => "converged_f",
            SolverStatus::ConvergedPg => "converged_pg",
            SolverStatus::MaxIter => "max_iter",
            SolverStatus::LinesearchFail => "linesearch_fail",
        }
    }

    pub fn is_success(&self) -> bool {
        !matches!(self, SolverStatus::LinesearchFail)
    }
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One accepted iterate. Iteration 0 is the starting point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub f: f64,
    pub pg_norm: f64,
    pub step: f64,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct SolverResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_iterations: usize,
    pub n_evaluations: usize,
    pub status: SolverStatus,
    pub trace: Vec<IterationRecord>,
}

impl SolverResult {
    /// True when every recorded `f` is no larger than its predecessor.
    pub fn trace_is_monotone(&self) -> bool {
        self.trace.windows(2).all(|w| w[1].f <= w[0].f)
    }

    /// `iteration,f,pg_norm,step` per accepted iterate.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let bad = |e: csv::Error| Error::InvalidArgument(e.to_string());
        out.write_record(["iteration", "f", "pg_norm", "step"]).map_err(bad)?;
        for r in &self.trace {
            out.write_record([
                r.iteration.to_string(),
                format!("{:.9e}", r.f),
                format!("{:.9e}", r.pg_norm),
                format!("{:.9e}", r.step),
            ])
            .map_err(bad)?;
        }
        out.flush().map_err(|e| Error::io("<trace>", e))
    }

    pub fn save_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_trace_csv(std::io::BufWriter::new(file))
    }
}

/// Max-norm of the projected gradient `P(x − g) − x`.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &Bounds) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| (bounds.clamp(xi - gi) - xi).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `objective` from `x0` (clipped into the box first).
pub fn minimize<F>(objective: F, x0: &[f64], bounds: &Bounds, config: &SolverConfig) -> Result<SolverResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_with_observer(objective, x0, bounds, config, |_, _| {})
}

/// Like [`minimize`]; `observer` sees every accepted iterate.
pub fn minimize_with_observer<F, O>(
    mut objective: F,
    x0: &[f64],
    bounds: &Bounds,
    config: &SolverConfig,
    mut observer: O,
) -> Result<SolverResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(&IterationRecord, &[f64]),
{
    config.validate()?;
    let n = x0.len();
    let mut x: Vec<f64> = x0.iter().map(|&v| bounds.clamp(v)).collect();
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverAborted(
            "objective is not finite at the starting point".into(),
        ));
    }
    if g.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} entries, expected {n}",
            g.len()
        )));
    }
    let mut evaluations = 1;
    let mut pg = projected_gradient_norm(&x, &g, bounds);
    let first = IterationRecord {
        iteration: 0,
        f,
        pg_norm: pg,
        step: 0.0,
        evaluations,
    };
    observer(&first, &x);
    let mut trace = vec![first];
    let mut memory = Memory::new(config.memory);
    let mut iteration = 0;

    let status = loop {
        if pg <= config.pg_tol {
            break SolverStatus::ConvergedPg;
        }
        if iteration >= config.max_iterations {
            break SolverStatus::MaxIter;
        }
        let (xcp, c) = cauchy_point(&x, &g, bounds, &memory);
        let xbar = subspace_step(&x, &g, &xcp, &c, bounds, &memory);
        let d: Vec<f64> = xbar.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dg0: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        let accepted = if dg0 < 0.0 {
            let stpmax = if !bounds.is_bounded() {
                f64::INFINITY
            } else if iteration == 0 {
                1.0
            } else {
                max_feasible_step(&x, &d, bounds)
            };
            let stp0 = if iteration == 0 && !bounds.is_bounded() {
                let dnorm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                (1.0 / dnorm).min(stpmax)
            } else {
                1.0
            };
            let mut search = Search {
                objective: &mut objective,
                x: &x,
                d: &d,
                f0: f,
                dg0,
                bounds,
                max_evals: config.max_evals_per_linesearch,
                evals: 0,
            };
            let found = search.run(stp0, stpmax)?;
            evaluations += search.evals;
            found
        } else {
            None
        };
        let Some(trial) = accepted else {
            if memory.len() > 0 {
                log::debug!("iteration {iteration}: line search failed, discarding curvature pairs");
                memory.reset();
                continue;
            }
            break SolverStatus::LinesearchFail;
        };

        iteration += 1;
        let s: Vec<f64> = trial.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let gs = -trial.alpha * dg0;
        let f_old = f;
        x = trial.x;
        f = trial.f;
        g = trial.g;
        pg = projected_gradient_norm(&x, &g, bounds);
        let record = IterationRecord {
            iteration,
            f,
            pg_norm: pg,
            step: trial.alpha,
            evaluations,
        };
        observer(&record, &x);
        trace.push(record);

        if sy > f64::EPSILON * gs && !memory.push(s, y) {
            log::debug!("iteration {iteration}: singular middle matrix, memory reset");
        }
        if pg <= config.pg_tol {
            break SolverStatus::ConvergedPg;
        }
        if config.f_rtol > 0.0 && (f_old - f) / f_old.abs().max(f.abs()).max(1.0) <= config.f_rtol {
            break SolverStatus::ConvergedF;
        }
    };

    Ok(SolverResult {
        x,
        f,
        n_iterations: iteration,
        n_evaluations: evaluations,
        status,
        trace,
    })
}

fn max_feasible_step(x: &[f64], d: &[f64], bounds: &Bounds) -> f64 {
    let mut stp = f64::INFINITY;
    for (&xi, &di) in x.iter().zip(d) {
        if di > 0.0 && bounds.upper.is_finite() {
            stp = stp.min((bounds.upper - xi) / di);
        } else if di < 0.0 && bounds.lower.is_finite() {
            stp = stp.min((bounds.lower - xi) / di);
        }
    }
    stp.max(1.0)
}
