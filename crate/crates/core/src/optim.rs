//! Limited-memory BFGS with a strong-Wolfe line search that uses cubic
//! interpolation, as in Nocedal & Wright (Algorithms 3.5/3.6 and 7.4).
//!
//! The objective is minimized. Evaluation failures at trial points (for
//! example a Cholesky breakdown far out in parameter space) are treated as an
//! infinite objective and make the line search back off.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    /// Number of correction pairs kept.
    pub memory: usize,
    /// Stop when the largest gradient component falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective decrease falls below this.
    pub f_tol: f64,
    /// Evaluations allowed per line search.
    pub max_line_evals: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iter: 100,
            memory: 10,
            grad_tol: 1e-5,
            f_tol: 1e-10,
            max_line_evals: 25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    ObjectiveTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective at the starting point followed by every accepted iterate.
    pub history: Vec<f64>,
}

impl OptimResult {
    pub fn line_search_failed(&self) -> bool {
        self.termination == Termination::LineSearchFailed
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Problem<F> {
    eval: F,
    evaluations: usize,
}

impl<F> Problem<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    /// Evaluates at `x`; failures and non-finite results become `+∞`.
    fn try_eval(&mut self, x: &[f64]) -> (f64, Option<Vec<f64>>) {
        self.evaluations += 1;
        match (self.eval)(x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => (f, Some(g)),
            Ok(_) => (f64::INFINITY, None),
            Err(e) => {
                log::debug!("objective failed at trial point: {e}");
                (f64::INFINITY, None)
            }
        }
    }
}

/// One trial step along the search direction.
#[derive(Clone)]
struct Trial {
    a: f64,
    f: f64,
    d: f64,
    g: Option<Vec<f64>>,
}

fn cubic_min(lo: &Trial, hi: &Trial) -> Option<f64> {
    if !(lo.f.is_finite() && hi.f.is_finite() && lo.g.is_some() && hi.g.is_some()) {
        return None;
    }
    let (a, b) = (lo.a, hi.a);
    let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.d * hi.d;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
    t.is_finite().then_some(t)
}

fn line_search<F>(problem: &mut Problem<F>, start: &Point, p: &[f64], a0: f64, max_evals: usize) -> Option<Point>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d0 = dot(&start.g, p);
    debug_assert!(d0 < 0.0);
    let f0 = start.f;
    let mut evals = 0;

    let probe = |problem: &mut Problem<F>, a: f64| -> (Trial, Vec<f64>) {
        let x: Vec<f64> = start.x.iter().zip(p).map(|(xi, pi)| xi + a * pi).collect();
        let (f, g) = problem.try_eval(&x);
        let d = g.as_ref().map_or(f64::NAN, |g| dot(g, p));
        (Trial { a, f, d, g }, x)
    };

    let accept = |t: Trial, x: Vec<f64>| Point {
        x,
        f: t.f,
        g: t.g.expect("accepted trial has a gradient"),
    };

    let zero = Trial {
        a: 0.0,
        f: f0,
        d: d0,
        g: Some(start.g.clone()),
    };
    let mut prev = zero.clone();
    let mut a = a0;
    let (mut lo, mut hi);
    let mut best_lo_x: Option<Vec<f64>> = None;

    loop {
        let (t, x) = probe(problem, a);
        evals += 1;
        if !t.f.is_finite() || t.f > f0 + C1 * t.a * d0 || (prev.a > 0.0 && t.f >= prev.f) {
            lo = prev;
            hi = t;
            break;
        }
        if t.d.abs() <= -C2 * d0 {
            return Some(accept(t, x));
        }
        if t.d >= 0.0 {
            hi = prev;
            lo = t;
            best_lo_x = Some(x);
            break;
        }
        if evals >= max_evals {
            return Some(accept(t, x));
        }
        best_lo_x = Some(x);
        prev = t;
        a *= 2.0;
    }
    if lo.a > 0.0 && best_lo_x.is_none() {
        // lo is the previous accepted-by-Armijo probe
        best_lo_x = Some(start.x.iter().zip(p).map(|(xi, pi)| xi + lo.a * pi).collect());
    }

    // zoom
    while evals < max_evals {
        let (left, right) = if lo.a < hi.a { (lo.a, hi.a) } else { (hi.a, lo.a) };
        let width = right - left;
        if width <= 1e-14 * right.abs().max(1e-300) {
            break;
        }
        let mid = 0.5 * (left + right);
        let aj = match cubic_min(&lo, &hi) {
            Some(t) if t > left + 0.1 * width && t < right - 0.1 * width => t,
            _ => mid,
        };
        let (t, x) = probe(problem, aj);
        evals += 1;
        if !t.f.is_finite() || t.f > f0 + C1 * t.a * d0 || t.f >= lo.f {
            hi = t;
        } else {
            if t.d.abs() <= -C2 * d0 {
                return Some(accept(t, x));
            }
            if t.d * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = t;
            best_lo_x = Some(x);
        }
    }
    // Fall back to the best point with sufficient decrease, if any.
    if lo.a > 0.0 && lo.f < f0 {
        let x = best_lo_x?;
        return Some(Point { x, f: lo.f, g: lo.g? });
    }
    None
}

/// Minimizes `eval` starting from `x0`. `eval` returns the objective and its
/// gradient; an error at `x0` is returned, errors elsewhere cause backtracking.
pub fn minimize<F>(eval: F, x0: &[f64], opts: &OptimizerOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut problem = Problem { eval, evaluations: 0 };
    problem.evaluations += 1;
    let (f0, g0) = (problem.eval)(x0)?;
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("objective is not finite at the starting point"));
    }
    if g0.len() != x0.len() {
        return Err(Error::invalid("gradient length does not match parameter length"));
    }
    let mut cur = Point {
        x: x0.to_vec(),
        f: f0,
        g: g0,
    };
    let mut history = vec![f0];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    let termination = loop {
        if inf_norm(&cur.g) < opts.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }

        let mut p = two_loop(&cur.g, &pairs);
        let mut steepest = pairs.is_empty();
        if !(dot(&p, &cur.g) < 0.0) {
            pairs.clear();
            p = cur.g.iter().map(|v| -v).collect();
            steepest = true;
        }
        let a0 = if steepest {
            (1.0 / inf_norm(&cur.g)).min(1.0)
        } else {
            1.0
        };

        let next = match line_search(&mut problem, &cur, &p, a0, opts.max_line_evals) {
            Some(n) => n,
            None if !steepest => {
                // retry once along the gradient with fresh curvature memory
                pairs.clear();
                let p: Vec<f64> = cur.g.iter().map(|v| -v).collect();
                let a0 = (1.0 / inf_norm(&cur.g)).min(1.0);
                match line_search(&mut problem, &cur, &p, a0, opts.max_line_evals) {
                    Some(n) => n,
                    None => break Termination::LineSearchFailed,
                }
            }
            None => break Termination::LineSearchFailed,
        };
        iterations += 1;

        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if pairs.len() == opts.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let rel = (cur.f - next.f) / cur.f.abs().max(next.f.abs()).max(1.0);
        cur = next;
        history.push(cur.f);
        if rel <= opts.f_tol {
            break Termination::ObjectiveTolerance;
        }
    };

    Ok(OptimResult {
        x: cur.x,
        f: cur.f,
        grad: cur.g,
        iterations,
        evaluations: problem.evaluations,
        termination,
        history,
    })
}

fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}
