//! Limited-memory BFGS with a strong-Wolfe line search (cubic
//! interpolation in both the bracketing and the zoom phase).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    /// Number of stored `(s, y)` pairs.
    pub history: usize,
    pub max_iters: usize,
    /// Stop when `|grad|_inf` falls below this.
    pub grad_tol: f64,
    /// Stop when `|f_k - f_{k-1}| <= value_rtol * max(|f_k|, |f_{k-1}|)`.
    pub value_rtol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_ls_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 20,
            max_iters: 500,
            grad_tol: 1e-8,
            value_rtol: 1e-12,
            c1: 1e-4,
            c2: 0.9,
            max_ls_evals: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    ValueTolerance,
    MaxIterations,
    LineSearchFailed,
}

/// Curvature pairs kept between iterations.
#[derive(Debug, Clone, Default)]
pub struct LbfgsState {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    pub iterations: usize,
}

impl LbfgsState {
    pub fn history_len(&self) -> usize {
        self.pairs.len()
    }

    /// Every stored pair satisfies `s . y > 0`.
    pub fn curvature_ok(&self) -> bool {
        self.pairs.iter().all(|(s, y, _)| dot(s, y) > 0.0)
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>, window: usize) {
        if window == 0 {
            return;
        }
        let sy = dot(&s, &y);
        if !(sy > 1e-10 * norm2(&s) * norm2(&y)) || !sy.is_finite() {
            return;
        }
        if self.pairs.len() == window {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(&mut q, -a, y);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(&mut q, a - b, s);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Line searches that ended without meeting the strong Wolfe
    /// conditions (an Armijo-decreasing step was still taken if one was
    /// found).
    pub wolfe_failures: usize,
}

impl LbfgsReport {
    pub fn line_search_failed(&self) -> bool {
        self.termination == Termination::LineSearchFailed
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Minimizer of the cubic through `(x1, f1, g1)` and `(x2, f2, g2)`,
/// clamped to `bounds`.
fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = if bounds.0 <= bounds.1 { bounds } else { (bounds.1, bounds.0) };
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if pos.is_finite() {
            return pos.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

struct Point {
    a: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

enum Search {
    Wolfe(Point),
    /// Armijo decrease only.
    Decrease(Point),
    Failed,
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    evals_left: usize,
    evaluations: usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, a: f64) -> Result<Point> {
        let trial: Vec<f64> = self.x.iter().zip(self.d).map(|(x, d)| x + a * d).collect();
        let (f, g) = (self.objective)(&trial)?;
        self.evals_left = self.evals_left.saturating_sub(1);
        self.evaluations += 1;
        let dphi = dot(&g, self.d);
        let (f, dphi) = if f.is_finite() && dphi.is_finite() {
            (f, dphi)
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        Ok(Point { a, f, g, dphi })
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f <= self.f0 + self.c1 * p.a * self.dphi0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.dphi.abs() <= -self.c2 * self.dphi0
    }

    fn run(&mut self, a0: f64) -> Result<Search> {
        let mut prev = Point {
            a: 0.0,
            f: self.f0,
            g: Vec::new(),
            dphi: self.dphi0,
        };
        let mut a = a0;
        let mut first = true;
        while self.evals_left > 0 {
            let p = self.eval(a)?;
            if !p.f.is_finite() {
                // step too long: fall back towards the previous point
                a = prev.a + 0.5 * (a - prev.a);
                continue;
            }
            if !self.armijo(&p) || (!first && p.f >= prev.f) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Ok(Search::Wolfe(p));
            }
            if p.dphi >= 0.0 {
                return self.zoom(p, prev);
            }
            let lo = p.a + 0.01 * (p.a - prev.a);
            let hi = p.a * 10.0;
            a = cubic_interpolate(prev.a, prev.f, prev.dphi, p.a, p.f, p.dphi, (lo, hi));
            prev = p;
            first = false;
        }
        Ok(if prev.a > 0.0 { Search::Decrease(prev) } else { Search::Failed })
    }

    /// `lo` satisfies Armijo and has the lowest value seen in the bracket.
    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Result<Search> {
        while self.evals_left > 0 {
            let width = (hi.a - lo.a).abs();
            if width * norm_inf(self.d) < 1e-16 {
                break;
            }
            let (amin, amax) = if lo.a < hi.a { (lo.a, hi.a) } else { (hi.a, lo.a) };
            let mut a = if hi.f.is_finite() {
                cubic_interpolate(lo.a, lo.f, lo.dphi, hi.a, hi.f, hi.dphi, (amin, amax))
            } else {
                0.5 * (amin + amax)
            };
            // keep away from the bracket ends
            let margin = 0.1 * width;
            if a - amin < margin || amax - a < margin {
                a = 0.5 * (amin + amax);
            }
            let p = self.eval(a)?;
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Ok(Search::Wolfe(p));
                }
                if p.dphi * (hi.a - lo.a) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        Ok(if lo.a > 0.0 && lo.f < self.f0 {
            Search::Decrease(lo)
        } else {
            Search::Failed
        })
    }
}

/// Minimizes `objective` from `x0`.
///
/// Stops on gradient tolerance, relative value change, or the iteration
/// cap. A line search that finds no decrease ends the run with
/// [`Termination::LineSearchFailed`] and the best iterate so far; it is not
/// an error. Errors from the objective itself are propagated.
pub fn lbfgs_minimize<F>(mut objective: F, x0: &[f64], config: &LbfgsConfig) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x)?;
    let mut evaluations = 1;
    let mut state = LbfgsState::default();
    let mut wolfe_failures = 0;
    let report = |x: Vec<f64>, f: f64, g: &[f64], it: usize, ev: usize, term: Termination, wf: usize| LbfgsReport {
        x,
        value: f,
        grad_inf: norm_inf(g),
        iterations: it,
        evaluations: ev,
        termination: term,
        wolfe_failures: wf,
    };
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Ok(report(x, f, &g, 0, evaluations, Termination::LineSearchFailed, 0));
    }
    if norm_inf(&g) < config.grad_tol {
        return Ok(report(x, f, &g, 0, evaluations, Termination::GradientTolerance, 0));
    }

    let mut termination = Termination::MaxIterations;
    while state.iterations < config.max_iters {
        let mut retried = false;
        let step = loop {
            let mut d = state.direction(&g);
            let mut dphi0 = dot(&g, &d);
            if !(dphi0 < 0.0) || !dphi0.is_finite() {
                state.pairs.clear();
                d = g.iter().map(|v| -v).collect();
                dphi0 = dot(&g, &d);
            }
            let a0 = if state.pairs.is_empty() {
                (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
            } else {
                1.0
            };
            let mut ls = LineSearch {
                objective: &mut objective,
                x: &x,
                d: &d,
                f0: f,
                dphi0,
                c1: config.c1,
                c2: config.c2,
                evals_left: config.max_ls_evals.max(1),
                evaluations: 0,
            };
            let outcome = ls.run(a0)?;
            evaluations += ls.evaluations;
            match outcome {
                Search::Wolfe(p) => break Some((p, d)),
                Search::Decrease(p) => {
                    wolfe_failures += 1;
                    break Some((p, d));
                }
                Search::Failed if !retried && !state.pairs.is_empty() => {
                    state.pairs.clear();
                    retried = true;
                }
                Search::Failed => break None,
            }
        };
        let Some((p, d)) = step else {
            termination = Termination::LineSearchFailed;
            break;
        };
        let s: Vec<f64> = d.iter().map(|v| p.a * v).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        state.push(s, y, config.history);
        axpy(&mut x, p.a, &d);
        let f_prev = f;
        f = p.f;
        g = p.g;
        state.iterations += 1;
        if norm_inf(&g) < config.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        if (f_prev - f).abs() <= config.value_rtol * f_prev.abs().max(f.abs()) {
            termination = Termination::ValueTolerance;
            break;
        }
    }
    Ok(report(x, f, &g, state.iterations, evaluations, termination, wolfe_failures))
}
