//! L-BFGS with backtracking Armijo line search, and plain gradient descent.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("parameter and gradient lengths differ ({params} vs {grad})")]
    ShapeMismatch { params: usize, grad: usize },
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("initial point is not finite")]
    NonFiniteStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    /// Number of stored `(s, y)` pairs.
    pub memory: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub shrink: f64,
    pub max_halvings: usize,
    /// Step length tried along `-g` on the first iteration, before any
    /// curvature information exists. `None` uses `min(1, 1/|g|)`.
    pub initial_step: Option<f64>,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-5,
            step_tol: 1e-9,
            max_iter: 500,
            c1: 1e-4,
            shrink: 0.5,
            max_halvings: 50,
            initial_step: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    ConvergedGrad,
    ConvergedStep,
    MaxIter,
    /// No step satisfying the Armijo condition was found; the best point so
    /// far is returned.
    LineSearchFail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub f0: f64,
    pub iterations: usize,
    pub status: LbfgsStatus,
    pub trace: Vec<IterationRecord>,
    pub state: LbfgsState,
}

#[derive(Debug, Clone)]
struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Curvature history and counters.
#[derive(Debug, Clone)]
pub struct LbfgsState {
    memory: usize,
    history: VecDeque<Pair>,
    pub iteration: usize,
    /// Pairs rejected because `s.y <= 0`.
    pub skipped_pairs: usize,
    /// Every accepted step, as `(alpha, f_new, f_old + c1 alpha g.p)`.
    pub accepted: Vec<(f64, f64, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl LbfgsState {
    pub fn new(memory: usize) -> Self {
        Self { memory: memory.max(1), history: VecDeque::new(), iteration: 0, skipped_pairs: 0, accepted: Vec::new() }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// `s.y` of every stored pair.
    pub fn curvatures(&self) -> Vec<f64> {
        self.history.iter().map(|p| dot(&p.s, &p.y)).collect()
    }

    /// Stores the pair when it satisfies the curvature condition.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if sy <= 0.0 || !sy.is_finite() {
            self.skipped_pairs += 1;
            return false;
        }
        if self.history.len() == self.memory {
            self.history.pop_front();
        }
        self.history.push_back(Pair { s, y, rho: 1.0 / sy });
        true
    }

    /// Two-loop recursion: returns `-H g`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.history.len());
        for p in self.history.iter().rev() {
            let a = p.rho * dot(&p.s, &q);
            for (qi, yi) in q.iter_mut().zip(&p.y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some(last) = self.history.back() {
            let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for (p, a) in self.history.iter().zip(alphas.iter().rev()) {
            let b = p.rho * dot(&p.y, &q);
            for (qi, si) in q.iter_mut().zip(&p.s) {
                *qi += (a - b) * si;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    fn reset(&mut self) {
        self.history.clear();
    }
}

/// Slack on the sufficient-decrease test, relative to `|f|`. Below this
/// the decrease is not representable in `f64`.
pub const ARMIJO_ROUNDING: f64 = 4.0 * f64::EPSILON;

/// Minimizes `f_and_grad` from `x0`.
///
/// The objective must be deterministic. Non-finite trial values are treated
/// as failing the sufficient-decrease test.
pub fn lbfgs_minimize<F>(mut f_and_grad: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult, OptimError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFiniteStart);
    }
    let mut state = LbfgsState::new(cfg.memory);
    let mut x = x0.to_vec();
    let (mut f, mut g) = f_and_grad(&x);
    let f0 = f;
    let mut trace = vec![IterationRecord { iteration: 0, loss: f, grad_norm: norm(&g), step: 0.0 }];
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFiniteStart);
    }

    let status = loop {
        let gnorm = norm(&g);
        if gnorm <= cfg.grad_tol {
            break LbfgsStatus::ConvergedGrad;
        }
        if state.iteration >= cfg.max_iter {
            break LbfgsStatus::MaxIter;
        }

        let mut p = state.direction(&g);
        let mut slope = dot(&g, &p);
        if slope >= 0.0 || !slope.is_finite() {
            state.reset();
            p = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut alpha = if state.history_len() == 0 {
            match (state.iteration, cfg.initial_step) {
                (0, Some(step)) => step,
                _ => (1.0 / gnorm).min(1.0),
            }
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + alpha * pi).collect();
            if xn == x {
                break;
            }
            let (fn_, gn) = f_and_grad(&xn);
            let bound = f + cfg.c1 * alpha * slope;
            if fn_.is_finite() && fn_ <= bound + ARMIJO_ROUNDING * f.abs() && gn.iter().all(|v| v.is_finite()) {
                state.accepted.push((alpha, fn_, bound));
                accepted = Some((xn, fn_, gn));
                break;
            }
            alpha *= cfg.shrink;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break LbfgsStatus::LineSearchFail;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step_norm = norm(&s);
        state.push(s, y);
        x = xn;
        f = fn_;
        g = gn;
        state.iteration += 1;
        trace.push(IterationRecord { iteration: state.iteration, loss: f, grad_norm: norm(&g), step: alpha });

        if step_norm <= cfg.step_tol {
            break if norm(&g) <= cfg.grad_tol { LbfgsStatus::ConvergedGrad } else { LbfgsStatus::ConvergedStep };
        }
    };

    Ok(LbfgsResult { x, f, f0, iterations: state.iteration, status, trace, state })
}

/// `iteration,loss,grad_norm` CSV of an optimization run.
pub fn trace_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::from("iteration,loss,grad_norm\n");
    for r in trace {
        out.push_str(&format!("{},{},{}\n", r.iteration, r.loss, r.grad_norm));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64) -> Result<Self, OptimError> {
        if learning_rate <= 0.0 || !learning_rate.is_finite() {
            return Err(OptimError::BadLearningRate(learning_rate));
        }
        Ok(Self { learning_rate })
    }
}

/// `params - lr * grad`.
pub fn sgd_step(params: &[f64], grad: &[f64], cfg: &SgdConfig) -> Result<Vec<f64>, OptimError> {
    if params.len() != grad.len() {
        return Err(OptimError::ShapeMismatch { params: params.len(), grad: grad.len() });
    }
    Ok(params.iter().zip(grad).map(|(p, g)| p - cfg.learning_rate * g).collect())
}

/// In-place variant of [`sgd_step`] that also accepts a zero rate.
pub fn sgd_update(params: &mut [f64], grad: &[f64], learning_rate: f64) -> Result<(), OptimError> {
    if params.len() != grad.len() {
        return Err(OptimError::ShapeMismatch { params: params.len(), grad: grad.len() });
    }
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= learning_rate * g;
    }
    Ok(())
}
