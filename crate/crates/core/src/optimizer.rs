//! Limited-memory BFGS with a strong-Wolfe line search, plus a
//! central-difference gradient checker.
//!
//! All model parameters are log-transformed, so the problems handed to
//! [`minimize`] are unconstrained.

use std::collections::VecDeque;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("objective is not finite at the start point")]
    NonFiniteStart,
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stop once the gradient infinity norm drops below this.
    pub gradient_tolerance: f64,
    pub memory_pairs: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-5,
            memory_pairs: 10,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(OptimizerError::InvalidConfig(format!(
                "need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if self.memory_pairs == 0 {
            return Err(OptimizerError::InvalidConfig("memory_pairs must be at least 1".into()));
        }
        if !(self.gradient_tolerance >= 0.0) {
            return Err(OptimizerError::InvalidConfig("gradient_tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    GradientSmall,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub best_point: DVector<f64>,
    pub best_value: f64,
    pub gradient: DVector<f64>,
    pub iterations_used: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination_reason: TerminationReason,
}

const MAX_LINE_SEARCH_EVALS: usize = 40;

struct Evaluator<F> {
    objective: F,
    evaluations: usize,
}

impl<F: FnMut(&DVector<f64>) -> (f64, DVector<f64>)> Evaluator<F> {
    fn eval(&mut self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        self.evaluations += 1;
        let (f, g) = (self.objective)(x);
        (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g))
    }
}

struct LinePoint {
    step: f64,
    value: f64,
    slope: f64,
    gradient: DVector<f64>,
}

/// Minimizes `objective`, which maps a point to `(value, gradient)`.
///
/// Non-finite trial values are treated as infinitely bad and the line search
/// backs off; accepted iterates always satisfy the strong Wolfe conditions.
pub fn minimize<F>(
    objective: F,
    start: &DVector<f64>,
    config: &OptimizerConfig,
) -> Result<OptimizationResult, OptimizerError>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    config.validate()?;
    let mut ev = Evaluator { objective, evaluations: 0 };
    let (mut f, mut g) = ev.eval(start).ok_or(OptimizerError::NonFiniteStart)?;
    let mut x = start.clone();
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    let finish = |x, f, g, iterations, evaluations, reason| OptimizationResult {
        best_point: x,
        best_value: f,
        gradient: g,
        iterations_used: iterations,
        evaluations,
        converged: reason == TerminationReason::GradientSmall,
        termination_reason: reason,
    };

    loop {
        if g.amax() < config.gradient_tolerance {
            return Ok(finish(x, f, g, iterations, ev.evaluations, TerminationReason::GradientSmall));
        }
        if iterations >= config.max_iterations {
            return Ok(finish(x, f, g, iterations, ev.evaluations, TerminationReason::MaxIterations));
        }

        let mut direction = two_loop(&g, &history);
        let mut slope = g.dot(&direction);
        if !(slope < 0.0) {
            history.clear();
            direction = -&g;
            slope = -g.norm_squared();
        }
        let initial_step = if history.is_empty() { (1.0 / g.norm()).min(1.0) } else { 1.0 };

        let Some(accepted) = line_search(&mut ev, &x, f, slope, &direction, initial_step, config) else {
            return Ok(finish(x, f, g, iterations, ev.evaluations, TerminationReason::LineSearchFailed));
        };

        let s = &direction * accepted.step;
        let y = &accepted.gradient - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if history.len() == config.memory_pairs {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        x += s;
        f = accepted.value;
        g = accepted.gradient;
        iterations += 1;
    }
}

/// Two-loop recursion: returns `-H g` for the current inverse-Hessian estimate.
fn two_loop(g: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

fn line_search<F>(
    ev: &mut Evaluator<F>,
    x: &DVector<f64>,
    f0: f64,
    slope0: f64,
    direction: &DVector<f64>,
    initial_step: f64,
    config: &OptimizerConfig,
) -> Option<LinePoint>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let (c1, c2) = (config.wolfe_c1, config.wolfe_c2);
    let mut probe = |ev: &mut Evaluator<F>, step: f64| -> Option<LinePoint> {
        let trial = x + direction * step;
        ev.eval(&trial).map(|(value, gradient)| LinePoint {
            step,
            value,
            slope: gradient.dot(direction),
            gradient,
        })
    };
    let armijo = |p: &LinePoint| p.value <= f0 + c1 * p.step * slope0;
    let curvature = |p: &LinePoint| p.slope.abs() <= -c2 * slope0;

    let mut prev = LinePoint { step: 0.0, value: f0, slope: slope0, gradient: DVector::zeros(0) };
    let mut step = initial_step;
    let mut first = true;
    let mut evals = 0;
    while evals < MAX_LINE_SEARCH_EVALS {
        evals += 1;
        let Some(p) = probe(ev, step) else {
            // non-finite: back off towards the last good step
            step = prev.step + 0.5 * (step - prev.step);
            continue;
        };
        if !armijo(&p) || (!first && p.value >= prev.value) {
            return zoom(ev, &mut probe, prev, p, f0, slope0, c1, c2, MAX_LINE_SEARCH_EVALS - evals);
        }
        if curvature(&p) {
            return Some(p);
        }
        if p.slope >= 0.0 {
            return zoom(ev, &mut probe, p, prev, f0, slope0, c1, c2, MAX_LINE_SEARCH_EVALS - evals);
        }
        first = false;
        step *= 2.0;
        prev = p;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom<F, P>(
    ev: &mut Evaluator<F>,
    probe: &mut P,
    mut lo: LinePoint,
    mut hi: LinePoint,
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
) -> Option<LinePoint>
where
    P: FnMut(&mut Evaluator<F>, f64) -> Option<LinePoint>,
{
    for _ in 0..budget {
        let width = hi.step - lo.step;
        if width.abs() <= 1e-16 * lo.step.abs().max(1.0) {
            return None;
        }
        let mut step = cubic_minimizer(&lo, &hi).unwrap_or(lo.step + 0.5 * width);
        let (a, b) = if lo.step < hi.step { (lo.step, hi.step) } else { (hi.step, lo.step) };
        let margin = 0.1 * (b - a);
        if !(step > a + margin && step < b - margin) {
            step = lo.step + 0.5 * width;
        }
        let Some(p) = probe(ev, step) else {
            hi = LinePoint { step, value: f64::INFINITY, slope: f64::NAN, gradient: DVector::zeros(0) };
            continue;
        };
        if p.value > f0 + c1 * p.step * slope0 || p.value >= lo.value {
            hi = p;
        } else {
            if p.slope.abs() <= -c2 * slope0 {
                return Some(p);
            }
            if p.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    None
}

/// Minimizer of the cubic interpolating value and slope at both ends.
fn cubic_minimizer(a: &LinePoint, b: &LinePoint) -> Option<f64> {
    if !(b.value.is_finite() && b.slope.is_finite()) {
        return None;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.step - a.step).signum() * disc.sqrt();
    let t = b.step - (b.step - a.step) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Worst relative disagreement between the analytic gradient and central
/// differences with the given step.
///
/// Each coordinate's error is scaled by the magnitude of its finite-difference
/// estimate, floored at `1e-6` of the largest estimate so that near-zero
/// components are judged on the scale of the whole gradient.
pub fn check_gradient<F>(mut objective: F, point: &DVector<f64>, step: f64) -> f64
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let (_, analytic) = objective(point);
    let numeric = DVector::from_fn(point.len(), |i, _| {
        let mut plus = point.clone();
        let mut minus = point.clone();
        plus[i] += step;
        minus[i] -= step;
        (objective(&plus).0 - objective(&minus).0) / (2.0 * step)
    });
    let floor = 1e-6 * numeric.amax().max(1.0);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / n.abs().max(floor))
        .fold(0.0, f64::max)
}
