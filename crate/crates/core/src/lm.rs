//! Levenberg–Marquardt for small dense least-squares problems.
//!
//! Minimizes `‖r(x)‖²` with Marquardt's diagonal scaling of the damping
//! term. Damping is divided by 10 after an accepted step and multiplied by
//! 10 after a rejected one. Accepted steps never increase the cost.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquaresProblem {
    /// Residuals at `x`, or `None` when `x` lies outside the model domain.
    fn residuals(&mut self, x: &DVector<f64>) -> Option<DVector<f64>>;

    /// Jacobian of the residuals at `x`.
    fn jacobian(&mut self, x: &DVector<f64>) -> Option<DMatrix<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Stop once an accepted step is shorter than this (Euclidean norm).
    pub step_tolerance: f64,
    /// Stop once the cost `‖r‖²` drops below this.
    pub cost_tolerance: f64,
    /// Stop once an accepted step reduces the cost by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-3,
            step_tolerance: 1e-10,
            cost_tolerance: 0.0,
            relative_tolerance: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    StepTolerance,
    CostTolerance,
    RelativeDecrease,
    ZeroGradient,
    /// No cost decrease possible even with maximal damping.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub x: DVector<f64>,
    /// Final `‖r‖²`.
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after the start and after every accepted step.
    pub cost_history: Vec<f64>,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-15;

/// Runs LM from `x0`. Returns `None` if the residuals are undefined at `x0`.
pub fn minimize<P: LeastSquaresProblem>(
    problem: &mut P,
    x0: DVector<f64>,
    settings: &LmSettings,
) -> Option<LmReport> {
    let mut x = x0;
    let mut r = problem.residuals(&x)?;
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return None;
    }
    let mut lambda = settings.initial_damping;
    let mut history = vec![cost];

    let finish = |x, cost, iterations, termination, history| {
        Some(LmReport {
            x,
            cost,
            iterations,
            termination,
            cost_history: history,
        })
    };

    for iteration in 0..settings.max_iterations {
        if cost <= settings.cost_tolerance {
            return finish(x, cost, iteration, Termination::CostTolerance, history);
        }
        let Some(jac) = problem.jacobian(&x) else {
            return finish(x, cost, iteration, Termination::Stalled, history);
        };
        let gradient = jac.tr_mul(&r);
        if gradient.iter().all(|g| *g == 0.0) {
            return finish(x, cost, iteration, Termination::ZeroGradient, history);
        }
        let normal = jac.tr_mul(&jac);
        let max_diag = normal.diagonal().amax();
        let scale = normal.diagonal().map(|v| v.max(1e-12 * max_diag).max(f64::MIN_POSITIVE));

        loop {
            let mut damped = normal.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * scale[i];
            }
            let step = damped.cholesky().map(|c| -c.solve(&gradient));
            let accepted = step.and_then(|step| {
                let candidate = &x + &step;
                let r_new = problem.residuals(&candidate)?;
                let cost_new = r_new.norm_squared();
                (cost_new < cost).then_some((candidate, r_new, cost_new, step.norm()))
            });
            match accepted {
                Some((candidate, r_new, cost_new, step_norm)) => {
                    let decrease = (cost - cost_new) / cost;
                    x = candidate;
                    r = r_new;
                    cost = cost_new;
                    history.push(cost);
                    lambda = (lambda * 0.1).max(MIN_DAMPING);
                    if step_norm <= settings.step_tolerance {
                        return finish(x, cost, iteration + 1, Termination::StepTolerance, history);
                    }
                    if decrease <= settings.relative_tolerance {
                        return finish(x, cost, iteration + 1, Termination::RelativeDecrease, history);
                    }
                    break;
                }
                None => {
                    lambda *= 10.0;
                    if lambda > MAX_DAMPING {
                        return finish(x, cost, iteration + 1, Termination::Stalled, history);
                    }
                }
            }
        }
    }
    let iterations = settings.max_iterations;
    finish(x, cost, iterations, Termination::MaxIterations, history)
}
