//! Møller's scaled conjugate gradient.
//!
//! Hessian-free: curvature along the search direction comes from a finite
//! difference of gradients, and a Levenberg–Marquardt style scale `β` keeps
//! the local quadratic model positive definite. Only steps that do not
//! increase the objective are accepted, so the returned point is always the
//! best one seen.

use nalgebra::DVector;

use crate::error::{Error, Result};

const SIGMA0: f64 = 1e-4;
const BETA_INIT: f64 = 1e-6;
const BETA_MIN: f64 = 1e-15;
const BETA_MAX: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScgOptions {
    pub max_iter: usize,
    /// Stop once an accepted step changes the objective by less than this …
    pub tol_objective: f64,
    /// … and moves no weight by more than this.
    pub tol_weights: f64,
}

impl Default for ScgOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol_objective: 1e-3,
            tol_weights: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScgIteration {
    pub iteration: usize,
    /// Objective at the current (best) weights after this iteration.
    pub objective: f64,
    /// `max |Δw|` of this iteration (zero for a rejected step).
    pub weight_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScgReport {
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub converged: bool,
    pub history: Vec<ScgIteration>,
}

impl ScgReport {
    pub fn last_weight_delta(&self) -> f64 {
        self.history.last().map_or(0.0, |h| h.weight_delta)
    }
}

fn checked<F>(f: &mut F, w: &DVector<f64>, iteration: usize) -> Result<(f64, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let (value, grad) = f(w)?;
    if !value.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite(format!("objective or gradient at SCG iterate {iteration}")));
    }
    Ok((value, grad))
}

/// Minimises `objective`, which returns the value and gradient at a point.
pub fn scg_minimize<F>(mut objective: F, w0: &DVector<f64>, opts: &ScgOptions) -> Result<(DVector<f64>, ScgReport)>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let nparams = w0.len();
    let mut w = w0.clone();
    let (f0, g0) = checked(&mut objective, &w, 0)?;
    let mut f_old = f0;
    let mut grad_new = g0;
    let mut grad_old = grad_new.clone();
    let mut d = -&grad_new;

    let mut history = Vec::new();
    let mut success = true;
    let mut n_success = 0usize;
    let mut beta = BETA_INIT;
    let (mut mu, mut kappa, mut theta) = (0.0, 0.0, 0.0);
    let mut converged = false;

    let mut j = 0;
    while j < opts.max_iter {
        j += 1;
        if success {
            mu = d.dot(&grad_new);
            if mu >= 0.0 {
                d = -&grad_new;
                mu = d.dot(&grad_new);
            }
            kappa = d.dot(&d);
            if kappa < f64::EPSILON && grad_new.dot(&grad_new) >= f64::EPSILON {
                // the conjugate direction collapsed before the gradient did
                d = -&grad_new;
                mu = d.dot(&grad_new);
                kappa = d.dot(&d);
            }
            if kappa < f64::EPSILON {
                // zero gradient: nothing left to do
                history.push(ScgIteration {
                    iteration: j,
                    objective: f_old,
                    weight_delta: 0.0,
                });
                converged = true;
                break;
            }
            let sigma = SIGMA0 / kappa.sqrt();
            let w_plus = &w + &d * sigma;
            let (_, g_plus) = checked(&mut objective, &w_plus, j)?;
            theta = d.dot(&(g_plus - &grad_new)) / sigma;
        }

        let mut delta = theta + beta * kappa;
        if delta <= 0.0 {
            delta = beta * kappa;
            beta -= theta / kappa;
        }
        let alpha = -mu / delta;

        let step = &d * alpha;
        let w_new = &w + &step;
        let (f_new, _) = checked(&mut objective, &w_new, j)?;
        let comparison = 2.0 * (f_new - f_old) / (alpha * mu);
        let step_size = step.amax();

        if comparison >= 0.0 && f_new <= f_old {
            success = true;
            n_success += 1;
            w = w_new;
        } else {
            success = false;
        }
        let f_now = if success { f_new } else { f_old };
        history.push(ScgIteration {
            iteration: j,
            objective: f_now,
            weight_delta: if success { step_size } else { 0.0 },
        });

        if success {
            if step_size < opts.tol_weights && (f_new - f_old).abs() < opts.tol_objective {
                f_old = f_new;
                converged = true;
                break;
            }
            f_old = f_new;
            grad_old = grad_new;
            grad_new = checked(&mut objective, &w, j)?.1;
            if grad_new.dot(&grad_new) == 0.0 {
                converged = true;
                break;
            }
        }

        if comparison < 0.25 {
            beta = (4.0 * beta).min(BETA_MAX);
        }
        if comparison > 0.75 {
            beta = (0.5 * beta).max(BETA_MIN);
        }

        if n_success == nparams {
            d = -&grad_new;
            n_success = 0;
        } else if success {
            let gamma = (&grad_old - &grad_new).dot(&grad_new) / mu;
            d = &d * gamma - &grad_new;
        }
    }

    Ok((
        w,
        ScgReport {
            iterations: j,
            initial_objective: f0,
            final_objective: f_old,
            converged,
            history,
        },
    ))
}
