//! The randomized controller `c(u | x) = N(W ψ(x), Γ)` and the solver for
//! its optimality condition
//!
//! ```text
//! R(û) = 2 gᵀ Σ⁻¹ (h + g û - m) + 2 Γ_I⁻¹ (û - m_u) + gᵀ χ ϝ(û) = 0.
//! ```
//!
//! `ϝ` depends on `û` nonlinearly, so the root is found numerically: a damped
//! fixed-point iteration on the linear part, with bracketing bisection as the
//! scalar fallback.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::critic::{combined_precisions, digamma_from_parts, CriticModel, IdealSpec};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_factor, floor_eigenvalues, spd_inverse, symmetrize};
use crate::plant::standard_normals;
use crate::rbf::RbfNetwork;
use crate::sysid::ForwardModel;

/// Eigenvalue floor applied to Γ.
pub const GAMMA_FLOOR: f64 = 1e-8;

const MIN_DAMPING: f64 = 1.0 / 64.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedController {
    net: RbfNetwork,
    gamma: DMatrix<f64>,
    gamma_precision: DMatrix<f64>,
}

impl RandomizedController {
    pub fn new(net: RbfNetwork, gamma: DMatrix<f64>) -> Result<Self> {
        check_dim("Γ", net.output_dim(), gamma.nrows())?;
        let gamma_precision = spd_inverse(&gamma, "Γ")?;
        Ok(Self {
            net,
            gamma,
            gamma_precision,
        })
    }

    pub fn net(&self) -> &RbfNetwork {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut RbfNetwork {
        &mut self.net
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn gamma_precision(&self) -> &DMatrix<f64> {
        &self.gamma_precision
    }

    pub fn set_gamma(&mut self, gamma: DMatrix<f64>) -> Result<()> {
        check_dim("Γ", self.net.output_dim(), gamma.nrows())?;
        self.gamma_precision = spd_inverse(&gamma, "Γ")?;
        self.gamma = gamma;
        Ok(())
    }

    pub fn control_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// The controller mean `W ψ(x)`.
    pub fn mean(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.net.output(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    /// Return the controller mean.
    Mean,
    /// Draw from `N(W ψ(x), Γ)`.
    Sample,
}

pub fn sample_control<R: Rng + ?Sized>(
    controller: &RandomizedController,
    x: &DVector<f64>,
    mode: ControlMode,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mean = controller.mean(x)?;
    match mode {
        ControlMode::Mean => Ok(mean),
        ControlMode::Sample => {
            let l = cholesky_factor(&controller.gamma, "Γ")?;
            Ok(mean + l * standard_normals(rng, controller.control_dim()))
        }
    }
}

/// Γ as the mean outer product of `u* - û` residuals, floored at
/// [`GAMMA_FLOOR`].
pub fn update_gamma(residuals: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let first = residuals
        .first()
        .ok_or_else(|| Error::InvalidInput("Γ update needs at least one residual".into()))?;
    let r = first.len();
    let mut acc = DMatrix::zeros(r, r);
    for e in residuals {
        check_dim("control residual", r, e.len())?;
        acc += e * e.transpose();
    }
    acc /= residuals.len() as f64;
    Ok(floor_eigenvalues(&acc, GAMMA_FLOOR))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    FixedPoint,
    Bracketed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub u_star: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    pub method: SolveMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial damping `d ∈ (0, 1]`.
    pub damping: f64,
    /// Starting point; zero when absent.
    pub initial: Option<DVector<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            damping: 1.0,
            initial: None,
        }
    }
}

/// A stationarity condition of the form `R(u) = 2 (M u + b) + N(u) = 0`
/// with `M` SPD. Both the probabilistic and the conventional controllers
/// reduce to this shape.
type Nonlinear<'a> = Box<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + 'a>;

pub(crate) struct Stationarity<'a> {
    pub curvature: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub nonlinear: Nonlinear<'a>,
}

impl Stationarity<'_> {
    pub fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let r = (&self.curvature * u + &self.linear) * 2.0 + (self.nonlinear)(u)?;
        if r.iter().all(|v| v.is_finite()) {
            Ok(r)
        } else {
            Err(Error::NonFinite(format!("optimality residual at u = {:?}", u.as_slice())))
        }
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<SolveReport> {
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidInput("solver tolerance must be positive".into()));
        }
        let r = self.linear.len();
        let chol = symmetrize(&self.curvature)
            .cholesky()
            .ok_or(Error::NotSpd("optimality curvature"))?;
        let mut u = match &opts.initial {
            Some(u0) => {
                check_dim("initial control", r, u0.len())?;
                u0.clone()
            }
            None => DVector::zeros(r),
        };
        let mut res = self.residual(&u)?;
        let mut best = (u.clone(), res.norm());
        if best.1 <= opts.tol {
            return Ok(report(best, 0, true, SolveMethod::FixedPoint));
        }

        let mut damping = opts.damping.clamp(MIN_DAMPING, 1.0);
        let mut iterations = 0;
        while iterations < opts.max_iter {
            iterations += 1;
            let target = -chol.solve(&(&self.linear + (self.nonlinear)(&u)? * 0.5));
            let candidate = &u * (1.0 - damping) + target * damping;
            let cand_res = self.residual(&candidate)?;
            let cand_norm = cand_res.norm();
            if cand_norm < best.1 {
                best = (candidate.clone(), cand_norm);
            }
            if cand_norm <= opts.tol {
                return Ok(report(best, iterations, true, SolveMethod::FixedPoint));
            }
            if cand_norm > res.norm() && damping > MIN_DAMPING {
                damping = (damping * 0.5).max(MIN_DAMPING);
                continue;
            }
            u = candidate;
            res = cand_res;
        }

        if r == 1 {
            return self.bracket(best, iterations, opts);
        }
        Ok(report(best, iterations, false, SolveMethod::FixedPoint))
    }

    /// Scalar fallback: expand an interval around the best point until the
    /// residual changes sign, then bisect.
    fn bracket(&self, best: (DVector<f64>, f64), mut iterations: usize, opts: &SolveOptions) -> Result<SolveReport> {
        let scalar = |u: f64| -> Result<f64> { Ok(self.residual(&DVector::from_element(1, u))?[0]) };
        let center = best.0[0];
        let f_center = scalar(center)?;
        let mut width = 0.1_f64.max(center.abs() * 0.1);
        let mut interval = None;
        for _ in 0..60 {
            iterations += 1;
            let (lo, hi) = (center - width, center + width);
            let (f_lo, f_hi) = (scalar(lo)?, scalar(hi)?);
            if f_lo.signum() != f_center.signum() {
                interval = Some((lo, center, f_lo));
                break;
            }
            if f_hi.signum() != f_center.signum() {
                interval = Some((center, hi, f_center));
                break;
            }
            width *= 2.0;
        }
        let Some((mut lo, mut hi, mut f_lo)) = interval else {
            return Ok(report(best, iterations, false, SolveMethod::Bracketed));
        };
        let mut best = best;
        while iterations < opts.max_iter.saturating_mul(4).max(opts.max_iter + 200) {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let f_mid = scalar(mid)?;
            if f_mid.abs() < best.1 {
                best = (DVector::from_element(1, mid), f_mid.abs());
            }
            if f_mid.abs() <= opts.tol || mid == lo || mid == hi {
                break;
            }
            if f_mid.signum() == f_lo.signum() {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        let converged = best.1 <= opts.tol;
        Ok(report(best, iterations, converged, SolveMethod::Bracketed))
    }
}

fn report(best: (DVector<f64>, f64), iterations: usize, converged: bool, method: SolveMethod) -> SolveReport {
    SolveReport {
        u_star: best.0,
        iterations,
        residual_norm: best.1,
        converged,
        method,
    }
}

/// Probabilistic optimality condition at state `x`, with `ϝ` built from the
/// controller's Γ and the partial-cost weight taken from the ideal control
/// covariance.
pub(crate) fn probabilistic_stationarity<'a>(
    model: &'a ForwardModel,
    controller: &'a RandomizedController,
    critic: &'a CriticModel,
    ideal: &'a IdealSpec,
    x: &DVector<f64>,
) -> Result<Stationarity<'a>> {
    let a = combined_precisions(model.sigma(), critic)?;
    probabilistic_stationarity_with(model, controller, critic, ideal, a, x)
}

pub(crate) fn probabilistic_stationarity_with<'a>(
    model: &'a ForwardModel,
    controller: &'a RandomizedController,
    critic: &'a CriticModel,
    ideal: &'a IdealSpec,
    a_precisions: Vec<DMatrix<f64>>,
    x: &DVector<f64>,
) -> Result<Stationarity<'a>> {
    check_dim("ideal state mean", model.state_dim(), ideal.state_mean.len())?;
    check_dim("ideal control mean", model.control_dim(), ideal.control_mean.len())?;
    let h = model.h(x)?;
    let g = model.g(x)?;
    let sigma_inv = model.sigma_precision();
    let gt_si = g.transpose() * sigma_inv;
    let curvature = symmetrize(&(&gt_si * &g + ideal.control_precision()));
    let linear = &gt_si * (&h - &ideal.state_mean) - ideal.control_precision() * &ideal.control_mean;
    let chi = critic.chi();
    let bias = critic.bias();
    let nonlinear = Box::new(move |u: &DVector<f64>| -> Result<DVector<f64>> {
        let bundle = digamma_from_parts(&h, &g, &a_precisions, critic, controller.gamma_precision(), u)?;
        let mut propagated = bundle.weighted_chi(&chi);
        if let Some(b) = &bias {
            propagated += b;
        }
        Ok(g.transpose() * propagated)
    });
    Ok(Stationarity {
        curvature,
        linear,
        nonlinear,
    })
}

/// `R(û)` of the probabilistic optimality condition.
pub fn optimality_residual(
    model: &ForwardModel,
    controller: &RandomizedController,
    critic: &CriticModel,
    ideal: &IdealSpec,
    x: &DVector<f64>,
    u_hat: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("control", model.control_dim(), u_hat.len())?;
    probabilistic_stationarity(model, controller, critic, ideal, x)?.residual(u_hat)
}

pub fn solve_optimal_control(
    model: &ForwardModel,
    controller: &RandomizedController,
    critic: &CriticModel,
    ideal: &IdealSpec,
    x: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    probabilistic_stationarity(model, controller, critic, ideal, x)?.solve(opts)
}
