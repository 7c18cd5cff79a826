//! Conventional (deterministic) DHP, the comparison baseline.
//!
//! Uses the same forward-model mean and network structures as the
//! probabilistic design but treats the model as exact: the cost is
//! `U_d(x̂, û) = x̂ᵀ Q x̂ + ûᵀ R û` and the critic is continued at the
//! deterministic successor `x̂ = h + g û`.
//!
//! The baseline cost is not fixed by the method; it defaults to `Q = Σ⁻¹`,
//! `R = Γ_init⁻¹` so the only difference from the probabilistic design is the
//! treatment of uncertainty.

use nalgebra::{DMatrix, DVector};

use crate::action::{RandomizedController, SolveOptions, SolveReport, Stationarity};
use crate::critic::{CriticModel, IdealSpec};
use crate::error::{check_dim, Result};
use crate::linalg::{check_spd, spd_inverse, symmetrize};
use crate::sysid::ForwardModel;
use crate::trainer::{run_training, CriticScheme, Method, TrainConfig, TrainingRun};

#[derive(Debug, Clone, PartialEq)]
pub struct DhpConfig {
    pub state_weight: DMatrix<f64>,
    pub control_weight: DMatrix<f64>,
}

impl DhpConfig {
    pub fn new(state_weight: DMatrix<f64>, control_weight: DMatrix<f64>) -> Result<Self> {
        check_spd(&state_weight, "DHP state weight")?;
        check_spd(&control_weight, "DHP control weight")?;
        Ok(Self {
            state_weight,
            control_weight,
        })
    }

    /// `Q = Σ⁻¹`, `R = Γ_init⁻¹`.
    pub fn matched(model: &ForwardModel, gamma_init: &DMatrix<f64>) -> Result<Self> {
        Self::new(model.sigma_precision().clone(), spd_inverse(gamma_init, "Γ_init")?)
    }
}

pub fn dhp_critic_target(
    model: &ForwardModel,
    controller: &RandomizedController,
    critic: &CriticModel,
    x: &DVector<f64>,
    cfg: &DhpConfig,
) -> Result<DVector<f64>> {
    check_dim("DHP state weight", model.state_dim(), cfg.state_weight.nrows())?;
    let (u_hat, u_jac) = controller.net().net_eval(x)?;
    let pred = model.predict(x, &u_hat)?;
    let d_model = pred.state_jacobian(&u_hat);
    let d_policy = &pred.g * &u_jac;
    let weighted_state = &cfg.state_weight * &pred.x_hat;
    let lambda_next = critic.lambda(&pred.x_hat)?;

    let mut target = d_model.transpose() * &weighted_state * 2.0;
    target += d_policy.transpose() * &weighted_state * 2.0;
    target += u_jac.transpose() * (&cfg.control_weight * &u_hat) * 2.0;
    target += d_model.transpose() * &lambda_next;
    target += d_policy.transpose() * &lambda_next;
    Ok(target)
}

/// `2 gᵀ Q (h + g û) + 2 R û + gᵀ λ(h + g û) = 0`.
fn dhp_stationarity<'a>(
    model: &'a ForwardModel,
    critic: &'a CriticModel,
    x: &DVector<f64>,
    cfg: &'a DhpConfig,
) -> Result<Stationarity<'a>> {
    check_dim("DHP control weight", model.control_dim(), cfg.control_weight.nrows())?;
    let h = model.h(x)?;
    let g = model.g(x)?;
    let gt_q = g.transpose() * &cfg.state_weight;
    let curvature = symmetrize(&(&gt_q * &g + &cfg.control_weight));
    let linear = &gt_q * &h;
    let nonlinear = Box::new(move |u: &DVector<f64>| -> Result<DVector<f64>> {
        let x_next = &h + &g * u;
        Ok(g.transpose() * critic.lambda(&x_next)?)
    });
    Ok(Stationarity {
        curvature,
        linear,
        nonlinear,
    })
}

pub fn dhp_optimality_residual(
    model: &ForwardModel,
    critic: &CriticModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    cfg: &DhpConfig,
) -> Result<DVector<f64>> {
    dhp_stationarity(model, critic, x, cfg)?.residual(u)
}

pub fn dhp_solve_control(
    model: &ForwardModel,
    critic: &CriticModel,
    x: &DVector<f64>,
    cfg: &DhpConfig,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    dhp_stationarity(model, critic, x, cfg)?.solve(opts)
}

/// Conventional DHP as a [`CriticScheme`]. The ideal distributions are
/// ignored; the cost weights live in the [`DhpConfig`].
#[derive(Debug, Clone)]
pub struct ConventionalDhp {
    pub config: DhpConfig,
}

impl CriticScheme for ConventionalDhp {
    fn method(&self) -> Method {
        Method::Dhp
    }

    fn critic_target(
        &self,
        model: &ForwardModel,
        controller: &RandomizedController,
        critic: &CriticModel,
        _ideal: &IdealSpec,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        dhp_critic_target(model, controller, critic, x, &self.config)
    }

    fn solve_control(
        &self,
        model: &ForwardModel,
        _controller: &RandomizedController,
        critic: &CriticModel,
        _ideal: &IdealSpec,
        x: &DVector<f64>,
        opts: &SolveOptions,
    ) -> Result<SolveReport> {
        dhp_solve_control(model, critic, x, &self.config, opts)
    }
}

/// Same sampling, initialisation and phase structure as the probabilistic
/// run, with the deterministic target and control law.
pub fn run_dhp_training(model: &ForwardModel, cfg: &TrainConfig, dhp: &DhpConfig) -> Result<TrainingRun> {
    run_training(
        model,
        cfg,
        &ConventionalDhp {
            config: dhp.clone(),
        },
    )
}
