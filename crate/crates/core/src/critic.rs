//! Critic network and the closed-form probabilistic critic target.
//!
//! The critic approximates `λ[x] = ∂[-ln γ(x)]/∂x` with an RBF network
//! `λ(x) = χ φ(x)`. Its training target is the sum of five Gaussian
//! integrals, each of which collapses to a closed form:
//!
//! ```text
//! λ*ᵀ = 2 (x̂ - m)ᵀ Σ⁻¹ (h′ + g′û)          state cost through the model
//!     + 2 (x̂ - m)ᵀ Σ⁻¹ g W ψ′              state cost through the controller
//!     + 2 (û - m_u)ᵀ Γ_I⁻¹ W ψ′             control cost through the controller
//!     + Σ_l ϝ_l χ_lᵀ (h′ + g′ H_l)          λ propagated through the model
//!     + Σ_l ϝ_l χ_lᵀ g W ψ′                 λ propagated through the controller
//! ```
//!
//! with `x̂ = h + g û`, `û = W ψ(x)`. `ϝ_l`, `H_l` and `Ω_l` come from
//! completing the square in `u` against basis `l` (see
//! [`crate::gaussian_algebra::complete_square_in_control`]). Gaussian
//! normalisation constants are dropped exactly as in the derivation, so `ϝ_l`
//! is the bare exponential.

use nalgebra::{DMatrix, DVector};

use crate::action::RandomizedController;
use crate::error::{check_dim, Error, Result};
use crate::gaussian_algebra::complete_square_in_control;
use crate::linalg::{all_finite, spd_inverse, symmetrize};
use crate::rbf::RbfNetwork;
use crate::sysid::ForwardModel;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticModel {
    net: RbfNetwork,
}

impl CriticModel {
    pub fn new(net: RbfNetwork) -> Result<Self> {
        check_dim("critic output (λ has state dimension)", net.input_dim(), net.output_dim())?;
        Ok(Self { net })
    }

    pub fn net(&self) -> &RbfNetwork {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut RbfNetwork {
        &mut self.net
    }

    pub fn lambda(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.net.output(x)
    }

    /// χ without the bias column (`n × L`).
    pub fn chi(&self) -> DMatrix<f64> {
        self.net.weights().columns(0, self.net.num_bases()).into_owned()
    }

    /// The bias column of χ, if the critic has one.
    pub fn bias(&self) -> Option<DVector<f64>> {
        self.net
            .has_bias()
            .then(|| self.net.weights().column(self.net.num_bases()).into_owned())
    }
}

/// Ideal (target) distributions of the regulation problem.
///
/// The ideal state covariance is the model's Σ. The ideal control covariance
/// `Γ_I` weights the control part of the partial cost.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealSpec {
    pub state_mean: DVector<f64>,
    pub control_mean: DVector<f64>,
    control_covariance: DMatrix<f64>,
    control_precision: DMatrix<f64>,
}

impl IdealSpec {
    pub fn new(
        state_mean: DVector<f64>,
        control_mean: DVector<f64>,
        control_covariance: DMatrix<f64>,
    ) -> Result<Self> {
        check_dim("ideal control covariance", control_mean.len(), control_covariance.nrows())?;
        let control_precision = spd_inverse(&control_covariance, "ideal control covariance")?;
        Ok(Self {
            state_mean,
            control_mean,
            control_covariance,
            control_precision,
        })
    }

    /// Zero-mean regulation with ideal control covariance `gamma`.
    pub fn regulation(state_dim: usize, gamma: DMatrix<f64>) -> Result<Self> {
        let r = gamma.nrows();
        Self::new(DVector::zeros(state_dim), DVector::zeros(r), gamma)
    }

    pub fn control_covariance(&self) -> &DMatrix<f64> {
        &self.control_covariance
    }

    pub fn control_precision(&self) -> &DMatrix<f64> {
        &self.control_precision
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DigammaBundle {
    /// ϝ_l
    pub digamma: DVector<f64>,
    /// H_l
    pub centers: Vec<DVector<f64>>,
    /// Ω_l
    pub omegas: Vec<DMatrix<f64>>,
}

impl DigammaBundle {
    /// `Σ_l ϝ_l χ_{:,l}` (length `n`).
    pub fn weighted_chi(&self, chi: &DMatrix<f64>) -> DVector<f64> {
        chi * &self.digamma
    }
}

/// `A_l = (Σ + γ_l)⁻¹` for every critic basis.
pub(crate) fn combined_precisions(sigma: &DMatrix<f64>, critic: &CriticModel) -> Result<Vec<DMatrix<f64>>> {
    critic
        .net
        .width_precisions()
        .iter()
        .map(|p| {
            let gamma_l = spd_inverse(p, "critic width precision")?;
            spd_inverse(&symmetrize(&(sigma + gamma_l)), "Σ + γ_l")
        })
        .collect()
}

pub(crate) fn digamma_from_parts(
    h: &DVector<f64>,
    g: &DMatrix<f64>,
    a_precisions: &[DMatrix<f64>],
    critic: &CriticModel,
    gamma_precision: &DMatrix<f64>,
    u_hat: &DVector<f64>,
) -> Result<DigammaBundle> {
    let num = a_precisions.len();
    let mut digamma = DVector::zeros(num);
    let mut centers = Vec::with_capacity(num);
    let mut omegas = Vec::with_capacity(num);
    for (l, (z, a)) in critic.net.centers().iter().zip(a_precisions).enumerate() {
        let cs = complete_square_in_control(h, g, z, a, gamma_precision, u_hat)?;
        digamma[l] = cs.digamma();
        centers.push(cs.center);
        omegas.push(cs.omega);
    }
    Ok(DigammaBundle {
        digamma,
        centers,
        omegas,
    })
}

/// ϝ_l, H_l and Ω_l at state `x` and controller mean `u_hat`.
pub fn compute_digamma(
    model: &ForwardModel,
    critic: &CriticModel,
    gamma_precision: &DMatrix<f64>,
    x: &DVector<f64>,
    u_hat: &DVector<f64>,
) -> Result<DigammaBundle> {
    check_dim("critic input", model.state_dim(), critic.net.input_dim())?;
    let h = model.h(x)?;
    let g = model.g(x)?;
    let a = combined_precisions(model.sigma(), critic)?;
    digamma_from_parts(&h, &g, &a, critic, gamma_precision, u_hat)
}

/// The five contributions to the critic target, as column vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticTerms {
    pub term1: DVector<f64>,
    pub term2: DVector<f64>,
    pub term3: DVector<f64>,
    pub term4: DVector<f64>,
    pub term5: DVector<f64>,
}

impl CriticTerms {
    pub fn total(&self) -> DVector<f64> {
        &self.term1 + &self.term2 + &self.term3 + &self.term4 + &self.term5
    }
}

pub fn critic_target_terms(
    model: &ForwardModel,
    controller: &RandomizedController,
    critic: &CriticModel,
    ideal: &IdealSpec,
    x: &DVector<f64>,
) -> Result<CriticTerms> {
    let a = combined_precisions(model.sigma(), critic)?;
    critic_target_terms_with(model, controller, critic, ideal, &a, x)
}

pub(crate) fn critic_target_terms_with(
    model: &ForwardModel,
    controller: &RandomizedController,
    critic: &CriticModel,
    ideal: &IdealSpec,
    a_precisions: &[DMatrix<f64>],
    x: &DVector<f64>,
) -> Result<CriticTerms> {
    check_dim("ideal state mean", model.state_dim(), ideal.state_mean.len())?;
    check_dim("ideal control mean", model.control_dim(), ideal.control_mean.len())?;
    let (u_hat, u_jac) = controller.net().net_eval(x)?;
    let pred = model.predict(x, &u_hat)?;
    let sigma_inv = model.sigma_precision();

    let state_err = &pred.x_hat - &ideal.state_mean;
    let weighted_state = sigma_inv * &state_err;
    let d_model = pred.state_jacobian(&u_hat);
    let d_policy = &pred.g * &u_jac;

    let term1 = d_model.transpose() * &weighted_state * 2.0;
    let term2 = d_policy.transpose() * &weighted_state * 2.0;
    let term3 = u_jac.transpose() * (ideal.control_precision() * (&u_hat - &ideal.control_mean)) * 2.0;

    let bundle = digamma_from_parts(
        &pred.h,
        &pred.g,
        a_precisions,
        critic,
        controller.gamma_precision(),
        &u_hat,
    )?;
    let chi = critic.chi();
    let n = model.state_dim();
    let mut term4 = DVector::zeros(n);
    for (l, h_l) in bundle.centers.iter().enumerate() {
        let through = &pred.h_prime + pred.g_prime_times(h_l);
        term4 += through.transpose() * chi.column(l) * bundle.digamma[l];
    }
    let mut propagated = bundle.weighted_chi(&chi);
    if let Some(b) = critic.bias() {
        // the constant output has no ϝ factor
        term4 += d_model.transpose() * &b;
        propagated += b;
    }
    let term5 = d_policy.transpose() * propagated;

    let terms = CriticTerms {
        term1,
        term2,
        term3,
        term4,
        term5,
    };
    if !all_finite(&terms.total()) {
        return Err(Error::NonFinite(format!("critic target at x = {:?}", x.as_slice())));
    }
    Ok(terms)
}

/// λ*(x), the probabilistic critic target.
pub fn critic_target(
    model: &ForwardModel,
    controller: &RandomizedController,
    critic: &CriticModel,
    ideal: &IdealSpec,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(critic_target_terms(model, controller, critic, ideal, x)?.total())
}
