//! Alternating critic / action training.
//!
//! Each cycle first fits the critic to frozen targets λ*(x⁽ⁱ⁾) computed with
//! the current action network and the previous critic, then solves the
//! optimality condition at every sampled state and fits the action network to
//! the solutions. Γ is re-estimated from the action-fit residuals at the end
//! of every action phase. Both fits are linear least squares in the output
//! weights and are minimised with scaled conjugate gradients.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::action::{self, update_gamma, RandomizedController, SolveOptions, SolveReport};
use crate::critic::{self, combined_precisions, CriticModel, IdealSpec};
use crate::error::{check_dim, Error, Result};
use crate::rbf::{place_centers, RbfNetwork};
use crate::scg::{scg_minimize, ScgOptions, ScgReport};
use crate::sysid::ForwardModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Probabilistic,
    Dhp,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Probabilistic => "prob",
            Method::Dhp => "dhp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prob" | "probabilistic" => Ok(Method::Probabilistic),
            "dhp" | "conventional" => Ok(Method::Dhp),
            other => Err(Error::Config(format!("unknown method '{other}' (expected prob or dhp)"))),
        }
    }
}

/// The two things that differ between critic schemes: the critic target and
/// the control solve.
pub trait CriticScheme: Sync {
    fn method(&self) -> Method;

    fn critic_target(
        &self,
        model: &ForwardModel,
        controller: &RandomizedController,
        critic: &CriticModel,
        ideal: &IdealSpec,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>>;

    fn solve_control(
        &self,
        model: &ForwardModel,
        controller: &RandomizedController,
        critic: &CriticModel,
        ideal: &IdealSpec,
        x: &DVector<f64>,
        opts: &SolveOptions,
    ) -> Result<SolveReport>;
}

/// The probabilistic DHP critic.
#[derive(Debug, Clone, Copy, Default)]
pub struct Probabilistic;

impl CriticScheme for Probabilistic {
    fn method(&self) -> Method {
        Method::Probabilistic
    }

    fn critic_target(
        &self,
        model: &ForwardModel,
        controller: &RandomizedController,
        critic: &CriticModel,
        ideal: &IdealSpec,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        critic::critic_target(model, controller, critic, ideal, x)
    }

    fn solve_control(
        &self,
        model: &ForwardModel,
        controller: &RandomizedController,
        critic: &CriticModel,
        ideal: &IdealSpec,
        x: &DVector<f64>,
        opts: &SolveOptions,
    ) -> Result<SolveReport> {
        action::solve_optimal_control(model, controller, critic, ideal, x, opts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_states: usize,
    pub state_low: DVector<f64>,
    pub state_high: DVector<f64>,
    pub cycles: usize,
    pub scg_max_iter: usize,
    pub tol_objective: f64,
    pub tol_weights: f64,
    pub seed: u64,
    pub action_bases: usize,
    pub critic_bases: usize,
    pub width_scale: f64,
    pub action_bias: bool,
    pub critic_bias: bool,
    /// Initial controller covariance, also the ideal control covariance.
    pub gamma_init: DMatrix<f64>,
    pub solve: SolveOptions,
    /// When set, the ideal control covariance follows every Γ update.
    pub ideal_tracks_gamma: bool,
    /// Fraction of failed control solves tolerated in one action phase.
    pub max_solve_failures: f64,
    /// Validate SCG gradients by finite differences at the start of each
    /// phase.
    pub check_gradients: bool,
}

impl TrainConfig {
    pub fn benchmark() -> Self {
        Self {
            num_states: 200,
            state_low: DVector::from_element(1, -4.0),
            state_high: DVector::from_element(1, 4.0),
            cycles: 3,
            scg_max_iter: 10_000,
            tol_objective: 1e-3,
            tol_weights: 1e-3,
            seed: 7,
            action_bases: 15,
            critic_bases: 4,
            width_scale: 1.0,
            action_bias: true,
            critic_bias: false,
            gamma_init: DMatrix::from_element(1, 1, 0.01),
            solve: SolveOptions::default(),
            ideal_tracks_gamma: false,
            max_solve_failures: 0.1,
            check_gradients: false,
        }
    }

    fn validate(&self, model: &ForwardModel) -> Result<()> {
        if self.num_states == 0 || self.action_bases == 0 || self.critic_bases == 0 {
            return Err(Error::Config("training counts must be positive".into()));
        }
        if !(self.tol_objective > 0.0 && self.tol_weights > 0.0) {
            return Err(Error::Config("training tolerances must be positive".into()));
        }
        check_dim("training state range", model.state_dim(), self.state_low.len())?;
        check_dim("training state range", model.state_dim(), self.state_high.len())?;
        check_dim("Γ_init", model.control_dim(), self.gamma_init.nrows())?;
        Ok(())
    }

    fn scg_options(&self) -> ScgOptions {
        ScgOptions {
            max_iter: self.scg_max_iter,
            tol_objective: self.tol_objective,
            tol_weights: self.tol_weights,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Critic,
    Action,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Critic => "critic",
            Phase::Action => "action",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub cycle: usize,
    pub phase: Phase,
    pub scg: ScgReport,
    /// States dropped because the control solve did not converge.
    pub excluded_states: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub method: Method,
    pub states: Vec<DVector<f64>>,
    pub phases: Vec<PhaseRecord>,
    /// Γ after initialisation and after every action phase.
    pub gamma_history: Vec<DMatrix<f64>>,
    pub controller: RandomizedController,
    pub critic: CriticModel,
    pub ideal: IdealSpec,
    /// Number of critic-target evaluations performed.
    pub target_evaluations: usize,
}

impl TrainingRun {
    /// `cycle,phase,iteration,objective,weight_delta`, one row per SCG
    /// iteration.
    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "cycle,phase,iteration,objective,weight_delta")?;
        for p in &self.phases {
            for it in &p.scg.history {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    p.cycle,
                    p.phase.as_str(),
                    it.iteration,
                    it.objective,
                    it.weight_delta
                )?;
            }
        }
        Ok(())
    }
}

/// Decorrelated sub-seed of an experiment seed, keyed by `tag`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_states(cfg: &TrainConfig) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    (0..cfg.num_states)
        .map(|_| {
            DVector::from_iterator(
                cfg.state_low.len(),
                cfg.state_low
                    .iter()
                    .zip(cfg.state_high.iter())
                    .map(|(&lo, &hi)| rng.random_range(lo..hi)),
            )
        })
        .collect()
}

/// Freshly initialised action and critic networks (fan-in scaled Gaussian
/// weights, Γ = Γ_init).
pub fn initial_networks(model: &ForwardModel, cfg: &TrainConfig) -> Result<(RandomizedController, CriticModel)> {
    cfg.validate(model)?;
    let (ac, aw) = place_centers(&cfg.state_low, &cfg.state_high, cfg.action_bases, cfg.width_scale)?;
    let mut action_net = RbfNetwork::new(ac, aw, model.control_dim(), cfg.action_bias)?;
    action_net.init_weights(derive_seed(cfg.seed, 2));
    let (cc, cw) = place_centers(&cfg.state_low, &cfg.state_high, cfg.critic_bases, cfg.width_scale)?;
    let mut critic_net = RbfNetwork::new(cc, cw, model.state_dim(), cfg.critic_bias)?;
    critic_net.init_weights(derive_seed(cfg.seed, 3));
    Ok((
        RandomizedController::new(action_net, cfg.gamma_init.clone())?,
        CriticModel::new(critic_net)?,
    ))
}

/// Sum of squared errors `‖Φ Cᵀ - T‖²` over the row-major flattened `C`.
fn least_squares_objective<'a>(
    features: &'a DMatrix<f64>,
    targets: &'a DMatrix<f64>,
) -> impl Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)> + 'a {
    let outputs = targets.ncols();
    let inputs = features.ncols();
    move |flat: &DVector<f64>| {
        let c = DMatrix::from_row_slice(outputs, inputs, flat.as_slice());
        let err = features * c.transpose() - targets;
        let grad = err.transpose() * features * 2.0;
        let flat_grad = DVector::from_iterator(grad.len(), grad.transpose().iter().cloned());
        Ok((err.norm_squared(), flat_grad))
    }
}

fn feature_matrix(net: &RbfNetwork, states: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let mut phi = DMatrix::zeros(states.len(), net.fan_in());
    for (i, x) in states.iter().enumerate() {
        phi.set_row(i, &net.features(x)?.transpose());
    }
    Ok(phi)
}

fn stack_rows(rows: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        m.set_row(i, &r.transpose());
    }
    m
}

/// Compares an analytic gradient with central finite differences at a few
/// random points; returns the worst relative error.
pub fn gradient_check<F>(objective: &F, dim: usize, points: usize, seed: u64) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let w = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let (_, grad) = objective(&w)?;
        for k in 0..dim {
            let h = 1e-5 * w[k].abs().max(1.0);
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += h;
            wm[k] -= h;
            let fd = (objective(&wp)?.0 - objective(&wm)?.0) / (2.0 * h);
            let scale = grad.amax().max(1e-8);
            worst = worst.max((fd - grad[k]).abs() / scale);
        }
    }
    Ok(worst)
}

fn fit_weights(
    net: &mut RbfNetwork,
    phi: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    cfg: &TrainConfig,
    check_seed: u64,
) -> Result<ScgReport> {
    let objective = least_squares_objective(phi, targets);
    if cfg.check_gradients {
        let worst = gradient_check(&objective, net.weights().len(), 5, check_seed)?;
        if worst > 1e-4 {
            return Err(Error::Training(format!("gradient check failed: relative error {worst:e}")));
        }
    }
    let (w, report) = scg_minimize(&objective, &net.flat_weights(), &cfg.scg_options())?;
    net.set_flat_weights(&w)?;
    Ok(report)
}

/// Critic phase: freeze targets, then fit χ.
pub fn train_critic_phase(
    run: &mut TrainingRun,
    model: &ForwardModel,
    scheme: &dyn CriticScheme,
    cfg: &TrainConfig,
    cycle: usize,
) -> Result<()> {
    let frozen_critic = run.critic.clone();
    let targets: Vec<DVector<f64>> = run
        .states
        .par_iter()
        .map(|x| scheme.critic_target(model, &run.controller, &frozen_critic, &run.ideal, x))
        .collect::<Result<_>>()?;
    run.target_evaluations += targets.len();

    let phi = feature_matrix(run.critic.net(), &run.states)?;
    let t = stack_rows(&targets, model.state_dim());
    let scg = fit_weights(
        run.critic.net_mut(),
        &phi,
        &t,
        cfg,
        derive_seed(cfg.seed, 100 + cycle as u64),
    )?;
    debug!(
        "{} cycle {cycle} critic: {} -> {} in {} iterations",
        scheme.method(),
        scg.initial_objective,
        scg.final_objective,
        scg.iterations
    );
    run.phases.push(PhaseRecord {
        cycle,
        phase: Phase::Critic,
        scg,
        excluded_states: 0,
    });
    Ok(())
}

/// Action phase: solve for u* at every state, fit W, re-estimate Γ.
pub fn train_action_phase(
    run: &mut TrainingRun,
    model: &ForwardModel,
    scheme: &dyn CriticScheme,
    cfg: &TrainConfig,
    cycle: usize,
) -> Result<()> {
    let reports: Vec<SolveReport> = run
        .states
        .par_iter()
        .map(|x| {
            let opts = SolveOptions {
                initial: Some(run.controller.mean(x)?),
                ..cfg.solve.clone()
            };
            scheme.solve_control(model, &run.controller, &run.critic, &run.ideal, x, &opts)
        })
        .collect::<Result<_>>()?;

    let mut states = Vec::with_capacity(reports.len());
    let mut solutions = Vec::with_capacity(reports.len());
    for (x, rep) in run.states.iter().zip(&reports) {
        if rep.converged {
            states.push(x.clone());
            solutions.push(rep.u_star.clone());
        } else {
            warn!(
                "control solve did not converge at x = {:?} (residual {:e})",
                x.as_slice(),
                rep.residual_norm
            );
        }
    }
    let excluded = reports.len() - states.len();
    if excluded as f64 > cfg.max_solve_failures * reports.len() as f64 {
        return Err(Error::Training(format!(
            "{excluded} of {} control solves failed in cycle {cycle}",
            reports.len()
        )));
    }
    if states.is_empty() {
        return Err(Error::Training("no converged control solves".into()));
    }

    let phi = feature_matrix(run.controller.net(), &states)?;
    let t = stack_rows(&solutions, model.control_dim());
    let scg = fit_weights(
        run.controller.net_mut(),
        &phi,
        &t,
        cfg,
        derive_seed(cfg.seed, 200 + cycle as u64),
    )?;

    let residuals = states
        .iter()
        .zip(&solutions)
        .map(|(x, u)| Ok(u - run.controller.mean(x)?))
        .collect::<Result<Vec<_>>>()?;
    let gamma = update_gamma(&residuals)?;
    run.controller.set_gamma(gamma.clone())?;
    if cfg.ideal_tracks_gamma {
        run.ideal = IdealSpec::new(run.ideal.state_mean.clone(), run.ideal.control_mean.clone(), gamma.clone())?;
    }
    run.gamma_history.push(gamma);
    debug!(
        "{} cycle {cycle} action: {} -> {} in {} iterations, Γ = {:?}",
        scheme.method(),
        scg.initial_objective,
        scg.final_objective,
        scg.iterations,
        run.controller.gamma().as_slice()
    );
    run.phases.push(PhaseRecord {
        cycle,
        phase: Phase::Action,
        scg,
        excluded_states: excluded,
    });
    Ok(())
}

/// Initialises both networks and alternates critic and action phases for
/// `cfg.cycles` cycles.
pub fn run_training(model: &ForwardModel, cfg: &TrainConfig, scheme: &dyn CriticScheme) -> Result<TrainingRun> {
    let (controller, critic) = initial_networks(model, cfg)?;
    let ideal = IdealSpec::regulation(model.state_dim(), cfg.gamma_init.clone())?;
    // validates Σ + γ_l once up front
    combined_precisions(model.sigma(), &critic)?;
    let mut run = TrainingRun {
        method: scheme.method(),
        states: sample_states(cfg),
        phases: Vec::with_capacity(2 * cfg.cycles),
        gamma_history: vec![controller.gamma().clone()],
        controller,
        critic,
        ideal,
        target_evaluations: 0,
    };
    for cycle in 1..=cfg.cycles {
        train_critic_phase(&mut run, model, scheme, cfg, cycle)?;
        train_action_phase(&mut run, model, scheme, cfg, cycle)?;
        info!(
            "{} cycle {cycle}/{} done, Γ = {:?}",
            scheme.method(),
            cfg.cycles,
            run.controller.gamma().as_slice()
        );
    }
    Ok(run)
}
