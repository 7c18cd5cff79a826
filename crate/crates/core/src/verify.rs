//! Named self-checks of the closed forms against independent evaluations,
//! run by `probdhp verify`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::{solve_optimal_control, SolveOptions};
use crate::baseline_dhp::{dhp_solve_control, DhpConfig};
use crate::config::ExperimentConfig;
use crate::critic::{CriticModel, IdealSpec};
use crate::error::{Error, Result};
use crate::experiment::identify;
use crate::fpd_oracle::{critic_grid_argmin, one_step_optimal_u, beta, ControlGrid, CriticPotential, QuadratureGrid};
use crate::gaussian_algebra::{combine_quadratics, complete_square_in_control, GaussianQuadratic};
use crate::linalg::quad_form;
use crate::rbf::{place_centers, RbfNetwork};
use crate::scg::{scg_minimize, ScgOptions};
use crate::sysid::ForwardModel;
use crate::trainer::{derive_seed, gradient_check, initial_networks};
use crate::RandomizedController;

pub const CHECK_NAMES: [&str; 11] = [
    "square-identity",
    "combine-identity",
    "rbf-jacobian",
    "model-derivatives",
    "closed-form-control",
    "dhp-closed-form",
    "scg-quadratic",
    "fit-gradient",
    "quadrature-beta",
    "oracle-one-step",
    "oracle-critic-argmin",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Test hook: evaluates the completing-the-square identity with the
    /// control term subtracted, which must make `square-identity` fail.
    pub inject_sign_fault: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Runs the selected checks (all of them when `selection` is empty).
/// Unknown names are a configuration error.
pub fn run_checks(cfg: &ExperimentConfig, selection: &[String], opts: VerifyOptions) -> Result<Vec<CheckResult>> {
    for name in selection {
        if !CHECK_NAMES.contains(&name.as_str()) {
            return Err(Error::Config(format!(
                "unknown check '{name}' (known: {})",
                CHECK_NAMES.join(", ")
            )));
        }
    }
    let wanted: Vec<&'static str> = CHECK_NAMES
        .iter()
        .copied()
        .filter(|n| selection.is_empty() || selection.iter().any(|s| s == n))
        .collect();
    let mut model = None;
    let mut results = Vec::with_capacity(wanted.len());
    for name in wanted {
        let start = Instant::now();
        let outcome = run_one(name, cfg, opts, &mut model);
        let (passed, detail) = match outcome {
            Ok(pair) => pair,
            Err(e) => (false, format!("error: {e}")),
        };
        results.push(CheckResult {
            name,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(results)
}

pub fn render_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:<6}  {:>8}  detail\n", "check", "result", "seconds");
    for r in results {
        out.push_str(&format!(
            "{:<width$}  {:<6}  {:>8.3}  {}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        ));
    }
    out
}

type Outcome = Result<(bool, String)>;

fn run_one(name: &str, cfg: &ExperimentConfig, opts: VerifyOptions, model: &mut Option<ForwardModel>) -> Outcome {
    let seed = derive_seed(cfg.seed, 400);
    match name {
        "square-identity" => square_identity(seed, opts.inject_sign_fault),
        "combine-identity" => combine_identity(seed),
        "rbf-jacobian" => rbf_jacobian(seed),
        "model-derivatives" => model_derivatives(identified(cfg, model)?),
        "closed-form-control" => closed_form_control(identified(cfg, model)?, cfg),
        "dhp-closed-form" => dhp_closed_form(),
        "scg-quadratic" => scg_quadratic(),
        "fit-gradient" => fit_gradient(seed),
        "quadrature-beta" => quadrature_beta(identified(cfg, model)?),
        "oracle-one-step" => oracle_one_step(),
        "oracle-critic-argmin" => oracle_critic_argmin(identified(cfg, model)?, cfg),
        _ => unreachable!("names are validated up front"),
    }
}

fn identified<'a>(cfg: &ExperimentConfig, slot: &'a mut Option<ForwardModel>) -> Result<&'a ForwardModel> {
    if slot.is_none() {
        *slot = Some(identify(cfg)?.model);
    }
    Ok(slot.as_ref().expect("just filled"))
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

fn scalar_model(h: f64, g: f64, sigma: f64) -> Result<ForwardModel> {
    let one = |w: f64| -> Result<RbfNetwork> {
        RbfNetwork::with_weights(
            vec![DVector::zeros(1)],
            vec![DMatrix::from_element(1, 1, 1.0)],
            DMatrix::from_row_slice(1, 2, &[0.0, w]),
            true,
        )
    };
    ForwardModel::new(one(h)?, one(g)?, DMatrix::from_element(1, 1, sigma))
}

fn scalar_policy(gamma: f64) -> Result<(RandomizedController, CriticModel)> {
    let net = |bias| {
        RbfNetwork::new(
            vec![DVector::zeros(1)],
            vec![DMatrix::from_element(1, 1, 1.0)],
            1,
            bias,
        )
    };
    Ok((
        RandomizedController::new(net(true)?, DMatrix::from_element(1, 1, gamma))?,
        CriticModel::new(net(false)?)?,
    ))
}

fn square_identity(seed: u64, fault: bool) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for (n, r) in [(1, 1), (2, 1), (2, 2)] {
        for _ in 0..1000 {
            let h = random_vec(&mut rng, n, 2.0);
            let g = DMatrix::from_fn(n, r, |_, _| rng.random_range(-2.0..2.0));
            let z = random_vec(&mut rng, n, 2.0);
            let a = random_spd(&mut rng, n);
            let gp = random_spd(&mut rng, r);
            let u_hat = random_vec(&mut rng, r, 1.0);
            let cs = complete_square_in_control(&h, &g, &z, &a, &gp, &u_hat)?;
            let u = random_vec(&mut rng, r, 3.0);
            let control = quad_form(&gp, &(&u - &u_hat));
            let lhs = quad_form(&a, &(&h + &g * &u - &z)) + if fault { -control } else { control };
            let rhs = cs.value(&u);
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
        }
    }
    Ok((worst <= 1e-10, format!("max rel err {worst:.2e} over 3000 points")))
}

fn combine_identity(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for d in [1, 2] {
        for _ in 0..1000 {
            let q1 = GaussianQuadratic::new(random_vec(&mut rng, d, 2.0), random_spd(&mut rng, d))?;
            let q2 = GaussianQuadratic::new(random_vec(&mut rng, d, 2.0), random_spd(&mut rng, d))?;
            let (c, k) = combine_quadratics(&q1, &q2)?;
            let x = random_vec(&mut rng, d, 3.0);
            let lhs = q1.value(&x) + q2.value(&x);
            let rhs = c.value(&x) + k;
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
    }
    Ok((worst <= 1e-10, format!("max rel err {worst:.2e} over 2000 points")))
}

fn rbf_jacobian(seed: u64) -> Outcome {
    let mut worst = 0.0_f64;
    for d in [1, 2] {
        let lo = DVector::from_element(d, -2.0);
        let hi = DVector::from_element(d, 2.0);
        let (c, w) = place_centers(&lo, &hi, 4, 1.0)?;
        let mut net = RbfNetwork::new(c, w, 2, true)?;
        net.init_weights(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ d as u64);
        for _ in 0..20 {
            let x = random_vec(&mut rng, d, 2.0);
            let (_, jac) = net.net_eval(&x)?;
            worst = worst.max(fd_error(|x| net.output(x), &x, &jac)?);
        }
    }
    Ok((worst < 1e-5, format!("max rel err {worst:.2e}")))
}

/// Relative error of `jac` against central differences of `f` at `x`.
fn fd_error<F>(f: F, x: &DVector<f64>, jac: &DMatrix<f64>) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let step = 1e-6;
    let mut fd = DMatrix::zeros(jac.nrows(), jac.ncols());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += step;
        xm[k] -= step;
        fd.set_column(k, &((f(&xp)? - f(&xm)?) / (2.0 * step)));
    }
    Ok((fd - jac).amax() / jac.amax().max(1.0))
}

fn model_derivatives(model: &ForwardModel) -> Outcome {
    let mut worst = 0.0_f64;
    let u = DVector::from_element(model.control_dim(), 0.3);
    for k in 0..=40 {
        let x = DVector::from_element(model.state_dim(), -4.0 + 0.2 * k as f64);
        let pred = model.predict(&x, &u)?;
        worst = worst.max(fd_error(|x| model.h(x), &x, &pred.h_prime)?);
        worst = worst.max(fd_error(|x| model.mean(x, &u), &x, &pred.state_jacobian(&u))?);
    }
    Ok((worst < 1e-5, format!("max rel err {worst:.2e} for h′ and h′ + g′u")))
}

fn closed_form_control(model: &ForwardModel, cfg: &ExperimentConfig) -> Outcome {
    let opts = SolveOptions::default();
    let worked = scalar_model(1.0, 2.0, 0.01)?;
    let (controller, critic) = scalar_policy(0.01)?;
    let ideal = IdealSpec::regulation(1, DMatrix::from_element(1, 1, 0.01))?;
    let x = DVector::zeros(1);
    let u = solve_optimal_control(&worked, &controller, &critic, &ideal, &x, &opts)?.u_star[0];
    let worked_err = (u + 0.4).abs();

    let (controller, mut critic) = initial_networks(model, &cfg.train)?;
    let zero = DMatrix::zeros(critic.net().weights().nrows(), critic.net().weights().ncols());
    critic.net_mut().set_weights(zero)?;
    let ideal = IdealSpec::regulation(model.state_dim(), cfg.train.gamma_init.clone())?;
    let mut worst = 0.0_f64;
    for k in 0..=16 {
        let x = DVector::from_element(model.state_dim(), -4.0 + 0.5 * k as f64);
        let h = model.h(&x)?;
        let g = model.g(&x)?;
        let gt_s = g.transpose() * model.sigma_precision();
        let m = &gt_s * &g + ideal.control_precision();
        let closed = -m.cholesky().expect("SPD").solve(&(&gt_s * &h));
        let rep = solve_optimal_control(model, &controller, &critic, &ideal, &x, &opts)?;
        worst = worst.max((rep.u_star - closed).amax());
    }
    Ok((
        worked_err <= 1e-12 && worst <= 1e-10,
        format!("worked example err {worked_err:.1e}, identified model max err {worst:.1e}"),
    ))
}

fn dhp_closed_form() -> Outcome {
    let model = scalar_model(1.0, 2.0, 0.01)?;
    let (_, critic) = scalar_policy(0.01)?;
    let cfg = DhpConfig::new(DMatrix::from_element(1, 1, 100.0), DMatrix::from_element(1, 1, 100.0))?;
    let u = dhp_solve_control(&model, &critic, &DVector::zeros(1), &cfg, &SolveOptions::default())?.u_star[0];
    let err = (u + 0.4).abs();
    Ok((err <= 1e-12, format!("u* = {u}, err {err:.1e}")))
}

fn scg_quadratic() -> Outcome {
    let target = DVector::from_column_slice(&[1.0, -2.0, 3.5, 0.25]);
    let f = |w: &DVector<f64>| {
        let e = w - &target;
        Ok((e.norm_squared(), e * 2.0))
    };
    let opts = ScgOptions {
        max_iter: 50,
        tol_objective: 1e-14,
        tol_weights: 1e-10,
    };
    let (w, rep) = scg_minimize(f, &DVector::zeros(4), &opts)?;
    let err = (w - target).amax();
    let monotone = rep.history.windows(2).all(|p| p[1].objective <= p[0].objective + 1e-12);
    Ok((
        err < 1e-6 && rep.iterations <= 50 && monotone,
        format!("err {err:.1e} in {} iterations", rep.iterations),
    ))
}

fn fit_gradient(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = DMatrix::from_fn(30, 5, |_, _| rng.random_range(0.0..1.0));
    let targets = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
    let objective = move |flat: &DVector<f64>| {
        let c = DMatrix::from_row_slice(2, 5, flat.as_slice());
        let err = &phi * c.transpose() - &targets;
        let grad = err.transpose() * &phi * 2.0;
        Ok((err.norm_squared(), DVector::from_iterator(10, grad.transpose().iter().cloned())))
    };
    let worst = gradient_check(&objective, 10, 5, seed)?;
    Ok((worst < 1e-4, format!("max rel err {worst:.2e} at 5 points")))
}

fn quadrature_beta(model: &ForwardModel) -> Outcome {
    let ideal = IdealSpec::regulation(1, DMatrix::from_element(1, 1, 0.01))?;
    let grid = QuadratureGrid::default();
    let flat = |_: f64| Ok(0.0);
    let (x, u) = (2.0, -0.4);
    let coarse = beta(model, &ideal, &flat, u, x, &grid)?;
    let fine = beta(model, &ideal, &flat, u, x, &grid.refined(10))?;
    let x_hat = model.mean(&DVector::from_element(1, x), &DVector::from_element(1, u))?[0];
    let closed = x_hat * x_hat * model.sigma_precision()[(0, 0)];
    let moment = (coarse - closed).abs() / closed.abs().max(1.0);
    let refine = (coarse - fine).abs() / fine.abs().max(1e-300);
    Ok((
        moment <= 1e-8 && refine < 1e-6,
        format!("moment err {moment:.1e}, refinement diff {refine:.1e}"),
    ))
}

fn oracle_one_step() -> Outcome {
    let model = scalar_model(1.0, 2.0, 0.01)?;
    let ideal = IdealSpec::regulation(1, DMatrix::from_element(1, 1, 0.01))?;
    let u = one_step_optimal_u(
        &model,
        &ideal,
        0.0,
        &QuadratureGrid::default(),
        &ControlGrid::new(-2.0, 2.0, 1e-3)?,
    )?;
    let err = (u + 0.4).abs();
    Ok((err <= 1e-6, format!("u = {u:.9}, err {err:.1e}")))
}

/// The fixed-point solver against the quadrature argmin with a nonzero
/// critic on the identified model.
fn oracle_critic_argmin(model: &ForwardModel, cfg: &ExperimentConfig) -> Outcome {
    if model.state_dim() != 1 || model.control_dim() != 1 {
        return Ok((true, "skipped: oracle is scalar only".into()));
    }
    let (mut controller, mut critic) = initial_networks(model, &cfg.train)?;
    let scaled = critic.net().weights() * 50.0;
    critic.net_mut().set_weights(scaled)?;
    controller.set_gamma(DMatrix::from_element(1, 1, 1e-4))?;
    let ideal = IdealSpec::regulation(1, cfg.train.gamma_init.clone())?;
    let potential = CriticPotential::new(&critic, -20.0, 20.0, 0.01)?;
    let spacing = 1e-3;
    let mut worst = 0.0_f64;
    for k in 0..5 {
        let x = -3.0 + 1.5 * k as f64;
        let rep = solve_optimal_control(
            model,
            &controller,
            &critic,
            &ideal,
            &DVector::from_element(1, x),
            &SolveOptions::default(),
        )?;
        let u = rep.u_star[0];
        let window = ControlGrid::new(u - 0.5 + 0.37 * spacing, u + 0.5, spacing)?;
        let grid_u = critic_grid_argmin(model, &ideal, &potential, 0.0, x, &QuadratureGrid::default(), &window)?;
        worst = worst.max((grid_u - u).abs());
    }
    Ok((
        worst <= 2.0 * spacing,
        format!("max |Δu| {worst:.1e} at 5 states (tolerance {:.0e})", 2.0 * spacing),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algebraic_checks_pass_and_the_fault_is_caught() {
        let cfg = ExperimentConfig::default();
        let names: Vec<String> = ["square-identity", "combine-identity", "dhp-closed-form"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let ok = run_checks(&cfg, &names, VerifyOptions::default()).unwrap();
        assert!(ok.iter().all(|r| r.passed), "{}", render_table(&ok));
        let faulty = run_checks(&cfg, &names[..1], VerifyOptions { inject_sign_fault: true }).unwrap();
        assert!(!faulty[0].passed);
    }

    #[test]
    fn unknown_check_is_a_config_error() {
        let r = run_checks(&ExperimentConfig::default(), &["bogus".to_string()], VerifyOptions::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
