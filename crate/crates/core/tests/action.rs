mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use probdhp::action::{optimality_residual, sample_control, update_gamma, SolveMethod};
use probdhp::{solve_optimal_control, ControlMode, ForwardModel, IdealSpec, RbfNetwork, SolveOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn zero_critic(n: usize) -> probdhp::CriticModel {
    let net = RbfNetwork::new(vec![DVector::zeros(n)], vec![DMatrix::identity(n, n)], n, false).unwrap();
    critic(net)
}

#[test]
fn worked_scalar_control() {
    // h = 1, g = 2, Σ = Γ = 0.01: u* = -(4·100 + 100)⁻¹ · 2·100 · 1
    let model = constant_model(1.0, 2.0, 0.01);
    let ctrl = controller(constant_net(0.0), 0.01);
    let ideal = IdealSpec::regulation(1, m1(0.01)).unwrap();
    let rep = solve_optimal_control(&model, &ctrl, &zero_critic(1), &ideal, &s1(0.0), &SolveOptions::default()).unwrap();
    assert!(rep.converged);
    assert!(rep.iterations <= 1);
    assert!((rep.u_star[0] + 0.4).abs() <= 1e-12);
    let r = optimality_residual(&model, &ctrl, &zero_critic(1), &ideal, &s1(0.0), &rep.u_star).unwrap();
    assert!(r.norm() <= 1e-12);
}

/// `-(gᵀ Σ⁻¹ g + Γ⁻¹)⁻¹ gᵀ Σ⁻¹ h`, via a plain LU solve.
fn closed_form(h: &DVector<f64>, g: &DMatrix<f64>, sigma: &DMatrix<f64>, gamma: &DMatrix<f64>) -> DVector<f64> {
    let si = sigma.clone().try_inverse().unwrap();
    let gi = gamma.clone().try_inverse().unwrap();
    let lhs = g.transpose() * &si * g + gi;
    -lhs.lu().solve(&(g.transpose() * si * h)).unwrap()
}

#[test]
fn zero_critic_matches_closed_form_in_several_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    use rand::Rng;
    for (n, r) in [(1, 1), (2, 1), (2, 2), (3, 2)] {
        let h_w = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let g_w = DMatrix::from_fn(n * r, 2, |_, _| rng.random_range(-1.0..1.0));
        let centers = vec![DVector::zeros(n)];
        let widths = vec![DMatrix::identity(n, n) * 0.3];
        let h_net = RbfNetwork::with_weights(centers.clone(), widths.clone(), h_w, true).unwrap();
        let g_net = RbfNetwork::with_weights(centers, widths, g_w, true).unwrap();
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.1..0.1));
        let sigma = &b * b.transpose() + DMatrix::identity(n, n) * 0.02;
        let model = ForwardModel::new(h_net, g_net, sigma.clone()).unwrap();
        let gamma = DMatrix::identity(r, r) * 0.05;
        let u_net = RbfNetwork::new(vec![DVector::zeros(n)], vec![DMatrix::identity(n, n)], r, true).unwrap();
        let ctrl = probdhp::RandomizedController::new(u_net, gamma.clone()).unwrap();
        let ideal = IdealSpec::regulation(n, gamma.clone()).unwrap();
        for _ in 0..5 {
            let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let rep = solve_optimal_control(&model, &ctrl, &zero_critic(n), &ideal, &x, &SolveOptions::default())
                .unwrap();
            let expected = closed_form(&model.h(&x).unwrap(), &model.g(&x).unwrap(), &sigma, &gamma);
            assert!(rep.converged);
            assert!((rep.u_star - &expected).amax() <= 1e-10 * expected.amax().max(1.0));
        }
    }
}

#[test]
fn nonzero_critic_solution_zeroes_the_residual() {
    let model = shaped_model(0.01);
    let ctrl = controller(constant_net(0.0), 1e-3);
    let crit = critic(scalar_net(&[-2.0, 0.0, 2.0], 0.5, &[-30.0, 15.0, 40.0], None));
    let ideal = IdealSpec::regulation(1, m1(0.01)).unwrap();
    for &x in &[-3.5, -1.0, 0.0, 0.8, 3.2] {
        let rep = solve_optimal_control(&model, &ctrl, &crit, &ideal, &s1(x), &SolveOptions::default()).unwrap();
        assert!(rep.converged, "x = {x}: {rep:?}");
        let r = optimality_residual(&model, &ctrl, &crit, &ideal, &s1(x), &rep.u_star).unwrap();
        assert!(r.norm() <= 1e-8);
    }
}

#[test]
fn stiff_scalar_problem_falls_back_to_bracketing() {
    // A large critic weight makes the damped fixed point oscillate.
    let model = constant_model(0.0, 3.0, 0.01);
    let ctrl = controller(constant_net(0.0), 1e-4);
    let crit = critic(scalar_net(&[0.0], 0.2, &[5000.0], None));
    let ideal = IdealSpec::regulation(1, m1(0.01)).unwrap();
    let opts = SolveOptions {
        max_iter: 20,
        ..SolveOptions::default()
    };
    let rep = solve_optimal_control(&model, &ctrl, &crit, &ideal, &s1(0.0), &opts).unwrap();
    assert!(rep.converged);
    let r = optimality_residual(&model, &ctrl, &crit, &ideal, &s1(0.0), &rep.u_star).unwrap();
    assert!(r.norm() <= 1e-6, "{rep:?}");
    assert_eq!(rep.method, SolveMethod::Bracketed);
}

#[test]
fn gamma_is_the_mean_squared_residual() {
    let g = update_gamma(&[s1(0.1), s1(-0.1)]).unwrap();
    assert!((g[(0, 0)] - 0.01).abs() < 1e-15);
    let g = update_gamma(&[DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 2.0])]).unwrap();
    assert!((g - DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]))).amax() < 1e-15);
    assert!(update_gamma(&[]).is_err());
}

#[test]
fn mean_mode_returns_the_network_output() {
    let net = scalar_net(&[-1.0, 1.0], 0.5, &[0.3, -0.2], Some(0.05));
    let ctrl = controller(net.clone(), 0.04);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for &x in &[-2.0, 0.0, 1.3] {
        let u = sample_control(&ctrl, &s1(x), ControlMode::Mean, &mut rng).unwrap();
        assert_eq!(u, net.output(&s1(x)).unwrap());
    }
}

#[test]
fn sampled_controls_have_covariance_gamma() {
    let ctrl = controller(constant_net(0.5), 0.04);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 40_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| sample_control(&ctrl, &s1(0.0), ControlMode::Sample, &mut rng).unwrap()[0])
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // standard errors: 0.001 for the mean, 0.0003 for the variance
    assert!((mean - 0.5).abs() < 0.005);
    assert!((var - 0.04).abs() < 0.0015);
}
