mod common;

use common::*;
use probdhp::baseline_dhp::{dhp_critic_target, dhp_optimality_residual, dhp_solve_control, run_dhp_training};
use probdhp::trainer::initial_networks;
use probdhp::{DhpConfig, SolveOptions, TrainConfig};

fn weights(q: f64, r: f64) -> DhpConfig {
    DhpConfig::new(m1(q), m1(r)).unwrap()
}

#[test]
fn zero_networks_give_the_state_cost_gradient() {
    let model = shaped_model(0.01);
    let ctrl = controller(constant_net(0.0), 0.01);
    let crit = critic(scalar_net(&[0.0], 1.0, &[0.0], None));
    let cfg = weights(100.0, 100.0);
    for &x in &[-2.0, 0.3, 1.9] {
        let h = |x: f64| model.h(&s1(x)).unwrap()[0];
        let expected = 2.0 * h(x) * 100.0 * fd(h, x);
        let got = dhp_critic_target(&model, &ctrl, &crit, &s1(x), &cfg).unwrap()[0];
        assert_close(got, expected, 1e-7);
    }
}

#[test]
fn worked_scalar_control() {
    let model = constant_model(1.0, 2.0, 0.01);
    let crit = critic(scalar_net(&[0.0], 1.0, &[0.0], None));
    let rep = dhp_solve_control(&model, &crit, &s1(0.0), &weights(100.0, 100.0), &SolveOptions::default()).unwrap();
    assert!(rep.converged);
    assert!((rep.u_star[0] + 0.4).abs() <= 1e-12);
}

#[test]
fn target_is_the_deterministic_cost_to_go_gradient() {
    // U_d(x̂(x), û(x)) + λ(x̂) · dx̂/dx, with everything differentiated numerically.
    let model = shaped_model(0.02);
    let u_net = scalar_net(&[-1.0, 1.0], 0.5, &[0.3, -0.4], Some(0.1));
    let ctrl = controller(u_net.clone(), 0.01);
    let crit = critic(scalar_net(&[-2.0, 0.5, 2.0], 0.4, &[3.0, -1.5, 2.0], Some(0.2)));
    let (q, r) = (50.0, 80.0);
    let cfg = weights(q, r);
    let x_hat = |x: f64| {
        let u = u_net.output(&s1(x)).unwrap()[0];
        model.mean(&s1(x), &s1(u)).unwrap()[0]
    };
    let cost = |x: f64| {
        let u = u_net.output(&s1(x)).unwrap()[0];
        q * x_hat(x).powi(2) + r * u * u
    };
    for &x in &[-2.5, -0.3, 1.2] {
        let lambda_next = crit.lambda(&s1(x_hat(x))).unwrap()[0];
        let expected = fd(cost, x) + lambda_next * fd(x_hat, x);
        let got = dhp_critic_target(&model, &ctrl, &crit, &s1(x), &cfg).unwrap()[0];
        assert_close(got, expected, 1e-6);
    }
}

#[test]
fn solved_control_is_stationary() {
    let model = shaped_model(0.01);
    let crit = critic(scalar_net(&[-2.0, 0.0, 2.0], 0.5, &[-20.0, 10.0, 25.0], None));
    let cfg = weights(100.0, 100.0);
    for &x in &[-3.0, 0.0, 2.5] {
        let rep = dhp_solve_control(&model, &crit, &s1(x), &cfg, &SolveOptions::default()).unwrap();
        assert!(rep.converged);
        // stationarity of q x̂² + r u² + Λ(x̂), checked against the residual form
        let res = dhp_optimality_residual(&model, &crit, &s1(x), &rep.u_star, &cfg).unwrap();
        assert!(res.norm() <= 1e-8);
    }
}

#[test]
fn matched_weights_use_the_model_noise_and_initial_gamma() {
    let model = constant_model(0.0, 1.0, 0.02);
    let cfg = DhpConfig::matched(&model, &m1(0.01)).unwrap();
    assert_close(cfg.state_weight[(0, 0)], 50.0, 1e-14);
    assert_close(cfg.control_weight[(0, 0)], 100.0, 1e-14);
}

#[test]
fn zero_cycles_return_the_initial_networks() {
    let model = shaped_model(0.01);
    let cfg = TrainConfig {
        cycles: 0,
        ..TrainConfig::benchmark()
    };
    let run = run_dhp_training(&model, &cfg, &DhpConfig::matched(&model, &cfg.gamma_init).unwrap()).unwrap();
    let (ctrl, crit) = initial_networks(&model, &cfg).unwrap();
    assert!(run.phases.is_empty());
    assert_eq!(run.controller, ctrl);
    assert_eq!(run.critic, crit);
    assert_eq!(run.method, probdhp::Method::Dhp);
}
