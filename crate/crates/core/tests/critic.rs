mod common;

use common::*;
use nalgebra::DMatrix;
use probdhp::critic::critic_target_terms;
use probdhp::gaussian_algebra::complete_square_in_control;
use probdhp::{compute_digamma, critic_target, IdealSpec};

fn regulation(gamma_i: f64) -> IdealSpec {
    IdealSpec::regulation(1, m1(gamma_i)).unwrap()
}

/// `min_u A (g u - d)² + P (u - û)²` in closed form for scalars.
fn scalar_square(g: f64, d: f64, a: f64, p: f64, u_hat: f64) -> (f64, f64) {
    let omega = a * g * g + p;
    let center = (a * g * d + p * u_hat) / omega;
    let constant = a * p * (d - g * u_hat).powi(2) / omega;
    (center, constant)
}

#[test]
fn digamma_is_one_when_a_center_sits_on_h() {
    let model = constant_model(0.7, 2.0, 0.01);
    let critic = critic(scalar_net(&[-1.0, 0.7, 3.0], 0.5, &[0.0; 3], None));
    let b = compute_digamma(&model, &critic, &m1(100.0), &s1(0.2), &s1(0.0)).unwrap();
    assert!((b.digamma[1] - 1.0).abs() < 1e-15);
    assert!(b.centers[1][0].abs() < 1e-15);
    assert!(b.digamma[0] < 1.0 && b.digamma[2] < 1.0);
}

#[test]
fn digamma_matches_scalar_closed_form() {
    let sigma = 0.02;
    let model = shaped_model(sigma);
    let centers = [-3.0, -0.5, 1.0, 2.5];
    let p_basis = 0.8;
    let critic = critic(scalar_net(&centers, p_basis, &[0.1; 4], None));
    let gamma_precision = 40.0;
    for &(x, u_hat) in &[(-1.3, 0.4), (0.0, 0.0), (2.2, -0.9)] {
        let h = model.h(&s1(x)).unwrap()[0];
        let g = model.g(&s1(x)).unwrap()[(0, 0)];
        let b = compute_digamma(&model, &critic, &m1(gamma_precision), &s1(x), &s1(u_hat)).unwrap();
        for (l, &z) in centers.iter().enumerate() {
            let a = 1.0 / (sigma + 1.0 / p_basis);
            let (center, constant) = scalar_square(g, z - h, a, gamma_precision, u_hat);
            assert_close(b.digamma[l], (-constant).exp(), 1e-12);
            assert_close(b.centers[l][0], center, 1e-12);
            assert_close(b.omegas[l][(0, 0)], a * g * g + gamma_precision, 1e-12);
        }
    }
}

#[test]
fn completed_square_center_tends_to_u_hat_for_a_tight_controller() {
    let h = s1(1.0);
    let g = m1(2.0);
    let z = s1(-0.5);
    let a = m1(100.0);
    let u_hat = s1(0.3);
    let loose = complete_square_in_control(&h, &g, &z, &a, &m1(1.0), &u_hat).unwrap();
    let tight = complete_square_in_control(&h, &g, &z, &a, &m1(1e6), &u_hat).unwrap();
    assert!((loose.center[0] - 0.3).abs() > 0.1);
    assert!((tight.center[0] - 0.3).abs() < 1e-3);
}

#[test]
fn zero_networks_give_the_state_cost_gradient() {
    let sigma = 0.01;
    let model = shaped_model(sigma);
    let controller = controller(scalar_net(&[0.0], 1.0, &[0.0], Some(0.0)), 0.01);
    let critic = critic(scalar_net(&[0.0, 1.0], 1.0, &[0.0, 0.0], None));
    let ideal = regulation(0.01);
    for &x in &[-2.5, -0.4, 0.0, 1.7] {
        let h = |x: f64| model.h(&s1(x)).unwrap()[0];
        let expected = 2.0 * h(x) / sigma * fd(h, x);
        let got = critic_target(&model, &controller, &critic, &ideal, &s1(x)).unwrap()[0];
        assert_close(got, expected, 1e-7);
    }
}

#[test]
fn worked_scalar_target() {
    // h(0) = 1, h′(0) = 0.5, Σ = 0.01 and zero networks: λ* = 2 · 1 · 100 · 0.5
    let sigma = 0.01;
    let (p, c): (f64, f64) = (1e-4, 50.0);
    let e = (-p * c * c).exp();
    let w = 0.5 / (2.0 * p * c * e);
    let model = probdhp::ForwardModel::new(scalar_net(&[c], p, &[w], Some(1.0 - w * e)), constant_net(0.0), m1(sigma))
        .unwrap();
    let x0 = s1(0.0);
    let pred = model.predict(&x0, &s1(0.0)).unwrap();
    assert_close(pred.h[0], 1.0, 1e-12);
    assert_close(pred.h_prime[(0, 0)], 0.5, 1e-12);

    let controller = controller(constant_net(0.0), 0.01);
    let critic = critic(scalar_net(&[0.0], 1.0, &[0.0], None));
    let lambda = critic_target(&model, &controller, &critic, &regulation(0.01), &x0).unwrap()[0];
    assert_close(lambda, 100.0, 1e-10);
}

#[test]
fn first_three_terms_are_the_partial_cost_gradient() {
    // With χ = 0 the target is d/dx of (x̂(x) - m)² Σ⁻¹ + (û(x) - m_u)² Γ_I⁻¹.
    let sigma = 0.03;
    let gamma_i = 0.05;
    let model = shaped_model(sigma);
    let net = scalar_net(&[-2.0, 0.0, 2.0], 0.4, &[0.3, -0.6, 0.2], Some(0.05));
    let controller = controller(net.clone(), 0.002);
    let critic = critic(scalar_net(&[-1.0, 1.0], 0.5, &[0.0, 0.0], None));
    let ideal = IdealSpec::new(s1(0.25), s1(-0.1), m1(gamma_i)).unwrap();
    let cost = |x: f64| {
        let u = net.output(&s1(x)).unwrap()[0];
        let x_hat = model.mean(&s1(x), &s1(u)).unwrap()[0];
        (x_hat - 0.25).powi(2) / sigma + (u + 0.1).powi(2) / gamma_i
    };
    for &x in &[-3.0, -1.1, 0.3, 2.4] {
        let terms = critic_target_terms(&model, &controller, &critic, &ideal, &s1(x)).unwrap();
        assert_eq!(terms.term4[0], 0.0);
        assert_eq!(terms.term5[0], 0.0);
        let partial = terms.term1[0] + terms.term2[0] + terms.term3[0];
        assert_close(partial, fd(cost, x), 1e-6);
    }
}

#[test]
fn first_three_terms_match_a_monte_carlo_gradient() {
    // Antithetic successor samples shared across both difference points.
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let sigma = 0.04;
    let model = shaped_model(sigma);
    let net = scalar_net(&[-1.0, 1.0], 0.5, &[0.4, -0.3], Some(0.0));
    let controller = controller(net.clone(), 0.01);
    let critic = critic(scalar_net(&[0.0], 0.5, &[0.0], None));
    let ideal = regulation(0.01);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let noise: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let expected_cost = |x: f64| {
        let u = net.output(&s1(x)).unwrap()[0];
        let x_hat = model.mean(&s1(x), &s1(u)).unwrap()[0];
        let sd = (sigma / 2.0).sqrt();
        let state: f64 = noise
            .iter()
            .map(|e| (x_hat + sd * e).powi(2) + (x_hat - sd * e).powi(2))
            .sum::<f64>()
            / (2 * noise.len()) as f64;
        state / sigma + u * u / 0.01
    };
    for &x in &[-1.5, 0.6] {
        let terms = critic_target_terms(&model, &controller, &critic, &ideal, &s1(x)).unwrap();
        let partial = terms.term1[0] + terms.term2[0] + terms.term3[0];
        let mc = (expected_cost(x + 1e-4) - expected_cost(x - 1e-4)) / 2e-4;
        assert_close(partial, mc, 1e-6);
    }
}

#[test]
fn continuation_terms_follow_the_weighted_costate() {
    // One critic basis, scalar: term4 + term5 = ϝ χ (h′ + g′ H + g û′).
    let sigma = 0.02;
    let model = shaped_model(sigma);
    let u_net = scalar_net(&[-1.0, 1.0], 0.5, &[0.2, -0.5], Some(0.1));
    let gamma_c = 0.004;
    let controller = controller(u_net.clone(), gamma_c);
    let (z, p_basis, chi) = (0.3, 0.6, 2.5);
    let critic = critic(scalar_net(&[z], p_basis, &[chi], None));
    let ideal = regulation(0.01);
    for &x in &[-2.0, -0.2, 1.4] {
        let h = |x: f64| model.h(&s1(x)).unwrap()[0];
        let g = |x: f64| model.g(&s1(x)).unwrap()[(0, 0)];
        let u = |x: f64| u_net.output(&s1(x)).unwrap()[0];
        let a = 1.0 / (sigma + 1.0 / p_basis);
        let (center, constant) = scalar_square(g(x), z - h(x), a, 1.0 / gamma_c, u(x));
        let digamma = (-constant).exp();
        let expected = digamma * chi * (fd(h, x) + fd(g, x) * center + g(x) * fd(u, x));
        let terms = critic_target_terms(&model, &controller, &critic, &ideal, &s1(x)).unwrap();
        assert_close(terms.term4[0] + terms.term5[0], expected, 1e-7);
    }
}

#[test]
fn bias_output_propagates_without_a_digamma_factor() {
    let sigma = 0.02;
    let model = shaped_model(sigma);
    let u_net = scalar_net(&[0.0], 0.5, &[0.3], Some(0.0));
    let controller = controller(u_net.clone(), 0.01);
    let b = 1.7;
    let with_bias = critic(scalar_net(&[0.0], 0.5, &[0.0], Some(b)));
    let without = critic(scalar_net(&[0.0], 0.5, &[0.0], None));
    let ideal = regulation(0.01);
    let x = 0.8;
    let diff = critic_target(&model, &controller, &with_bias, &ideal, &s1(x)).unwrap()[0]
        - critic_target(&model, &controller, &without, &ideal, &s1(x)).unwrap()[0];
    let x_hat = |x: f64| {
        let u = u_net.output(&s1(x)).unwrap()[0];
        model.mean(&s1(x), &s1(u)).unwrap()[0]
    };
    assert_close(diff, b * fd(x_hat, x), 1e-7);
}

#[test]
fn non_spd_critic_widths_are_rejected() {
    let model = constant_model(1.0, 1.0, 0.01);
    let critic = critic(scalar_net(&[0.0], 1.0, &[1.0], None));
    let bad_gamma = DMatrix::from_element(1, 1, -1.0);
    assert!(compute_digamma(&model, &critic, &bad_gamma, &s1(0.0), &s1(0.0)).is_err());
}
