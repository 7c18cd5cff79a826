#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use probdhp::{CriticModel, ForwardModel, RandomizedController, RbfNetwork};

pub fn s1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

pub fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Scalar Gaussian RBF network `Σ_j w_j exp(-p (x - c_j)²) [+ b]`.
pub fn scalar_net(centers: &[f64], precision: f64, weights: &[f64], bias: Option<f64>) -> RbfNetwork {
    let mut w = weights.to_vec();
    if let Some(b) = bias {
        w.push(b);
    }
    RbfNetwork::with_weights(
        centers.iter().map(|&c| s1(c)).collect(),
        vec![m1(precision); centers.len()],
        DMatrix::from_row_slice(1, w.len(), &w),
        bias.is_some(),
    )
    .unwrap()
}

pub fn constant_net(value: f64) -> RbfNetwork {
    scalar_net(&[0.0], 1.0, &[0.0], Some(value))
}

/// `h(x) ≡ h`, `g(x) ≡ g`.
pub fn constant_model(h: f64, g: f64, sigma: f64) -> ForwardModel {
    ForwardModel::new(constant_net(h), constant_net(g), m1(sigma)).unwrap()
}

/// A smooth scalar model with state-dependent `h` and `g`.
pub fn shaped_model(sigma: f64) -> ForwardModel {
    let h = scalar_net(&[-2.0, 0.0, 2.0], 0.5, &[-1.1, 0.4, 1.3], None);
    let g = scalar_net(&[-1.0, 1.5], 0.3, &[0.6, -0.4], Some(1.2));
    ForwardModel::new(h, g, m1(sigma)).unwrap()
}

pub fn controller(net: RbfNetwork, gamma: f64) -> RandomizedController {
    RandomizedController::new(net, m1(gamma)).unwrap()
}

pub fn critic(net: RbfNetwork) -> CriticModel {
    CriticModel::new(net).unwrap()
}

/// Central difference of a scalar function.
pub fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5;
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn assert_close(actual: f64, expected: f64, rel: f64) {
    let scale = expected.abs().max(1.0);
    assert!(
        (actual - expected).abs() <= rel * scale,
        "{actual} vs {expected} (rel tol {rel})"
    );
}
