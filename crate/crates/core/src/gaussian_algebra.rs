//! Closed-form manipulation of unnormalised Gaussian quadratics.
//!
//! Every Gaussian factor here is written `exp[-(x - m)ᵀ P (x - m)]` with no
//! ½ in the exponent. A "covariance" in this convention is just `P⁻¹`; the
//! corresponding normalised density has sampling covariance `P⁻¹ / 2`.
//!
//! The completing-the-square identity in the control variable is the
//! plus-sign form
//!
//! ```text
//! (h + g u - z)ᵀ A (h + g u - z) + (u - û)ᵀ Γ⁻¹ (u - û) = (u - H)ᵀ Ω (u - H) + c
//! ```
//!
//! which is the only form consistent with `Ω = gᵀ A g + Γ⁻¹` and
//! `H = Ω⁻¹ [gᵀ A (z - h) + Γ⁻¹ û]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{check_spd, quad_form, spd_inverse, spd_solve, symmetrize};

/// An unnormalised Gaussian factor `exp[-(x - mean)ᵀ precision (x - mean)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianQuadratic {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl GaussianQuadratic {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        check_dim("gaussian precision rows", mean.len(), precision.nrows())?;
        check_dim("gaussian precision cols", mean.len(), precision.ncols())?;
        check_spd(&precision, "gaussian precision")?;
        Ok(Self { mean, precision })
    }

    pub fn scalar(mean: f64, precision: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, precision),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// The quadratic form `(x - m)ᵀ P (x - m)` (the negated exponent).
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        quad_form(&self.precision, &(x - &self.mean))
    }
}

/// Result of completing the square in the control variable.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedSquare {
    /// Ω
    pub omega: DMatrix<f64>,
    /// H, the centre of the completed square.
    pub center: DVector<f64>,
    /// c, the u-independent remainder.
    pub constant: f64,
}

impl CompletedSquare {
    /// ϝ = exp(-c)
    pub fn digamma(&self) -> f64 {
        (-self.constant).exp()
    }

    /// `(u - H)ᵀ Ω (u - H) + c`
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        quad_form(&self.omega, &(u - &self.center)) + self.constant
    }
}

/// Sum of two quadratics rewritten as one quadratic plus a constant:
///
/// `q1(x) + q2(x) = combined(x) + (m₁ - m₂)ᵀ (P₁⁻¹ + P₂⁻¹)⁻¹ (m₁ - m₂)`.
pub fn combine_quadratics(
    q1: &GaussianQuadratic,
    q2: &GaussianQuadratic,
) -> Result<(GaussianQuadratic, f64)> {
    check_dim("combine_quadratics", q1.dim(), q2.dim())?;
    let precision = symmetrize(&(&q1.precision + &q2.precision));
    let rhs = &q1.precision * &q1.mean + &q2.precision * &q2.mean;
    let mean = spd_solve(&precision, &rhs, "combined precision")?;

    let cov_sum = spd_inverse(&q1.precision, "first precision")?
        + spd_inverse(&q2.precision, "second precision")?;
    let diff = &q1.mean - &q2.mean;
    let residual = diff.dot(&spd_solve(&symmetrize(&cov_sum), &diff, "covariance sum")?);

    Ok((GaussianQuadratic::new(mean, precision)?, residual))
}

/// Completes the square of
/// `(h + g u - z)ᵀ A (h + g u - z) + (u - û)ᵀ Γ⁻¹ (u - û)` in `u`.
///
/// `g` is `n × r`, `a_precision` is `n × n` and `gamma_precision` is `r × r`.
pub fn complete_square_in_control(
    h: &DVector<f64>,
    g: &DMatrix<f64>,
    z: &DVector<f64>,
    a_precision: &DMatrix<f64>,
    gamma_precision: &DMatrix<f64>,
    u_hat: &DVector<f64>,
) -> Result<CompletedSquare> {
    let n = h.len();
    let r = u_hat.len();
    check_dim("complete_square g rows", n, g.nrows())?;
    check_dim("complete_square g cols", r, g.ncols())?;
    check_dim("complete_square z", n, z.len())?;
    check_dim("complete_square A", n, a_precision.nrows())?;
    check_dim("complete_square Γ⁻¹", r, gamma_precision.nrows())?;
    check_spd(a_precision, "A = (Σ + γ)⁻¹")?;
    check_spd(gamma_precision, "Γ⁻¹")?;

    let gt_a = g.transpose() * a_precision;
    let omega = symmetrize(&(&gt_a * g + gamma_precision));
    let offset = z - h;
    let rhs = &gt_a * &offset + gamma_precision * u_hat;
    let chol = omega
        .clone()
        .cholesky()
        .ok_or(Error::NotSpd("Ω (completed square)"))?;
    let center = chol.solve(&rhs);
    let constant = quad_form(a_precision, &offset) + quad_form(gamma_precision, u_hat)
        - quad_form(&omega, &center);
    if !constant.is_finite() {
        return Err(Error::NonFinite("completed-square constant".into()));
    }
    Ok(CompletedSquare {
        omega,
        center,
        constant,
    })
}

/// Expectation of `offset + linear_map · x` under the normalised version of
/// `q`. Only the mean matters, so the ½-factor convention is irrelevant here.
pub fn gaussian_linear_moment(
    q: &GaussianQuadratic,
    linear_map: &DMatrix<f64>,
    offset: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("linear moment map cols", q.dim(), linear_map.ncols())?;
    check_dim("linear moment offset", linear_map.nrows(), offset.len())?;
    Ok(offset + linear_map * &q.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn m(rows: usize, cols: usize, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, xs)
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        symmetrize(&(&b * b.transpose() + DMatrix::identity(d, d) * 0.5))
    }

    fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
    }

    // Golden-section line minimiser used as an independent numeric oracle.
    fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - ratio * (hi - lo);
        let mut d = lo + ratio * (hi - lo);
        for _ in 0..200 {
            if f(c) < f(d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - ratio * (hi - lo);
            d = lo + ratio * (hi - lo);
        }
        f(0.5 * (lo + hi))
    }

    #[test]
    fn combine_symmetric_case() {
        let q = GaussianQuadratic::scalar(0.0, 1.0).unwrap();
        let (c, residual) = combine_quadratics(&q, &q).unwrap();
        assert_eq!(c.mean()[0], 0.0);
        assert_eq!(c.precision()[(0, 0)], 2.0);
        assert_eq!(residual, 0.0);
    }

    #[test]
    fn combine_shifted_scalar() {
        let q1 = GaussianQuadratic::scalar(1.0, 1.0).unwrap();
        let q2 = GaussianQuadratic::scalar(0.0, 1.0).unwrap();
        let (c, residual) = combine_quadratics(&q1, &q2).unwrap();
        assert_relative_eq!(c.mean()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(c.precision()[(0, 0)], 2.0);
        assert_relative_eq!(residual, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn combine_pointwise_identity_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q1 = GaussianQuadratic::new(random_vec(&mut rng, 2, 2.0), random_spd(&mut rng, 2)).unwrap();
        let q2 = GaussianQuadratic::new(random_vec(&mut rng, 2, 2.0), random_spd(&mut rng, 2)).unwrap();
        let (c, residual) = combine_quadratics(&q1, &q2).unwrap();
        for _ in 0..100 {
            let x = random_vec(&mut rng, 2, 5.0);
            let lhs = q1.value(&x) + q2.value(&x);
            let rhs = c.value(&x) + residual;
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn combine_residual_is_numeric_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let q1 = GaussianQuadratic::new(random_vec(&mut rng, 1, 3.0), random_spd(&mut rng, 1)).unwrap();
            let q2 = GaussianQuadratic::new(random_vec(&mut rng, 1, 3.0), random_spd(&mut rng, 1)).unwrap();
            let (_, residual) = combine_quadratics(&q1, &q2).unwrap();
            let sum = |x: f64| q1.value(&v(&[x])) + q2.value(&v(&[x]));
            let numeric = golden_min(sum, -20.0, 20.0);
            assert!((numeric - residual).abs() < 1e-8, "{numeric} vs {residual}");
        }
        // d = 2: nested line searches
        let q1 = GaussianQuadratic::new(random_vec(&mut rng, 2, 2.0), random_spd(&mut rng, 2)).unwrap();
        let q2 = GaussianQuadratic::new(random_vec(&mut rng, 2, 2.0), random_spd(&mut rng, 2)).unwrap();
        let (_, residual) = combine_quadratics(&q1, &q2).unwrap();
        let inner = |a: f64| {
            golden_min(
                |b| q1.value(&v(&[a, b])) + q2.value(&v(&[a, b])),
                -20.0,
                20.0,
            )
        };
        let numeric = golden_min(inner, -20.0, 20.0);
        assert!((numeric - residual).abs() < 1e-8, "{numeric} vs {residual}");
    }

    #[test]
    fn combine_rejects_bad_input() {
        let q1 = GaussianQuadratic::scalar(0.0, 1.0).unwrap();
        let q2 = GaussianQuadratic::new(v(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            combine_quadratics(&q1, &q2),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(GaussianQuadratic::scalar(0.0, -1.0).is_err());
        assert!(GaussianQuadratic::new(v(&[0.0, 0.0]), m(2, 2, &[1.0, 0.3, 0.0, 1.0])).is_err());
    }

    #[test]
    fn complete_square_vanishing_constant() {
        let h = v(&[0.7]);
        let cs = complete_square_in_control(
            &h,
            &m(1, 1, &[2.0]),
            &h,
            &m(1, 1, &[1.0]),
            &m(1, 1, &[1.0]),
            &v(&[0.0]),
        )
        .unwrap();
        assert_eq!(cs.center[0], 0.0);
        assert_eq!(cs.constant, 0.0);
        assert_eq!(cs.digamma(), 1.0);
    }

    #[test]
    fn complete_square_worked_scalar() {
        let cs = complete_square_in_control(
            &v(&[1.0]),
            &m(1, 1, &[2.0]),
            &v(&[0.0]),
            &m(1, 1, &[1.0]),
            &m(1, 1, &[1.0]),
            &v(&[0.0]),
        )
        .unwrap();
        assert_relative_eq!(cs.omega[(0, 0)], 5.0);
        assert_relative_eq!(cs.center[0], -0.4, epsilon = 1e-15);
        assert_relative_eq!(cs.constant, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn complete_square_rejects_non_spd() {
        let r = complete_square_in_control(
            &v(&[1.0]),
            &m(1, 1, &[2.0]),
            &v(&[0.0]),
            &m(1, 1, &[-1.0]),
            &m(1, 1, &[1.0]),
            &v(&[0.0]),
        );
        assert!(matches!(r, Err(Error::NotSpd(_))));
    }

    fn check_square_identity(seed: u64, n: usize, r: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_vec(&mut rng, n, 2.0);
        let g = DMatrix::from_fn(n, r, |_, _| rng.random_range(-3.0..3.0));
        let z = random_vec(&mut rng, n, 2.0);
        let a = random_spd(&mut rng, n);
        let gp = random_spd(&mut rng, r);
        let u_hat = random_vec(&mut rng, r, 1.0);
        let cs = complete_square_in_control(&h, &g, &z, &a, &gp, &u_hat).unwrap();
        for _ in 0..1000 {
            let u = random_vec(&mut rng, r, 4.0);
            let e = &h + &g * &u - &z;
            let lhs = quad_form(&a, &e) + quad_form(&gp, &(&u - &u_hat));
            let rhs = cs.value(&u);
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
                "n={n} r={r}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn complete_square_pointwise_identity() {
        for (seed, (n, r)) in [(1, 1), (2, 1), (2, 2)].into_iter().enumerate() {
            check_square_identity(seed as u64, n, r);
        }
    }

    #[test]
    fn linear_moment_examples() {
        let q0 = GaussianQuadratic::new(v(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let out = gaussian_linear_moment(&q0, &DMatrix::identity(2, 2), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(out, v(&[0.0, 0.0]));

        let q = GaussianQuadratic::new(v(&[1.0, 2.0]), DMatrix::identity(2, 2)).unwrap();
        let out = gaussian_linear_moment(&q, &m(2, 2, &[2.0, 0.0, 0.0, 3.0]), &v(&[1.0, 1.0])).unwrap();
        assert_eq!(out, v(&[3.0, 7.0]));
    }

    #[test]
    fn linear_moment_matches_quadrature() {
        // mean 0.5, precision 3 → normalised variance 1/6
        let q = GaussianQuadratic::scalar(0.5, 3.0).unwrap();
        let closed = gaussian_linear_moment(&q, &m(1, 1, &[4.0]), &v(&[-2.0])).unwrap()[0];
        assert_eq!(closed, 0.0);

        let (lo, hi, steps) = (-10.0, 10.0, 20_000);
        let dx = (hi - lo) / steps as f64;
        let (mut mass, mut moment) = (0.0, 0.0);
        for i in 0..=steps {
            let x = lo + i as f64 * dx;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            let density = (-q.value(&v(&[x]))).exp();
            mass += w * density;
            moment += w * density * (-2.0 + 4.0 * x);
        }
        assert!((moment / mass - closed).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn combine_is_symmetric(
            m1 in -5.0..5.0f64, m2 in -5.0..5.0f64,
            p1 in 0.05..20.0f64, p2 in 0.05..20.0f64,
        ) {
            let q1 = GaussianQuadratic::scalar(m1, p1).unwrap();
            let q2 = GaussianQuadratic::scalar(m2, p2).unwrap();
            let (a, ra) = combine_quadratics(&q1, &q2).unwrap();
            let (b, rb) = combine_quadratics(&q2, &q1).unwrap();
            prop_assert!((a.mean()[0] - b.mean()[0]).abs() <= 1e-12 * a.mean()[0].abs().max(1.0));
            prop_assert!((a.precision()[(0, 0)] - b.precision()[(0, 0)]).abs() <= 1e-12);
            prop_assert!((ra - rb).abs() <= 1e-12 * ra.abs().max(1.0));
        }

        #[test]
        fn complete_square_identity_holds(seed in 0u64..10_000, dims in 0usize..3) {
            let (n, r) = [(1, 1), (2, 1), (2, 2)][dims];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_vec(&mut rng, n, 2.0);
            let g = DMatrix::from_fn(n, r, |_, _| rng.random_range(-3.0..3.0));
            let z = random_vec(&mut rng, n, 2.0);
            let a = random_spd(&mut rng, n);
            let gp = random_spd(&mut rng, r);
            let u_hat = random_vec(&mut rng, r, 1.0);
            let cs = complete_square_in_control(&h, &g, &z, &a, &gp, &u_hat).unwrap();
            let u = random_vec(&mut rng, r, 4.0);
            let e = &h + &g * &u - &z;
            let lhs = quad_form(&a, &e) + quad_form(&gp, &(&u - &u_hat));
            prop_assert!((lhs - cs.value(&u)).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }
}
