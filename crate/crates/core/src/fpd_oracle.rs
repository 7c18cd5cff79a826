//! Scalar quadrature evaluation of the exact one-step FPD quantities.
//!
//! `β(u, x) = ∫ s(x′|u, x) [ln(s/ᴵs) - ln γ(x′)] dx′` is integrated by the
//! trapezoid rule with `s` the normalised Gaussian of mean `x̂ = h + g u` and
//! variance `Σ/2` (the density whose exponent is `-(x′ - x̂)² Σ⁻¹`). The
//! optimal randomized controller is `c*(u|x) ∝ ᴵc(u|x) exp[-β(u, x)]`, so its
//! mode minimises `β(u, x) + (u - m_u)² Γ_I⁻¹`.
//!
//! Everything here exists to check the closed forms used by the critic and
//! action modules, so it only supports `n = r = 1`.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::critic::{CriticModel, IdealSpec};
use crate::error::{Error, Result};
use crate::sysid::ForwardModel;

/// Largest tolerated deviation of the integrated successor density from one.
pub const MASS_TOLERANCE: f64 = 1e-8;

/// Trapezoid grid for the successor-state integral, expressed relative to
/// the successor density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    /// Half-width of the integration window in standard deviations.
    pub half_width_sds: f64,
    /// Number of intervals.
    pub intervals: usize,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self {
            half_width_sds: 10.0,
            intervals: 400,
        }
    }
}

impl QuadratureGrid {
    pub fn refined(self, factor: usize) -> Self {
        Self {
            intervals: self.intervals * factor,
            ..self
        }
    }
}

/// Uniform grid of candidate controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGrid {
    pub low: f64,
    pub high: f64,
    pub spacing: f64,
}

impl ControlGrid {
    pub fn new(low: f64, high: f64, spacing: f64) -> Result<Self> {
        if !(low < high && spacing > 0.0) {
            return Err(Error::InvalidInput("control grid needs low < high and spacing > 0".into()));
        }
        Ok(Self { low, high, spacing })
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let count = ((self.high - self.low) / self.spacing).round() as usize;
        (0..=count).map(move |k| self.low + k as f64 * self.spacing)
    }
}

fn scalar_model(model: &ForwardModel) -> Result<()> {
    if model.state_dim() != 1 || model.control_dim() != 1 {
        return Err(Error::InvalidInput("the quadrature oracle only supports n = r = 1".into()));
    }
    Ok(())
}

fn s1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// `β(u, x)` with an arbitrary continuation `ln γ(x′)`.
pub fn beta(
    model: &ForwardModel,
    ideal: &IdealSpec,
    ln_gamma_next: &dyn Fn(f64) -> Result<f64>,
    u: f64,
    x: f64,
    grid: &QuadratureGrid,
) -> Result<f64> {
    scalar_model(model)?;
    let x_hat = model.mean(&s1(x), &s1(u))?[0];
    let sigma_inv = model.sigma_precision()[(0, 0)];
    let target = ideal.state_mean[0];
    let sd = (0.5 / sigma_inv).sqrt();
    let lo = x_hat - grid.half_width_sds * sd;
    let step = 2.0 * grid.half_width_sds * sd / grid.intervals as f64;
    let norm = (sigma_inv / PI).sqrt();

    let mut mass = 0.0;
    let mut value = 0.0;
    for k in 0..=grid.intervals {
        let xp = lo + k as f64 * step;
        let w = if k == 0 || k == grid.intervals { 0.5 } else { 1.0 };
        let density = norm * (-(xp - x_hat).powi(2) * sigma_inv).exp();
        // ln(s / ᴵs) with both densities sharing Σ
        let log_ratio = 2.0 * (x_hat - target) * sigma_inv * xp - (x_hat * x_hat - target * target) * sigma_inv;
        mass += w * density;
        value += w * density * (log_ratio - ln_gamma_next(xp)?);
    }
    mass *= step;
    value *= step;
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "quadrature window too narrow: successor mass {mass}"
        )));
    }
    Ok(value)
}

fn control_penalty(ideal: &IdealSpec, u: f64) -> f64 {
    (u - ideal.control_mean[0]).powi(2) * ideal.control_precision()[(0, 0)]
}

/// One-step objective `β(u, x) + (u - m_u)² Γ_I⁻¹` with a flat terminal
/// continuation.
pub fn one_step_objective(model: &ForwardModel, ideal: &IdealSpec, u: f64, x: f64, grid: &QuadratureGrid) -> Result<f64> {
    Ok(beta(model, ideal, &|_| Ok(0.0), u, x, grid)? + control_penalty(ideal, u))
}

/// Smallest grid point of `f`; errors when the minimum sits on the boundary.
pub fn grid_argmin(f: &dyn Fn(f64) -> Result<f64>, grid: &ControlGrid) -> Result<f64> {
    let mut best = (f64::NAN, f64::INFINITY);
    let mut first = f64::NAN;
    let mut last = f64::NAN;
    for u in grid.nodes() {
        if first.is_nan() {
            first = u;
        }
        last = u;
        let v = f(u)?;
        if v < best.1 {
            best = (u, v);
        }
    }
    if best.0 == first || best.0 == last {
        return Err(Error::InvalidInput(format!(
            "objective minimum at control grid boundary u = {}; widen the grid",
            best.0
        )));
    }
    Ok(best.0)
}

fn golden_section(f: &dyn Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Mode of the one-step optimal controller: grid argmin refined by golden
/// section.
pub fn one_step_optimal_u(
    model: &ForwardModel,
    ideal: &IdealSpec,
    x: f64,
    grid: &QuadratureGrid,
    controls: &ControlGrid,
) -> Result<f64> {
    let f = |u: f64| one_step_objective(model, ideal, u, x, grid);
    let coarse = grid_argmin(&f, controls)?;
    golden_section(&f, coarse - controls.spacing, coarse + controls.spacing, 1e-12)
}

/// `-ln γ(x′)` reconstructed (up to a constant) from the critic by
/// integrating `λ = χ φ` from 0.
///
/// The integral is tabulated with 5-point Gauss–Legendre per cell and
/// interpolated with cubic Hermite polynomials, using λ itself as the
/// derivative at the nodes.
#[derive(Debug, Clone)]
pub struct CriticPotential {
    low: f64,
    spacing: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    offset: f64,
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

impl CriticPotential {
    pub fn new(critic: &CriticModel, low: f64, high: f64, spacing: f64) -> Result<Self> {
        if critic.net().input_dim() != 1 {
            return Err(Error::InvalidInput("critic potential needs a scalar critic".into()));
        }
        if !(low < 0.0 && high > 0.0 && spacing > 0.0) {
            return Err(Error::InvalidInput("potential range must straddle 0".into()));
        }
        let lambda = |x: f64| -> Result<f64> { Ok(critic.lambda(&s1(x))?[0]) };
        let cells = ((high - low) / spacing).ceil() as usize;
        let mut values = Vec::with_capacity(cells + 1);
        let mut slopes = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        values.push(0.0);
        slopes.push(lambda(low)?);
        for k in 0..cells {
            let a = low + k as f64 * spacing;
            let mid = a + 0.5 * spacing;
            let mut cell = 0.0;
            for (t, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
                cell += w * lambda(mid + 0.5 * spacing * t)?;
            }
            acc += 0.5 * spacing * cell;
            values.push(acc);
            slopes.push(lambda(a + spacing)?);
        }
        let mut pot = Self {
            low,
            spacing,
            values,
            slopes,
            offset: 0.0,
        };
        pot.offset = pot.raw(0.0)?;
        Ok(pot)
    }

    fn raw(&self, x: f64) -> Result<f64> {
        let pos = (x - self.low) / self.spacing;
        let cells = self.values.len() - 1;
        if !(pos >= 0.0 && pos <= cells as f64) {
            return Err(Error::InvalidInput(format!("x = {x} outside the critic potential table")));
        }
        let k = (pos.floor() as usize).min(cells - 1);
        let t = pos - k as f64;
        let (h00, h10, h01, h11) = (
            2.0 * t.powi(3) - 3.0 * t * t + 1.0,
            t.powi(3) - 2.0 * t * t + t,
            -2.0 * t.powi(3) + 3.0 * t * t,
            t.powi(3) - t * t,
        );
        Ok(h00 * self.values[k]
            + h10 * self.spacing * self.slopes[k]
            + h01 * self.values[k + 1]
            + h11 * self.spacing * self.slopes[k + 1])
    }

    /// `∫₀ˣ λ(s) ds`
    pub fn value(&self, x: f64) -> Result<f64> {
        Ok(self.raw(x)? - self.offset)
    }
}

/// `β(u, x)` with the continuation `-ln γ(x′) = potential(x′) + shift`.
pub fn beta_with_critic(
    model: &ForwardModel,
    ideal: &IdealSpec,
    potential: &CriticPotential,
    shift: f64,
    u: f64,
    x: f64,
    grid: &QuadratureGrid,
) -> Result<f64> {
    beta(model, ideal, &|xp| Ok(-(potential.value(xp)? + shift)), u, x, grid)
}

/// Grid argmin over `u` of `β_critic(u, x) + (u - m_u)² Γ_I⁻¹`.
pub fn critic_grid_argmin(
    model: &ForwardModel,
    ideal: &IdealSpec,
    potential: &CriticPotential,
    shift: f64,
    x: f64,
    grid: &QuadratureGrid,
    controls: &ControlGrid,
) -> Result<f64> {
    let f = |u: f64| Ok(beta_with_critic(model, ideal, potential, shift, u, x, grid)? + control_penalty(ideal, u));
    grid_argmin(&f, controls)
}
