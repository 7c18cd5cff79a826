//! Gaussian radial basis function networks.
//!
//! A network maps `x ∈ ℝᵈ` to `weights · [ψ(x); 1]`, where
//! `ψⱼ(x) = exp[-(x - μⱼ)ᵀ Pⱼ (x - μⱼ)]` and the trailing constant is present
//! only when the network carries a bias column. The same type backs the
//! forward-model nets, the action network and the critic.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{check_spd, quad_form};

#[derive(Debug, Clone, PartialEq)]
pub struct RbfNetwork {
    centers: Vec<DVector<f64>>,
    width_precisions: Vec<DMatrix<f64>>,
    weights: DMatrix<f64>,
    has_bias: bool,
}

/// Basis values and their derivatives with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisActivation {
    pub values: DVector<f64>,
    /// `num_bases × d`, row `j` is `∂ψⱼ/∂x`.
    pub input_jacobian: DMatrix<f64>,
}

impl RbfNetwork {
    /// Builds a network with zero output weights.
    pub fn new(
        centers: Vec<DVector<f64>>,
        width_precisions: Vec<DMatrix<f64>>,
        output_dim: usize,
        has_bias: bool,
    ) -> Result<Self> {
        let cols = centers.len() + usize::from(has_bias);
        Self::with_weights(
            centers,
            width_precisions,
            DMatrix::zeros(output_dim, cols),
            has_bias,
        )
    }

    pub fn with_weights(
        centers: Vec<DVector<f64>>,
        width_precisions: Vec<DMatrix<f64>>,
        weights: DMatrix<f64>,
        has_bias: bool,
    ) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidInput("RBF network needs at least one basis".into()));
        }
        check_dim("rbf width count", centers.len(), width_precisions.len())?;
        let d = centers[0].len();
        for (c, p) in centers.iter().zip(&width_precisions) {
            check_dim("rbf center dim", d, c.len())?;
            check_dim("rbf width rows", d, p.nrows())?;
            check_dim("rbf width cols", d, p.ncols())?;
            check_spd(p, "rbf width precision")?;
        }
        check_dim(
            "rbf weight columns",
            centers.len() + usize::from(has_bias),
            weights.ncols(),
        )?;
        Ok(Self {
            centers,
            width_precisions,
            weights,
            has_bias,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_bases(&self) -> usize {
        self.centers.len()
    }

    pub fn has_bias(&self) -> bool {
        self.has_bias
    }

    /// Number of inputs feeding each output unit.
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn width_precisions(&self) -> &[DMatrix<f64>] {
        &self.width_precisions
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: DMatrix<f64>) -> Result<()> {
        check_dim("rbf weight rows", self.output_dim(), weights.nrows())?;
        check_dim("rbf weight columns", self.fan_in(), weights.ncols())?;
        self.weights = weights;
        Ok(())
    }

    /// Weights flattened row-major, the layout the optimiser works on.
    pub fn flat_weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.weights.len(), self.weights.transpose().iter().cloned())
    }

    pub fn set_flat_weights(&mut self, flat: &DVector<f64>) -> Result<()> {
        check_dim("rbf flat weights", self.weights.len(), flat.len())?;
        self.weights = DMatrix::from_row_slice(self.output_dim(), self.fan_in(), flat.as_slice());
        Ok(())
    }

    pub fn basis_eval(&self, x: &DVector<f64>) -> Result<BasisActivation> {
        check_dim("rbf input", self.input_dim(), x.len())?;
        let m = self.num_bases();
        let mut values = DVector::zeros(m);
        let mut input_jacobian = DMatrix::zeros(m, x.len());
        for (j, (c, p)) in self.centers.iter().zip(&self.width_precisions).enumerate() {
            let diff = x - c;
            let value = (-quad_form(p, &diff)).exp();
            values[j] = value;
            // ∂/∂x exp(-dᵀPd) = -2 exp(-dᵀPd) dᵀP  (P symmetric)
            let row = (p * &diff).transpose() * (-2.0 * value);
            input_jacobian.set_row(j, &row);
        }
        Ok(BasisActivation {
            values,
            input_jacobian,
        })
    }

    /// Basis values followed by the bias input when present.
    pub fn features(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let act = self.basis_eval(x)?;
        Ok(self.extend_with_bias(act.values))
    }

    fn extend_with_bias(&self, values: DVector<f64>) -> DVector<f64> {
        if self.has_bias {
            let m = values.len();
            values.resize_vertically(m + 1, 1.0)
        } else {
            values
        }
    }

    pub fn output(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.weights * self.features(x)?)
    }

    /// Output and its Jacobian with respect to the input
    /// (`output_dim × d`).
    pub fn net_eval(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let act = self.basis_eval(x)?;
        let m = self.num_bases();
        let jacobian = self.weights.columns(0, m) * &act.input_jacobian;
        let output = &self.weights * self.extend_with_bias(act.values);
        Ok((output, jacobian))
    }

    /// Samples every weight from `N(0, 1/fan_in)`, deterministically per seed.
    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (self.fan_in() as f64).sqrt();
        let (rows, cols) = self.weights.shape();
        // row-major draw order, independent of nalgebra's storage layout
        let mut draws = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let z: f64 = StandardNormal.sample(&mut rng);
            draws.push(std * z);
        }
        self.weights = DMatrix::from_row_slice(rows, cols, &draws);
    }
}

/// Centers and width matrices of a basis layout.
pub type Layout = (Vec<DVector<f64>>, Vec<DMatrix<f64>>);

/// Uniform grid of centres over the box `[x_low, x_high]` with isotropic
/// widths.
///
/// With `count` centres per axis the grid spacing along axis `i` is
/// `(x_high[i] - x_low[i]) / (count - 1)`; the width scale is
/// `width_scale × (smallest spacing)` and each precision is `scale⁻² · I`.
/// A single centre sits at the midpoint and takes the box width as spacing.
pub fn place_centers(
    x_low: &DVector<f64>,
    x_high: &DVector<f64>,
    count: usize,
    width_scale: f64,
) -> Result<Layout> {
    if count == 0 {
        return Err(Error::InvalidInput("center count must be at least 1".into()));
    }
    check_dim("place_centers bounds", x_low.len(), x_high.len())?;
    if x_low.is_empty() || x_low.iter().zip(x_high.iter()).any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidInput("center bounds must satisfy low < high".into()));
    }
    if !(width_scale > 0.0 && width_scale.is_finite()) {
        return Err(Error::InvalidInput("width scale must be positive".into()));
    }
    let d = x_low.len();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let (lo, hi) = (x_low[i], x_high[i]);
            if count == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                let step = (hi - lo) / (count - 1) as f64;
                (0..count).map(|k| lo + k as f64 * step).collect()
            }
        })
        .collect();
    let spacing = (0..d)
        .map(|i| {
            let span = x_high[i] - x_low[i];
            if count == 1 {
                span
            } else {
                span / (count - 1) as f64
            }
        })
        .fold(f64::INFINITY, f64::min);
    let scale = width_scale * spacing;
    let precision = DMatrix::identity(d, d) / (scale * scale);

    let total = count.pow(d as u32);
    let mut centers = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut c = DVector::zeros(d);
        // last axis varies fastest
        for i in (0..d).rev() {
            c[i] = axes[i][rem % count];
            rem /= count;
        }
        centers.push(c);
    }
    let widths = vec![precision; total];
    Ok((centers, widths))
}
