//! Identification of the Gaussian forward model
//! `s(x_t | u_t, x_{t-1}) = N(h(x_{t-1}) + g(x_{t-1}) u_t, Σ)`.
//!
//! Centres are fixed on a grid, so the model is linear in the weights of both
//! `h` and `g` and a single least-squares solve fits them jointly. `Σ` is the
//! mean outer product of the training residuals.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{floor_eigenvalues, spd_inverse};
use crate::plant::{step_rng, PlantSpec};
use crate::rbf::{place_centers, RbfNetwork};

/// Eigenvalue floor applied to the residual covariance.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Singular values below this fraction of the largest one count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct IdRecord {
    pub x_prev: DVector<f64>,
    pub u: DVector<f64>,
    pub x_next: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdDataset {
    pub records: Vec<IdRecord>,
}

impl IdDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes `x_prev,u,x_next`; multi-dimensional columns get a `_i` suffix.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let Some(first) = self.records.first() else {
            writeln!(out, "x_prev,u,x_next")?;
            return Ok(());
        };
        let names = |stem: &str, d: usize| -> Vec<String> {
            if d == 1 {
                vec![stem.to_string()]
            } else {
                (0..d).map(|i| format!("{stem}_{i}")).collect()
            }
        };
        let mut header = names("x_prev", first.x_prev.len());
        header.extend(names("u", first.u.len()));
        header.extend(names("x_next", first.x_next.len()));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let row: Vec<String> = r
                .x_prev
                .iter()
                .chain(r.u.iter())
                .chain(r.x_next.iter())
                .map(|v| v.to_string())
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Independent uniform excitation `(x, u)` and one plant step per record.
pub fn generate_dataset(
    spec: &PlantSpec,
    num_samples: usize,
    x_range: (&DVector<f64>, &DVector<f64>),
    u_range: (&DVector<f64>, &DVector<f64>),
    seed: u64,
) -> Result<IdDataset> {
    if num_samples == 0 {
        return Err(Error::InvalidInput("identification needs at least one sample".into()));
    }
    check_dim("x range", spec.state_dim(), x_range.0.len())?;
    check_dim("x range", spec.state_dim(), x_range.1.len())?;
    check_dim("u range", spec.control_dim(), u_range.0.len())?;
    check_dim("u range", spec.control_dim(), u_range.1.len())?;
    for (lo, hi) in x_range.0.iter().zip(x_range.1.iter()).chain(u_range.0.iter().zip(u_range.1.iter())) {
        if !(lo < hi) {
            return Err(Error::InvalidInput("excitation ranges must be non-degenerate".into()));
        }
    }
    let uniform = |rng: &mut rand_chacha::ChaCha8Rng, lo: &DVector<f64>, hi: &DVector<f64>| {
        DVector::from_iterator(lo.len(), lo.iter().zip(hi.iter()).map(|(&a, &b)| rng.random_range(a..b)))
    };
    let records = (0..num_samples)
        .map(|i| {
            let mut rng = step_rng(seed, i as u64);
            let x_prev = uniform(&mut rng, x_range.0, x_range.1);
            let u = uniform(&mut rng, u_range.0, u_range.1);
            let x_next = spec.step(&x_prev, &u, &mut rng)?;
            Ok(IdRecord { x_prev, u, x_next })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IdDataset { records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub h_bases: usize,
    pub g_bases: usize,
    pub width_scale: f64,
    /// Box the centres are spread over.
    pub x_low: DVector<f64>,
    pub x_high: DVector<f64>,
    pub h_bias: bool,
    pub g_bias: bool,
}

impl FitConfig {
    pub fn benchmark() -> Self {
        Self {
            h_bases: 15,
            g_bases: 6,
            width_scale: 1.0,
            x_low: DVector::from_element(1, -4.0),
            x_high: DVector::from_element(1, 4.0),
            h_bias: true,
            g_bias: true,
        }
    }
}

/// Everything the critic and action computations need from the model at one
/// state and control.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub x_hat: DVector<f64>,
    pub h: DVector<f64>,
    /// `n × r`
    pub g: DMatrix<f64>,
    /// `n × n`, `∂h/∂x`
    pub h_prime: DMatrix<f64>,
    /// `g_prime[j] = ∂g/∂x_j`, each `n × r`.
    pub g_prime: Vec<DMatrix<f64>>,
}

impl Prediction {
    /// `g′ u` as an `n × n` matrix: column `j` is `(∂g/∂x_j) u`.
    pub fn g_prime_times(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.h.len();
        let mut out = DMatrix::zeros(n, n);
        for (j, gj) in self.g_prime.iter().enumerate() {
            out.set_column(j, &(gj * u));
        }
        out
    }

    /// `∂x̂/∂x` at fixed `u`: `h′ + g′ u`.
    pub fn state_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        &self.h_prime + self.g_prime_times(u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    h_net: RbfNetwork,
    g_net: RbfNetwork,
    sigma: DMatrix<f64>,
    sigma_precision: DMatrix<f64>,
}

impl ForwardModel {
    pub fn new(h_net: RbfNetwork, g_net: RbfNetwork, sigma: DMatrix<f64>) -> Result<Self> {
        let n = h_net.output_dim();
        check_dim("g net input", h_net.input_dim(), g_net.input_dim())?;
        check_dim("h net input", n, h_net.input_dim())?;
        if !g_net.output_dim().is_multiple_of(n) || g_net.output_dim() == 0 {
            return Err(Error::InvalidInput("g net outputs must be a multiple of n".into()));
        }
        check_dim("Σ", n, sigma.nrows())?;
        let sigma_precision = spd_inverse(&sigma, "Σ")?;
        Ok(Self {
            h_net,
            g_net,
            sigma,
            sigma_precision,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.h_net.output_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.g_net.output_dim() / self.state_dim()
    }

    pub fn h_net(&self) -> &RbfNetwork {
        &self.h_net
    }

    pub fn g_net(&self) -> &RbfNetwork {
        &self.g_net
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_precision(&self) -> &DMatrix<f64> {
        &self.sigma_precision
    }

    /// Replaces Σ (used by tests and the oracle to pin a known covariance).
    pub fn with_sigma(self, sigma: DMatrix<f64>) -> Result<Self> {
        Self::new(self.h_net, self.g_net, sigma)
    }

    fn reshape_g(&self, flat: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.state_dim(), self.control_dim(), flat.as_slice())
    }

    pub fn h(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.h_net.output(x)
    }

    pub fn g(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.reshape_g(&self.g_net.output(x)?))
    }

    pub fn mean(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("model control", self.control_dim(), u.len())?;
        Ok(self.h(x)? + self.g(x)? * u)
    }

    pub fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Prediction> {
        let n = self.state_dim();
        let r = self.control_dim();
        check_dim("model control", r, u.len())?;
        let (h, h_prime) = self.h_net.net_eval(x)?;
        let (g_flat, g_jac) = self.g_net.net_eval(x)?;
        let g = self.reshape_g(&g_flat);
        let g_prime = (0..n)
            .map(|j| DMatrix::from_fn(n, r, |i, k| g_jac[(i * r + k, j)]))
            .collect();
        let x_hat = &h + &g * u;
        Ok(Prediction {
            x_hat,
            h,
            g,
            h_prime,
            g_prime,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    pub rms: f64,
    /// Largest absolute residual component: the empirical approximation bound.
    pub max_abs: f64,
}

fn regressor_row(h_net: &RbfNetwork, g_net: &RbfNetwork, x: &DVector<f64>, u: &DVector<f64>) -> Result<Vec<f64>> {
    let fh = h_net.features(x)?;
    let fg = g_net.features(x)?;
    let mut row = Vec::with_capacity(fh.len() + fg.len() * u.len());
    row.extend(fh.iter());
    for &uk in u.iter() {
        row.extend(fg.iter().map(|f| f * uk));
    }
    Ok(row)
}

/// Joint linear least-squares fit of `h` and `g` plus the residual
/// covariance.
pub fn fit_forward_model(data: &IdDataset, cfg: &FitConfig) -> Result<ForwardModel> {
    let first = data
        .records
        .first()
        .ok_or_else(|| Error::InvalidInput("empty identification dataset".into()))?;
    let n = first.x_prev.len();
    let r = first.u.len();
    check_dim("fit center box", n, cfg.x_low.len())?;

    let (hc, hw) = place_centers(&cfg.x_low, &cfg.x_high, cfg.h_bases, cfg.width_scale)?;
    let (gc, gw) = place_centers(&cfg.x_low, &cfg.x_high, cfg.g_bases, cfg.width_scale)?;
    let mut h_net = RbfNetwork::new(hc, hw, n, cfg.h_bias)?;
    let mut g_net = RbfNetwork::new(gc, gw, n * r, cfg.g_bias)?;

    let ph = h_net.fan_in();
    let pg = g_net.fan_in();
    let p = ph + pg * r;
    if data.len() < p {
        return Err(Error::InvalidInput(format!(
            "{} records cannot determine {p} weights per output",
            data.len()
        )));
    }

    let mut phi = DMatrix::zeros(data.len(), p);
    let mut targets = DMatrix::zeros(data.len(), n);
    for (i, rec) in data.records.iter().enumerate() {
        check_dim("record x_prev", n, rec.x_prev.len())?;
        check_dim("record u", r, rec.u.len())?;
        check_dim("record x_next", n, rec.x_next.len())?;
        let row = regressor_row(&h_net, &g_net, &rec.x_prev, &rec.u)?;
        for (k, v) in row.into_iter().enumerate() {
            phi[(i, k)] = v;
        }
        targets.set_row(i, &rec.x_next.transpose());
    }

    let svd = phi.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * s_max)
        .count();
    if rank < p {
        return Err(Error::RankDeficient {
            rank,
            columns: p,
            smallest: s_min,
        });
    }
    let theta = svd
        .solve(&targets, 0.0)
        .map_err(|e| Error::InvalidInput(format!("least squares failed: {e}")))?;

    // theta is p × n; column i holds output i's weights
    let mut wh = DMatrix::zeros(n, ph);
    let mut wg = DMatrix::zeros(n * r, pg);
    for i in 0..n {
        for j in 0..ph {
            wh[(i, j)] = theta[(j, i)];
        }
        for k in 0..r {
            for j in 0..pg {
                wg[(i * r + k, j)] = theta[(ph + k * pg + j, i)];
            }
        }
    }
    h_net.set_weights(wh)?;
    g_net.set_weights(wg)?;

    let residuals = &phi * &theta - &targets;
    let mut sigma = DMatrix::zeros(n, n);
    for row in residuals.row_iter() {
        let e = row.transpose();
        sigma += &e * e.transpose();
    }
    sigma /= data.len() as f64;
    let sigma = floor_eigenvalues(&sigma, SIGMA_FLOOR);

    ForwardModel::new(h_net, g_net, sigma)
}

/// Prediction error of `model` on `data`.
pub fn evaluate_fit(model: &ForwardModel, data: &IdDataset) -> Result<FitDiagnostics> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty evaluation dataset".into()));
    }
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut max_abs = 0.0_f64;
    for rec in &data.records {
        let e = &rec.x_next - model.mean(&rec.x_prev, &rec.u)?;
        sum_sq += e.norm_squared();
        count += e.len();
        max_abs = max_abs.max(e.amax());
    }
    Ok(FitDiagnostics {
        rms: (sum_sq / count as f64).sqrt(),
        max_abs,
    })
}
