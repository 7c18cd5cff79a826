//! The true stochastic plant `x_t = h̃(x_{t-1}) + g̃(x_{t-1}) u_t + ε_t`.
//!
//! Noise is sampled with ordinary covariance semantics. Each step draws from
//! its own ChaCha stream keyed by `(seed, step)`, so two rollouts with the
//! same seed see the same noise sequence whatever the policy does.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::cholesky_factor;

pub type StateFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type GainFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

pub const PAPER_BENCHMARK: &str = "paper-benchmark";

#[derive(Clone)]
pub struct PlantSpec {
    name: String,
    state_dim: usize,
    control_dim: usize,
    h_true: StateFn,
    g_true: GainFn,
    noise_covariance: Option<DMatrix<f64>>,
    noise_factor: Option<DMatrix<f64>>,
}

impl fmt::Debug for PlantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("noise_covariance", &self.noise_covariance)
            .finish()
    }
}

impl PlantSpec {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        control_dim: usize,
        h_true: StateFn,
        g_true: GainFn,
        noise_covariance: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let noise_factor = match &noise_covariance {
            Some(cov) => {
                check_dim("noise covariance", state_dim, cov.nrows())?;
                Some(cholesky_factor(cov, "noise covariance")?)
            }
            None => None,
        };
        Ok(Self {
            name: name.into(),
            state_dim,
            control_dim,
            h_true,
            g_true,
            noise_covariance,
            noise_factor,
        })
    }

    /// `x_t = sin(x) + cos(3x) + (2 + cos(x)) u_t + ε_t`, `ε_t ~ N(0, variance)`.
    pub fn paper_benchmark(noise_variance: f64) -> Result<Self> {
        let noise = if noise_variance > 0.0 {
            Some(DMatrix::from_element(1, 1, noise_variance))
        } else {
            None
        };
        Self::new(
            PAPER_BENCHMARK,
            1,
            1,
            Arc::new(|x: &DVector<f64>| DVector::from_element(1, x[0].sin() + (3.0 * x[0]).cos())),
            Arc::new(|x: &DVector<f64>| DMatrix::from_element(1, 1, 2.0 + x[0].cos())),
            noise,
        )
    }

    pub fn from_preset(name: &str, noise_variance: f64) -> Result<Self> {
        match name {
            PAPER_BENCHMARK => Self::paper_benchmark(noise_variance),
            other => Err(Error::Config(format!("unknown plant preset '{other}'"))),
        }
    }

    pub fn without_noise(mut self) -> Self {
        self.noise_covariance = None;
        self.noise_factor = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn noise_covariance(&self) -> Option<&DMatrix<f64>> {
        self.noise_covariance.as_ref()
    }

    /// Noise-free successor `h̃(x) + g̃(x) u`.
    pub fn mean_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("plant state", self.state_dim, x.len())?;
        check_dim("plant control", self.control_dim, u.len())?;
        Ok((self.h_true)(x) + (self.g_true)(x) * u)
    }

    /// One plant step with noise drawn from `rng`.
    pub fn step<R: rand::Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let mean = self.mean_step(x, u)?;
        Ok(match &self.noise_factor {
            Some(l) => {
                let z = standard_normals(rng, self.state_dim);
                mean + l * z
            }
            None => mean,
        })
    }
}

pub fn standard_normals<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// Generator for step `step` of the rollout keyed by `seed`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// x₀ … x_T
    pub states: Vec<DVector<f64>>,
    /// u₁ … u_T
    pub controls: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }
}

/// Closed-loop rollout; `policy` maps `x_{t-1}` to `u_t`.
pub fn simulate<P>(
    spec: &PlantSpec,
    mut policy: P,
    x0: &DVector<f64>,
    steps: usize,
    seed: u64,
) -> Result<Trajectory>
where
    P: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if steps == 0 {
        return Err(Error::InvalidInput("simulation needs at least one step".into()));
    }
    check_dim("initial state", spec.state_dim(), x0.len())?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    states.push(x0.clone());
    for t in 1..=steps {
        let x = &states[t - 1];
        let u = policy(x)?;
        check_dim("policy output", spec.control_dim(), u.len())?;
        let mut rng = step_rng(seed, t as u64);
        let next = spec.step(x, &u, &mut rng)?;
        controls.push(u);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        controls,
        seed,
    })
}
