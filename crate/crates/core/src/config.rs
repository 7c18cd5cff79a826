//! Experiment configuration as flat `section.key=value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Vector-valued keys
//! take comma-separated components; a single component is broadcast where a
//! dimension is known. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::action::{ControlMode, SolveOptions};
use crate::error::{Error, Result};
use crate::plant::{PlantSpec, PAPER_BENCHMARK};
use crate::sysid::FitConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SysidConfig {
    pub samples: usize,
    pub holdout: usize,
    pub x_low: DVector<f64>,
    pub x_high: DVector<f64>,
    pub u_low: DVector<f64>,
    pub u_high: DVector<f64>,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub x0: DVector<f64>,
    pub steps: usize,
    pub seeds: usize,
    pub seed_base: u64,
    pub mode: ControlMode,
    /// Half-width of the band used for settling.
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub plant_preset: String,
    pub noise_variance: f64,
    pub sysid: SysidConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let one = |v: f64| DVector::from_element(1, v);
        Self {
            seed: 7,
            plant_preset: PAPER_BENCHMARK.to_string(),
            noise_variance: 0.01,
            sysid: SysidConfig {
                samples: 2000,
                holdout: 500,
                x_low: one(-4.0),
                x_high: one(4.0),
                u_low: one(-3.0),
                u_high: one(3.0),
                fit: FitConfig::benchmark(),
            },
            train: TrainConfig::benchmark(),
            eval: EvalConfig {
                x0: one(2.0),
                steps: 50,
                seeds: 10,
                seed_base: 1000,
                mode: ControlMode::Mean,
                band: 0.3,
            },
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| Error::Config(format!("{key}: '{v}' is not a number")))?;
    if !x.is_finite() {
        return Err(Error::Config(format!("{key}: value must be finite")));
    }
    Ok(x)
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: '{v}' is not a non-negative integer")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: '{v}' is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn parse_vec(key: &str, v: &str) -> Result<DVector<f64>> {
    let parts = v
        .split(',')
        .map(|p| parse_f64(key, p.trim()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(parts))
}

fn parse_mode(key: &str, v: &str) -> Result<ControlMode> {
    match v {
        "mean" => Ok(ControlMode::Mean),
        "sample" => Ok(ControlMode::Sample),
        _ => Err(Error::Config(format!("{key}: expected mean or sample, got '{v}'"))),
    }
}

fn fmt_vec(v: &DVector<f64>) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn mode_str(mode: ControlMode) -> &'static str {
    match mode {
        ControlMode::Mean => "mean",
        ControlMode::Sample => "sample",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.sysid;
        let t = &mut self.train;
        let e = &mut self.eval;
        match key {
            "seed" => self.seed = parse_u64(key, v)?,
            "plant.preset" => self.plant_preset = v.to_string(),
            "plant.noise_variance" => self.noise_variance = parse_f64(key, v)?,
            "sysid.samples" => s.samples = parse_usize(key, v)?,
            "sysid.holdout" => s.holdout = parse_usize(key, v)?,
            "sysid.x_low" => s.x_low = parse_vec(key, v)?,
            "sysid.x_high" => s.x_high = parse_vec(key, v)?,
            "sysid.u_low" => s.u_low = parse_vec(key, v)?,
            "sysid.u_high" => s.u_high = parse_vec(key, v)?,
            "sysid.h_bases" => s.fit.h_bases = parse_usize(key, v)?,
            "sysid.g_bases" => s.fit.g_bases = parse_usize(key, v)?,
            "sysid.width_scale" => s.fit.width_scale = parse_f64(key, v)?,
            "sysid.h_bias" => s.fit.h_bias = parse_bool(key, v)?,
            "sysid.g_bias" => s.fit.g_bias = parse_bool(key, v)?,
            "train.num_states" => t.num_states = parse_usize(key, v)?,
            "train.state_low" => t.state_low = parse_vec(key, v)?,
            "train.state_high" => t.state_high = parse_vec(key, v)?,
            "train.cycles" => t.cycles = parse_usize(key, v)?,
            "train.scg_max_iter" => t.scg_max_iter = parse_usize(key, v)?,
            "train.tol_objective" => t.tol_objective = parse_f64(key, v)?,
            "train.tol_weights" => t.tol_weights = parse_f64(key, v)?,
            "train.action_bases" => t.action_bases = parse_usize(key, v)?,
            "train.critic_bases" => t.critic_bases = parse_usize(key, v)?,
            "train.width_scale" => t.width_scale = parse_f64(key, v)?,
            "train.action_bias" => t.action_bias = parse_bool(key, v)?,
            "train.critic_bias" => t.critic_bias = parse_bool(key, v)?,
            "train.max_solve_failures" => t.max_solve_failures = parse_f64(key, v)?,
            "train.check_gradients" => t.check_gradients = parse_bool(key, v)?,
            "control.gamma_init" => {
                let g = parse_vec(key, v)?;
                t.gamma_init = DMatrix::from_diagonal(&g);
            }
            "control.tol" => t.solve.tol = parse_f64(key, v)?,
            "control.max_iter" => t.solve.max_iter = parse_usize(key, v)?,
            "control.damping" => t.solve.damping = parse_f64(key, v)?,
            "control.ideal_tracks_gamma" => t.ideal_tracks_gamma = parse_bool(key, v)?,
            "eval.x0" => e.x0 = parse_vec(key, v)?,
            "eval.steps" => e.steps = parse_usize(key, v)?,
            "eval.seeds" => e.seeds = parse_usize(key, v)?,
            "eval.seed_base" => e.seed_base = parse_u64(key, v)?,
            "eval.mode" => e.mode = parse_mode(key, v)?,
            "eval.band" => e.band = parse_f64(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Validates ranges and the plant preset, and copies the global seed
    /// into the training config.
    fn finish(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        let plant = self.plant()?;
        let n = plant.state_dim();
        let r = plant.control_dim();
        let broadcast = |v: &mut DVector<f64>, dim: usize, key: &str| -> Result<()> {
            if v.len() == 1 && dim > 1 {
                *v = DVector::from_element(dim, v[0]);
            }
            if v.len() != dim {
                return Err(Error::Config(format!("{key}: expected {dim} components, got {}", v.len())));
            }
            Ok(())
        };
        broadcast(&mut self.sysid.x_low, n, "sysid.x_low")?;
        broadcast(&mut self.sysid.x_high, n, "sysid.x_high")?;
        broadcast(&mut self.sysid.u_low, r, "sysid.u_low")?;
        broadcast(&mut self.sysid.u_high, r, "sysid.u_high")?;
        broadcast(&mut self.train.state_low, n, "train.state_low")?;
        broadcast(&mut self.train.state_high, n, "train.state_high")?;
        broadcast(&mut self.eval.x0, n, "eval.x0")?;
        let mut gamma = self.train.gamma_init.diagonal();
        broadcast(&mut gamma, r, "control.gamma_init")?;
        if gamma.iter().any(|g| *g <= 0.0) {
            return Err(Error::Config("control.gamma_init must be positive".into()));
        }
        self.train.gamma_init = DMatrix::from_diagonal(&gamma);
        self.sysid.fit.x_low = self.sysid.x_low.clone();
        self.sysid.fit.x_high = self.sysid.x_high.clone();

        if self.sysid.samples == 0 {
            return Err(Error::Config("sysid.samples must be positive".into()));
        }
        if self.sysid.fit.h_bases == 0 || self.sysid.fit.g_bases == 0 {
            return Err(Error::Config("sysid basis counts must be positive".into()));
        }
        let t = &self.train;
        if t.num_states == 0 || t.action_bases == 0 || t.critic_bases == 0 {
            return Err(Error::Config("train counts must be positive".into()));
        }
        if !(t.tol_objective > 0.0 && t.tol_weights > 0.0) {
            return Err(Error::Config("train tolerances must be positive".into()));
        }
        if !(t.width_scale > 0.0 && self.sysid.fit.width_scale > 0.0) {
            return Err(Error::Config("width scales must be positive".into()));
        }
        if !(0.0..=1.0).contains(&t.max_solve_failures) {
            return Err(Error::Config("train.max_solve_failures must lie in [0, 1]".into()));
        }
        if !(t.solve.tol > 0.0 && t.solve.damping > 0.0 && t.solve.damping <= 1.0) {
            return Err(Error::Config("control.tol must be positive and control.damping in (0, 1]".into()));
        }
        if self.eval.band <= 0.0 {
            return Err(Error::Config("eval.band must be positive".into()));
        }
        Ok(self)
    }

    pub fn plant(&self) -> Result<PlantSpec> {
        if self.noise_variance < 0.0 {
            return Err(Error::Config("plant.noise_variance must be non-negative".into()));
        }
        PlantSpec::from_preset(&self.plant_preset, self.noise_variance).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn solve_options(&self) -> SolveOptions {
        self.train.solve.clone()
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let s = &self.sysid;
        let t = &self.train;
        let e = &self.eval;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("plant.preset", self.plant_preset.clone());
        kv("plant.noise_variance", self.noise_variance.to_string());
        kv("sysid.samples", s.samples.to_string());
        kv("sysid.holdout", s.holdout.to_string());
        kv("sysid.x_low", fmt_vec(&s.x_low));
        kv("sysid.x_high", fmt_vec(&s.x_high));
        kv("sysid.u_low", fmt_vec(&s.u_low));
        kv("sysid.u_high", fmt_vec(&s.u_high));
        kv("sysid.h_bases", s.fit.h_bases.to_string());
        kv("sysid.g_bases", s.fit.g_bases.to_string());
        kv("sysid.width_scale", s.fit.width_scale.to_string());
        kv("sysid.h_bias", s.fit.h_bias.to_string());
        kv("sysid.g_bias", s.fit.g_bias.to_string());
        kv("train.num_states", t.num_states.to_string());
        kv("train.state_low", fmt_vec(&t.state_low));
        kv("train.state_high", fmt_vec(&t.state_high));
        kv("train.cycles", t.cycles.to_string());
        kv("train.scg_max_iter", t.scg_max_iter.to_string());
        kv("train.tol_objective", t.tol_objective.to_string());
        kv("train.tol_weights", t.tol_weights.to_string());
        kv("train.action_bases", t.action_bases.to_string());
        kv("train.critic_bases", t.critic_bases.to_string());
        kv("train.width_scale", t.width_scale.to_string());
        kv("train.action_bias", t.action_bias.to_string());
        kv("train.critic_bias", t.critic_bias.to_string());
        kv("train.max_solve_failures", t.max_solve_failures.to_string());
        kv("train.check_gradients", t.check_gradients.to_string());
        kv("control.gamma_init", fmt_vec(&t.gamma_init.diagonal()));
        kv("control.tol", t.solve.tol.to_string());
        kv("control.max_iter", t.solve.max_iter.to_string());
        kv("control.damping", t.solve.damping.to_string());
        kv("control.ideal_tracks_gamma", t.ideal_tracks_gamma.to_string());
        kv("eval.x0", fmt_vec(&e.x0));
        kv("eval.steps", e.steps.to_string());
        kv("eval.seeds", e.seeds.to_string());
        kv("eval.seed_base", e.seed_base.to_string());
        kv("eval.mode", mode_str(e.mode).to_string());
        kv("eval.band", e.band.to_string());
        out
    }
}
