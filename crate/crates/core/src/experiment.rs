//! End-to-end benchmark pieces: identification, training, closed-loop
//! evaluation and the paired comparison, plus their CSV writers.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::action::{sample_control, ControlMode, RandomizedController};
use crate::baseline_dhp::{run_dhp_training, DhpConfig};
use crate::config::{EvalConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::plant::{simulate, step_rng, PlantSpec, Trajectory};
use crate::sysid::{evaluate_fit, fit_forward_model, generate_dataset, FitDiagnostics, ForwardModel, IdDataset};
use crate::trainer::{derive_seed, run_training, Method, Probabilistic, TrainingRun};

const DATASET_TAG: u64 = 10;
const HOLDOUT_TAG: u64 = 11;
const CONTROL_NOISE_TAG: u64 = 12;

#[derive(Debug, Clone)]
pub struct Identification {
    pub model: ForwardModel,
    pub dataset: IdDataset,
    pub train_fit: FitDiagnostics,
    pub holdout_fit: Option<FitDiagnostics>,
}

pub fn identify(cfg: &ExperimentConfig) -> Result<Identification> {
    let plant = cfg.plant()?;
    let s = &cfg.sysid;
    let dataset = generate_dataset(
        &plant,
        s.samples,
        (&s.x_low, &s.x_high),
        (&s.u_low, &s.u_high),
        derive_seed(cfg.seed, DATASET_TAG),
    )?;
    let model = fit_forward_model(&dataset, &s.fit)?;
    let train_fit = evaluate_fit(&model, &dataset)?;
    let holdout_fit = if s.holdout > 0 {
        let holdout = generate_dataset(
            &plant,
            s.holdout,
            (&s.x_low, &s.x_high),
            (&s.u_low, &s.u_high),
            derive_seed(cfg.seed, HOLDOUT_TAG),
        )?;
        Some(evaluate_fit(&model, &holdout)?)
    } else {
        None
    };
    Ok(Identification {
        model,
        dataset,
        train_fit,
        holdout_fit,
    })
}

pub fn train(model: &ForwardModel, cfg: &ExperimentConfig, method: Method) -> Result<TrainingRun> {
    match method {
        Method::Probabilistic => run_training(model, &cfg.train, &Probabilistic),
        Method::Dhp => {
            let dhp = DhpConfig::matched(model, &cfg.train.gamma_init)?;
            run_dhp_training(model, &cfg.train, &dhp)
        }
    }
}

/// Closed-loop rollout of a trained controller. Sampled controls use their
/// own per-step streams, independent of the plant noise.
pub fn rollout(
    plant: &PlantSpec,
    controller: &RandomizedController,
    x0: &DVector<f64>,
    steps: usize,
    seed: u64,
    mode: ControlMode,
) -> Result<Trajectory> {
    let control_seed = derive_seed(seed, CONTROL_NOISE_TAG);
    let mut t = 0u64;
    let policy = |x: &DVector<f64>| {
        t += 1;
        sample_control(controller, x, mode, &mut step_rng(control_seed, t))
    };
    simulate(plant, policy, x0, steps, seed)
}

/// Largest excursion past the origin, measured against the direction of
/// `x₀`. Zero for a trajectory that never crosses.
pub fn peak_overshoot(traj: &Trajectory) -> f64 {
    let x0 = &traj.states[0];
    let norm = x0.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let dir = x0 / norm;
    traj.states
        .iter()
        .map(|x| (-x.dot(&dir)).max(0.0))
        .fold(0.0, f64::max)
}

/// First step from which every state stays strictly inside the band
/// `‖x‖_∞ < band`; `None` if the final state is outside it.
pub fn settling_step(traj: &Trajectory, band: f64) -> Option<usize> {
    let mut settled = None;
    for (t, x) in traj.states.iter().enumerate().rev() {
        if x.amax() < band {
            settled = Some(t);
        } else {
            break;
        }
    }
    settled
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub overshoot: f64,
    pub settling_step: Option<usize>,
    pub final_abs: f64,
}

impl RunSummary {
    pub fn of(method: Method, traj: &Trajectory, band: f64) -> Self {
        Self {
            method,
            seed: traj.seed,
            overshoot: peak_overshoot(traj),
            settling_step: settling_step(traj, band),
            final_abs: traj.states.last().map_or(0.0, |x| x.amax()),
        }
    }

    /// `‖x_t‖_∞ < band` for every `t ≥ from`.
    pub fn regulated_from(&self, from: usize) -> bool {
        self.settling_step.is_some_and(|s| s <= from)
    }
}

pub fn evaluation_seeds(eval: &EvalConfig) -> Vec<u64> {
    (0..eval.seeds as u64).map(|k| eval.seed_base + k).collect()
}

/// Rollouts from `eval.x0` for every evaluation seed.
pub fn evaluate(plant: &PlantSpec, controller: &RandomizedController, eval: &EvalConfig) -> Result<Vec<Trajectory>> {
    if eval.steps == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one step".into()));
    }
    evaluation_seeds(eval)
        .into_par_iter()
        .map(|seed| rollout(plant, controller, &eval.x0, eval.steps, seed, eval.mode))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub prob: Vec<Trajectory>,
    pub dhp: Vec<Trajectory>,
    pub band: f64,
}

impl Comparison {
    pub fn summaries(&self) -> Vec<RunSummary> {
        let prob = self.prob.iter().map(|t| RunSummary::of(Method::Probabilistic, t, self.band));
        let dhp = self.dhp.iter().map(|t| RunSummary::of(Method::Dhp, t, self.band));
        prob.chain(dhp).collect()
    }

    pub fn mean_overshoot(&self, method: Method) -> f64 {
        let trajs = match method {
            Method::Probabilistic => &self.prob,
            Method::Dhp => &self.dhp,
        };
        trajs.iter().map(peak_overshoot).sum::<f64>() / trajs.len().max(1) as f64
    }
}

/// Paired rollouts: both controllers see the same initial state and the same
/// plant noise for each seed.
pub fn compare(
    plant: &PlantSpec,
    prob: &RandomizedController,
    dhp: &RandomizedController,
    eval: &EvalConfig,
) -> Result<Comparison> {
    Ok(Comparison {
        prob: evaluate(plant, prob, eval)?,
        dhp: evaluate(plant, dhp, eval)?,
        band: eval.band,
    })
}

fn columns(prefix: &str, dim: usize) -> Vec<String> {
    if dim == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=dim).map(|i| format!("{prefix}_{i}")).collect()
    }
}

/// `step,x,u,method,seed`: one row per state `x_t`, with `u` the control
/// applied from it (empty on the final row).
pub fn write_trajectories<W: Write>(mut out: W, runs: &[(Method, &Trajectory)]) -> Result<()> {
    let Some((_, first)) = runs.first() else {
        return Err(Error::InvalidInput("no trajectories to write".into()));
    };
    let n = first.states[0].len();
    let r = first.controls.first().map_or(1, |u| u.len());
    let mut header = vec!["step".to_string()];
    header.extend(columns("x", n));
    header.extend(columns("u", r));
    header.push("method".into());
    header.push("seed".into());
    writeln!(out, "{}", header.join(","))?;
    for (method, traj) in runs {
        for (t, x) in traj.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            match traj.controls.get(t) {
                Some(u) => row.extend(u.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), r)),
            }
            row.push(method.to_string());
            row.push(traj.seed.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// `method,seed,overshoot,settling_step,final_abs_x`; `settling_step` is
/// empty when the run never settles.
pub fn write_compare_summary<W: Write>(mut out: W, summaries: &[RunSummary]) -> Result<()> {
    writeln!(out, "method,seed,overshoot,settling_step,final_abs_x")?;
    for s in summaries {
        let settle = s.settling_step.map_or(String::new(), |t| t.to_string());
        writeln!(out, "{},{},{},{},{}", s.method, s.seed, s.overshoot, settle, s.final_abs)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(xs: &[f64]) -> Trajectory {
        Trajectory {
            states: xs.iter().map(|&x| DVector::from_element(1, x)).collect(),
            controls: vec![DVector::zeros(1); xs.len() - 1],
            seed: 3,
        }
    }

    #[test]
    fn overshoot_is_measured_past_the_origin() {
        assert_eq!(peak_overshoot(&traj(&[2.0, 1.0, 0.1])), 0.0);
        assert_eq!(peak_overshoot(&traj(&[2.0, -0.5, 0.2, -0.1])), 0.5);
        assert_eq!(peak_overshoot(&traj(&[-2.0, 0.25, -0.1])), 0.25);
    }

    #[test]
    fn settling() {
        let t = traj(&[2.0, 1.0, 0.2, 0.4, 0.1, 0.0]);
        assert_eq!(settling_step(&t, 0.3), Some(4));
        assert_eq!(settling_step(&traj(&[2.0, 0.1, 0.5]), 0.3), None);
        let s = RunSummary::of(Method::Probabilistic, &t, 0.3);
        assert!(s.regulated_from(4));
        assert!(!s.regulated_from(3));
    }

    #[test]
    fn trajectory_csv_layout() {
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &[(Method::Dhp, &traj(&[1.0, 0.5]))]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "step,x,u,method,seed\n0,1,0,dhp,3\n1,0.5,,dhp,3\n");
    }
}
