//! `probdhp`: identify, train, simulate, compare and verify from the
//! command line.

mod plot;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use probdhp::archive::{ModelArchive, TrainedPolicy};
use probdhp::config::ExperimentConfig;
use probdhp::experiment::{self, RunSummary};
use probdhp::verify::{self, VerifyOptions};
use probdhp::{ControlMode, Method};

#[derive(Debug, Parser)]
#[command(name = "probdhp", version, about = "Probabilistic DHP adaptive critic experiments")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect plant data, fit the forward model and write a new archive.
    Identify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also export the identification dataset as CSV.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a controller on the archived model and store it in the archive.
    Train {
        /// Overrides the configuration stored in the archive.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value = "training_log.csv")]
        log: PathBuf,
    },
    /// Closed-loop rollout of a trained controller on the plant.
    Simulate {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Initial state, comma separated for vector states.
        #[arg(long)]
        x0: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Paired rollouts of the probabilistic and conventional controllers.
    Compare {
        /// Archive holding the probabilistic policy (and the DHP one unless
        /// `--archive-dhp` is given).
        #[arg(long, alias = "archive")]
        archive_prob: PathBuf,
        #[arg(long)]
        archive_dhp: Option<PathBuf>,
        #[arg(long)]
        x0: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Number of evaluation seeds.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        seed_base: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, default_value = "compare_summary.csv")]
        out: PathBuf,
        /// Also write every paired trajectory.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run the oracle and property checks and print a pass/fail table.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run only the named check (repeatable).
        #[arg(long = "check")]
        checks: Vec<String>,
        /// Test hook: corrupt the sign of the control term in the
        /// completing-the-square check.
        #[arg(long, hide = true)]
        inject_sign_fault: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Prob,
    Dhp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Prob => Method::Probabilistic,
            MethodArg::Dhp => Method::Dhp,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Mean,
    Sample,
}

impl From<ModeArg> for ControlMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Mean => ControlMode::Mean,
            ModeArg::Sample => ControlMode::Sample,
        }
    }
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Ok,
    ChecksFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for bad input (config, files, archives, arguments), 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use probdhp::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Config(_) | E::Io(_) | E::Archive(_) | E::InvalidInput(_)) => 2,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Identify { config, out, data } => identify(&config, &out, data.as_deref()),
        Command::Train {
            config,
            archive,
            method,
            log,
        } => train(config.as_deref(), &archive, method.into(), &log),
        Command::Simulate {
            archive,
            method,
            x0,
            steps,
            seed,
            mode,
            out,
            plot,
        } => simulate(&archive, method.into(), x0, steps, seed, mode, &out, plot.as_deref()),
        Command::Compare {
            archive_prob,
            archive_dhp,
            x0,
            steps,
            seeds,
            seed_base,
            mode,
            out,
            trajectories,
            plot,
        } => compare(
            &archive_prob,
            archive_dhp.as_deref(),
            EvalOverrides {
                x0,
                steps,
                seeds,
                seed_base,
                mode,
            },
            &out,
            trajectories.as_deref(),
            plot.as_deref(),
        ),
        Command::Verify {
            config,
            checks,
            inject_sign_fault,
        } => verify(config.as_deref(), &checks, inject_sign_fault),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).map_err(probdhp::Error::from).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn load_archive(path: &Path) -> anyhow::Result<ModelArchive> {
    ModelArchive::load(path).with_context(|| format!("loading archive {}", path.display()))
}

fn identify(config: &Path, out: &Path, data: Option<&Path>) -> anyhow::Result<Outcome> {
    let cfg = load_config(config)?;
    let id = experiment::identify(&cfg)?;
    if let Some(path) = data {
        let mut w = create(path)?;
        id.dataset.write_csv(&mut w)?;
        w.flush().map_err(probdhp::Error::from)?;
    }
    let sigma = id.model.sigma();
    if sigma.len() == 1 {
        println!("sigma: {:.6}", sigma[(0, 0)]);
    } else {
        println!("sigma:{sigma}");
    }
    println!("train rms: {:.6}", id.train_fit.rms);
    if let Some(h) = &id.holdout_fit {
        println!("holdout rms: {:.6}", h.rms);
    }
    let archive = ModelArchive::new(cfg, id.model);
    archive.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!("archive: {}", out.display());
    Ok(Outcome::Ok)
}

fn train(config: Option<&Path>, archive_path: &Path, method: Method, log: &Path) -> anyhow::Result<Outcome> {
    let mut archive = load_archive(archive_path)?;
    if let Some(path) = config {
        let cfg = load_config(path)?;
        if cfg.plant_preset != archive.config.plant_preset {
            bail!(probdhp::Error::Config(format!(
                "config plant '{}' differs from archived plant '{}'",
                cfg.plant_preset, archive.config.plant_preset
            )));
        }
        archive.config = cfg;
    }
    let run = experiment::train(&archive.model, &archive.config, method)?;

    let mut w = create(log)?;
    run.write_log(&mut w)?;
    w.flush().map_err(probdhp::Error::from)?;

    archive.set_policy(method, TrainedPolicy::from(&run));
    archive.save(archive_path).with_context(|| format!("writing {}", archive_path.display()))?;

    println!("method: {method}");
    println!("phases: {}", run.phases.len());
    if let Some(last) = run.phases.last() {
        println!("final {} objective: {:.6e}", last.phase.as_str(), last.scg.final_objective);
    }
    let gamma = run.controller.gamma();
    if gamma.len() == 1 {
        println!("gamma: {:.6e}", gamma[(0, 0)]);
    } else {
        println!("gamma:{gamma}");
    }
    println!("log: {}", log.display());
    Ok(Outcome::Ok)
}

fn parse_state(text: &str, dim: usize) -> anyhow::Result<DVector<f64>> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| probdhp::Error::Config(format!("bad --x0 '{text}': {e}")))?;
    let x = match values.len() {
        1 => DVector::from_element(dim, values[0]),
        n if n == dim => DVector::from_vec(values),
        n => bail!(probdhp::Error::Config(format!("--x0 has {n} entries, state has {dim}"))),
    };
    Ok(x)
}

struct EvalOverrides {
    x0: Option<String>,
    steps: Option<usize>,
    seeds: Option<usize>,
    seed_base: Option<u64>,
    mode: Option<ModeArg>,
}

impl EvalOverrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> anyhow::Result<()> {
        let eval = &mut cfg.eval;
        if let Some(x0) = &self.x0 {
            eval.x0 = parse_state(x0, eval.x0.len())?;
        }
        if let Some(steps) = self.steps {
            eval.steps = steps;
        }
        if let Some(seeds) = self.seeds {
            eval.seeds = seeds;
        }
        if let Some(base) = self.seed_base {
            eval.seed_base = base;
        }
        if let Some(mode) = self.mode {
            eval.mode = mode.into();
        }
        if eval.steps == 0 {
            bail!(probdhp::Error::InvalidInput("--steps must be at least 1".into()));
        }
        if eval.seeds == 0 {
            bail!(probdhp::Error::InvalidInput("--seeds must be at least 1".into()));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    archive_path: &Path,
    method: Method,
    x0: Option<String>,
    steps: Option<usize>,
    seed: Option<u64>,
    mode: Option<ModeArg>,
    out: &Path,
    plot_path: Option<&Path>,
) -> anyhow::Result<Outcome> {
    let archive = load_archive(archive_path)?;
    let mut cfg = archive.config.clone();
    EvalOverrides {
        x0,
        steps,
        seeds: None,
        seed_base: None,
        mode,
    }
    .apply(&mut cfg)?;
    let policy = archive.require_policy(method)?;
    let plant = cfg.plant()?;
    let seed = seed.unwrap_or(cfg.eval.seed_base);
    let traj = experiment::rollout(&plant, &policy.controller, &cfg.eval.x0, cfg.eval.steps, seed, cfg.eval.mode)?;

    let mut w = create(out)?;
    experiment::write_trajectories(&mut w, &[(method, &traj)])?;
    w.flush().map_err(probdhp::Error::from)?;
    if let Some(path) = plot_path {
        write_plot(path, &[(method, &traj)])?;
    }

    let s = RunSummary::of(method, &traj, cfg.eval.band);
    println!("overshoot: {:.6}", s.overshoot);
    match s.settling_step {
        Some(t) => println!("settling step: {t}"),
        None => println!("settling step: none"),
    }
    println!("final |x|: {:.6}", s.final_abs);
    Ok(Outcome::Ok)
}

fn compare(
    prob_path: &Path,
    dhp_path: Option<&Path>,
    overrides: EvalOverrides,
    out: &Path,
    trajectories: Option<&Path>,
    plot_path: Option<&Path>,
) -> anyhow::Result<Outcome> {
    let prob_archive = load_archive(prob_path)?;
    let dhp_archive = match dhp_path {
        Some(path) => Some(load_archive(path)?),
        None => None,
    };
    let dhp_source = dhp_archive.as_ref().unwrap_or(&prob_archive);
    let (pc, dc) = (&prob_archive.config, &dhp_source.config);
    if pc.plant_preset != dc.plant_preset || pc.noise_variance != dc.noise_variance {
        bail!(probdhp::Error::Config(format!(
            "archives use different plants: '{}' (noise {}) vs '{}' (noise {})",
            pc.plant_preset, pc.noise_variance, dc.plant_preset, dc.noise_variance
        )));
    }
    let prob = archive_policy(&prob_archive, Method::Probabilistic)?;
    let dhp = archive_policy(dhp_source, Method::Dhp)?;

    let mut cfg = prob_archive.config.clone();
    overrides.apply(&mut cfg)?;
    let plant = cfg.plant()?;
    let cmp = experiment::compare(&plant, &prob.controller, &dhp.controller, &cfg.eval)?;
    let summaries = cmp.summaries();

    let mut w = create(out)?;
    experiment::write_compare_summary(&mut w, &summaries)?;
    w.flush().map_err(probdhp::Error::from)?;

    let runs: Vec<(Method, &probdhp::Trajectory)> = cmp
        .prob
        .iter()
        .map(|t| (Method::Probabilistic, t))
        .chain(cmp.dhp.iter().map(|t| (Method::Dhp, t)))
        .collect();
    if let Some(path) = trajectories {
        let mut w = create(path)?;
        experiment::write_trajectories(&mut w, &runs)?;
        w.flush().map_err(probdhp::Error::from)?;
    }
    if let Some(path) = plot_path {
        write_plot(path, &runs)?;
    }

    let settle_from = cfg.eval.steps.min(30);
    for method in [Method::Probabilistic, Method::Dhp] {
        let regulated = summaries
            .iter()
            .filter(|s| s.method == method && s.regulated_from(settle_from))
            .count();
        println!(
            "{method}: mean overshoot {:.6}, regulated from step {settle_from} in {regulated}/{} seeds",
            cmp.mean_overshoot(method),
            cfg.eval.seeds
        );
    }
    println!("summary: {}", out.display());
    Ok(Outcome::Ok)
}

fn archive_policy(archive: &ModelArchive, method: Method) -> anyhow::Result<&TrainedPolicy> {
    Ok(archive.require_policy(method)?)
}

fn write_plot(path: &Path, runs: &[(Method, &probdhp::Trajectory)]) -> anyhow::Result<()> {
    let svg = plot::render(runs);
    std::fs::write(path, svg)
        .map_err(probdhp::Error::from)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn verify(config: Option<&Path>, checks: &[String], inject_sign_fault: bool) -> anyhow::Result<Outcome> {
    let cfg = match config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    let results = verify::run_checks(&cfg, checks, VerifyOptions { inject_sign_fault })?;
    print!("{}", verify::render_table(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        println!("all {} checks passed", results.len());
        Ok(Outcome::Ok)
    } else {
        println!("{failed} of {} checks failed", results.len());
        Ok(Outcome::ChecksFailed)
    }
}
