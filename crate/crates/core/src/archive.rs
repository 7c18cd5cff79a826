//! Versioned, sectioned text container for a forward model and the trained
//! policies built on it.
//!
//! Every float is written in `{:.16e}` form (17 significant digits), which
//! round-trips `f64` exactly, so `load(save(a))` reproduces all numbers
//! bit for bit and reruns produce byte-identical files.
//!
//! ```text
//! probdhp-archive 1
//! [config]
//! seed=7
//! ...
//! [forward_model]
//! matrix sigma 1 1
//! 1.0000000000000000e-2
//! net h 1 1 15 1
//! ...
//! [policy prob]
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::action::RandomizedController;
use crate::config::ExperimentConfig;
use crate::critic::{CriticModel, IdealSpec};
use crate::error::{Error, Result};
use crate::rbf::RbfNetwork;
use crate::sysid::ForwardModel;
use crate::trainer::{Method, TrainingRun};

pub const FORMAT: &str = "probdhp-archive";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPolicy {
    pub controller: RandomizedController,
    pub critic: CriticModel,
    pub ideal: IdealSpec,
}

impl From<&TrainingRun> for TrainedPolicy {
    fn from(run: &TrainingRun) -> Self {
        Self {
            controller: run.controller.clone(),
            critic: run.critic.clone(),
            ideal: run.ideal.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub config: ExperimentConfig,
    pub model: ForwardModel,
    prob: Option<TrainedPolicy>,
    dhp: Option<TrainedPolicy>,
}

impl ModelArchive {
    pub fn new(config: ExperimentConfig, model: ForwardModel) -> Self {
        Self {
            config,
            model,
            prob: None,
            dhp: None,
        }
    }

    pub fn policy(&self, method: Method) -> Option<&TrainedPolicy> {
        match method {
            Method::Probabilistic => self.prob.as_ref(),
            Method::Dhp => self.dhp.as_ref(),
        }
    }

    pub fn set_policy(&mut self, method: Method, policy: TrainedPolicy) {
        match method {
            Method::Probabilistic => self.prob = Some(policy),
            Method::Dhp => self.dhp = Some(policy),
        }
    }

    /// The trained policy for `method`, or an archive error naming it.
    pub fn require_policy(&self, method: Method) -> Result<&TrainedPolicy> {
        self.policy(method)
            .ok_or_else(|| Error::Archive(format!("archive has no trained '{method}' policy")))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{FORMAT} {VERSION}\n[config]\n");
        out.push_str(&self.config.to_text());
        out.push_str("[forward_model]\n");
        write_matrix(&mut out, "sigma", self.model.sigma());
        write_net(&mut out, "h", self.model.h_net());
        write_net(&mut out, "g", self.model.g_net());
        for method in [Method::Probabilistic, Method::Dhp] {
            if let Some(p) = self.policy(method) {
                let _ = writeln!(out, "[policy {method}]");
                write_matrix(&mut out, "gamma", p.controller.gamma());
                write_net(&mut out, "action", p.controller.net());
                write_net(&mut out, "critic", p.critic.net());
                write_vector(&mut out, "ideal_state_mean", &p.ideal.state_mean);
                write_vector(&mut out, "ideal_control_mean", &p.ideal.control_mean);
                write_matrix(&mut out, "ideal_control_covariance", p.ideal.control_covariance());
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let header = lines.next_line()?;
        let expected = format!("{FORMAT} {VERSION}");
        if header != expected {
            return Err(Error::Archive(format!("unsupported header '{header}', expected '{expected}'")));
        }
        lines.expect_exact("[config]")?;
        let mut config_text = String::new();
        while let Some(l) = lines.peek() {
            if l.starts_with('[') {
                break;
            }
            config_text.push_str(lines.next_line()?);
            config_text.push('\n');
        }
        let config = ExperimentConfig::parse(&config_text)?;

        lines.expect_exact("[forward_model]")?;
        let sigma = lines.matrix("sigma")?;
        let h = lines.net("h")?;
        let g = lines.net("g")?;
        let model = ForwardModel::new(h, g, sigma)?;
        let mut archive = Self::new(config, model);

        while let Some(l) = lines.peek() {
            let method: Method = l
                .strip_prefix("[policy ")
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| Error::Archive(format!("line {}: unexpected '{l}'", lines.pos + 1)))?
                .parse()
                .map_err(|e: Error| Error::Archive(e.to_string()))?;
            lines.next_line()?;
            if archive.policy(method).is_some() {
                return Err(Error::Archive(format!("duplicate '{method}' policy section")));
            }
            let gamma = lines.matrix("gamma")?;
            let action = lines.net("action")?;
            let critic = lines.net("critic")?;
            let state_mean = lines.vector("ideal_state_mean")?;
            let control_mean = lines.vector("ideal_control_mean")?;
            let control_cov = lines.matrix("ideal_control_covariance")?;
            archive.set_policy(
                method,
                TrainedPolicy {
                    controller: RandomizedController::new(action, gamma)?,
                    critic: CriticModel::new(critic)?,
                    ideal: IdealSpec::new(state_mean, control_mean, control_cov)?,
                },
            );
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn floats<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_vector(out: &mut String, label: &str, v: &DVector<f64>) {
    let _ = writeln!(out, "vector {label} {}", v.len());
    let _ = writeln!(out, "{}", floats(v.iter()));
}

fn write_matrix(out: &mut String, label: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "matrix {label} {} {}", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let _ = writeln!(out, "{}", floats(row.iter()));
    }
}

fn write_net(out: &mut String, label: &str, net: &RbfNetwork) {
    let _ = writeln!(
        out,
        "net {label} {} {} {} {}",
        net.input_dim(),
        net.output_dim(),
        net.num_bases(),
        u8::from(net.has_bias())
    );
    for (c, p) in net.centers().iter().zip(net.width_precisions()) {
        let _ = writeln!(out, "{}", floats(c.iter()));
        let _ = writeln!(out, "{}", floats(p.transpose().iter()));
    }
    for row in net.weights().row_iter() {
        let _ = writeln!(out, "{}", floats(row.iter()));
    }
}

struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn next_line(&mut self) -> Result<&'a str> {
        let line = self
            .peek()
            .ok_or_else(|| Error::Archive("unexpected end of archive".into()))?;
        self.pos += 1;
        Ok(line)
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Archive(format!("line {}: {msg}", self.pos))
    }

    fn expect_exact(&mut self, want: &str) -> Result<()> {
        let line = self.next_line()?;
        if line != want {
            return Err(self.err(format!("expected '{want}', found '{line}'")));
        }
        Ok(())
    }

    /// Reads `<kind> <label> <ints...>` and returns the integers.
    fn tagged(&mut self, kind: &str, label: &str, count: usize) -> Result<Vec<usize>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(kind) || parts.next() != Some(label) {
            return Err(self.err(format!("expected '{kind} {label}', found '{line}'")));
        }
        let ints = parts
            .map(|p| p.parse::<usize>().map_err(|_| self.err(format!("bad integer '{p}'"))))
            .collect::<Result<Vec<_>>>()?;
        if ints.len() != count {
            return Err(self.err(format!("expected {count} sizes after '{kind} {label}'")));
        }
        Ok(ints)
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values = line
            .split_whitespace()
            .map(|p| p.parse::<f64>().map_err(|_| self.err(format!("bad number '{p}'"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != count {
            return Err(self.err(format!("expected {count} numbers, found {}", values.len())));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(self.err("non-finite number"));
        }
        Ok(values)
    }

    fn vector(&mut self, label: &str) -> Result<DVector<f64>> {
        let n = self.tagged("vector", label, 1)?[0];
        Ok(DVector::from_vec(self.floats(n)?))
    }

    fn matrix(&mut self, label: &str) -> Result<DMatrix<f64>> {
        let dims = self.tagged("matrix", label, 2)?;
        let mut m = DMatrix::zeros(dims[0], dims[1]);
        for i in 0..dims[0] {
            let row = self.floats(dims[1])?;
            m.row_mut(i).copy_from_slice(&row);
        }
        Ok(m)
    }

    fn net(&mut self, label: &str) -> Result<RbfNetwork> {
        let dims = self.tagged("net", label, 4)?;
        let (d, out, m, bias) = (dims[0], dims[1], dims[2], dims[3]);
        if bias > 1 {
            return Err(self.err("bias flag must be 0 or 1"));
        }
        let mut centers = Vec::with_capacity(m);
        let mut widths = Vec::with_capacity(m);
        for _ in 0..m {
            centers.push(DVector::from_vec(self.floats(d)?));
            widths.push(DMatrix::from_row_slice(d, d, &self.floats(d * d)?));
        }
        let cols = m + bias;
        let mut weights = DMatrix::zeros(out, cols);
        for i in 0..out {
            let row = self.floats(cols)?;
            weights.row_mut(i).copy_from_slice(&row);
        }
        RbfNetwork::with_weights(centers, widths, weights, bias == 1).map_err(|e| self.err(e))
    }
}
