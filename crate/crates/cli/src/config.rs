//! File forms of the three subcommands' inputs.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use flame_core::{PrivacyParams, Protocol, ProtocolConfig, RandomizerKind};
use flame_harness::dataset::{DataSource, SyntheticSpec};
use flame_harness::experiment::Partition;
use flame_harness::sweep::Knob;
use flame_harness::{ExperimentConfig, Method};

use crate::error::{CliError, Result};

/// MNIST-scale defaults: n = 1000 users, beta = 1/10, 2 epochs.
const DEFAULT_N: usize = 1000;
const DEFAULT_BETA: f64 = 0.1;
const DEFAULT_EPS_L: f64 = 78.5;
const DEFAULT_CLIP: f64 = 0.03;
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

/// What `train` runs: one of the shuffle protocols or a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunProtocol {
    Simple,
    Double,
    Topk,
    Npfl,
    DpflGauss,
    LdpflGauss,
    LdpflLap,
}

impl RunProtocol {
    fn split(self) -> (Method, Protocol) {
        match self {
            RunProtocol::Simple => (Method::Flame, Protocol::Simple),
            RunProtocol::Double => (Method::Flame, Protocol::Double),
            RunProtocol::Topk => (Method::Flame, Protocol::Topk),
            // Baselines only read n, clip, eps_l and seed from the protocol.
            RunProtocol::Npfl => (Method::Npfl, Protocol::Simple),
            RunProtocol::DpflGauss => (Method::DpflGauss, Protocol::Simple),
            RunProtocol::LdpflGauss => (Method::LdpflGauss, Protocol::Simple),
            RunProtocol::LdpflLap => (Method::LdpflLap, Protocol::Simple),
        }
    }
}

fn default_run_protocol() -> RunProtocol {
    RunProtocol::Topk
}
fn default_randomizer() -> RandomizerKind {
    RandomizerKind::Laplace
}
fn default_n() -> usize {
    DEFAULT_N
}
fn default_clip() -> f64 {
    DEFAULT_CLIP
}
fn default_b() -> u32 {
    2
}
fn default_lr() -> f64 {
    1.0
}
fn default_epochs() -> Option<usize> {
    Some(2)
}
fn default_shard() -> usize {
    1
}
fn default_delta_budget() -> f64 {
    5e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub json: PathBuf,
    pub csv: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            json: PathBuf::from("out/run.json"),
            csv: PathBuf::from("out/run.csv"),
        }
    }
}

/// A training run: protocol knobs, harness knobs, data and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_run_protocol")]
    pub protocol: RunProtocol,
    #[serde(default = "default_randomizer")]
    pub randomizer: RandomizerKind,
    /// Model dimension; taken from the data when absent.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Perturbed dimensions per user. Give `k` or `beta`, not both.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub beta: Option<f64>,
    /// Defaults to `n`.
    #[serde(default)]
    pub n_p: Option<usize>,
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_b")]
    pub b: u32,
    /// Whole-vector local budget. Give `eps_l` or `eps_per_dim`, not both.
    #[serde(default)]
    pub eps_l: Option<f64>,
    #[serde(default)]
    pub eps_per_dim: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the MNIST directory.
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: Option<usize>,
    /// Used when `epochs` is null.
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default = "default_shard")]
    pub shard_size: usize,
    #[serde(default)]
    pub partition: Partition,
    #[serde(default)]
    pub rounds_per_epoch: Option<usize>,
    #[serde(default)]
    pub dp: Option<PrivacyParams>,
    #[serde(default = "default_delta_budget")]
    pub delta_budget: f64,
    #[serde(default)]
    pub output: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Validation(format!("`{field}` must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn data_source(&self, env_dir: Option<&Path>) -> DataSource {
        self.data.clone().unwrap_or_else(|| DataSource::Mnist {
            dir: env_dir.map_or_else(|| PathBuf::from(DEFAULT_DATA_DIR), Path::to_path_buf),
        })
    }

    /// Fills derived fields and checks everything that does not need data.
    /// `model_dim` is the parameter count of the model the data implies.
    pub fn resolve(&self, model_dim: usize) -> Result<ExperimentConfig> {
        let d = self.d.unwrap_or(model_dim);
        if d != model_dim {
            return Err(CliError::Validation(format!(
                "`d` = {d} but the model on this data has {model_dim} parameters"
            )));
        }
        let (method, protocol) = self.protocol.split();
        let k = match (protocol, self.k, self.beta) {
            (_, Some(_), Some(_)) => {
                return Err(CliError::Validation("give `k` or `beta`, not both".into()));
            }
            (Protocol::Simple, None, None) => d,
            (_, Some(k), None) => k,
            (p, None, beta) => {
                let beta = positive("beta", beta.unwrap_or(DEFAULT_BETA))?;
                if p == Protocol::Simple && beta != 1.0 {
                    return Err(CliError::Validation(format!(
                        "protocol simple perturbs every dimension; `beta` must be 1, got {beta}"
                    )));
                }
                ((beta * d as f64).round() as usize).max(1)
            }
        };
        let perturbed = if protocol == Protocol::Simple { d } else { k };
        let eps_l = match (self.eps_l, self.eps_per_dim) {
            (Some(_), Some(_)) => {
                return Err(CliError::Validation("give `eps_l` or `eps_per_dim`, not both".into()));
            }
            (Some(e), None) => positive("eps_l", e)?,
            (None, Some(e)) => positive("eps_per_dim", e)? * perturbed as f64,
            (None, None) => DEFAULT_EPS_L,
        };
        let p = ProtocolConfig {
            protocol,
            randomizer: self.randomizer,
            d,
            n: self.n,
            k,
            n_p: self.n_p.unwrap_or(self.n),
            l: self.l,
            nu: self.nu,
            clip: self.clip,
            b: self.b,
            eps_l,
            rounds: self.rounds.unwrap_or(1),
            seed: self.seed,
        };
        if method == Method::Flame {
            p.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        } else if self.l.is_some_and(|l| l > 1) || self.nu.is_some() {
            return Err(CliError::Validation(format!(
                "`l` and `nu` only apply to topk, not {:?}",
                self.protocol
            )));
        }
        if self.epochs.is_some() && self.rounds.is_some() {
            return Err(CliError::Validation("give `epochs` or `rounds`, not both".into()));
        }
        if self.epochs.is_none() && self.rounds.is_none() {
            return Err(CliError::Validation("one of `epochs` or `rounds` is required".into()));
        }
        Ok(ExperimentConfig {
            method,
            protocol: p,
            lr: self.lr,
            epochs: self.epochs,
            shard_size: self.shard_size,
            partition: self.partition,
            rounds_per_epoch: self.rounds_per_epoch,
            dp: self.dp,
            delta_budget: self.delta_budget,
        })
    }
}

fn default_protocols() -> Vec<Protocol> {
    vec![Protocol::Simple, Protocol::Double]
}
fn default_amplify_randomizer() -> RandomizerKind {
    RandomizerKind::Krr
}
fn default_d() -> usize {
    75_755
}
fn default_pool_ratio() -> f64 {
    1.0
}
fn default_delta_c() -> f64 {
    1e-6
}
fn default_curve_path() -> PathBuf {
    PathBuf::from("out/amplify.csv")
}

/// Grid for the one-round amplification curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplifyConfig {
    #[serde(default = "default_protocols")]
    pub protocols: Vec<Protocol>,
    #[serde(default = "default_amplify_randomizer")]
    pub randomizer: RandomizerKind,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default)]
    pub n: Vec<usize>,
    /// Ignored by simple.
    #[serde(default)]
    pub beta: Vec<f64>,
    /// `n / n_p`.
    #[serde(default = "default_pool_ratio")]
    pub pool_ratio: f64,
    #[serde(default = "default_b")]
    pub b: u32,
    #[serde(default)]
    pub eps_per_dim: Vec<f64>,
    #[serde(default = "default_delta_c")]
    pub delta_c: f64,
    #[serde(default = "default_curve_path")]
    pub output: PathBuf,
}

impl Default for AmplifyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl AmplifyConfig {
    /// One base config per (protocol, n, beta) grid point.
    pub fn bases(&self) -> Result<Vec<ProtocolConfig>> {
        let empty = |field: &str| Err(CliError::Validation(format!("grid field `{field}` is empty")));
        if self.protocols.is_empty() {
            return empty("protocols");
        }
        if self.n.is_empty() {
            return empty("n");
        }
        if self.eps_per_dim.is_empty() {
            return empty("eps_per_dim");
        }
        let subsampled = self.protocols.iter().any(|&p| p != Protocol::Simple);
        if subsampled && self.beta.is_empty() {
            return empty("beta");
        }
        positive("pool_ratio", self.pool_ratio)?;
        for &e in &self.eps_per_dim {
            positive("eps_per_dim", e)?;
        }
        let mut out = Vec::new();
        for &protocol in &self.protocols {
            let betas: &[f64] = if protocol == Protocol::Simple { &[1.0] } else { &self.beta };
            for &n in &self.n {
                for &beta in betas {
                    if !(beta > 0.0 && beta <= 1.0) {
                        return Err(CliError::Validation(format!("`beta` must lie in (0, 1], got {beta}")));
                    }
                    let cfg = ProtocolConfig {
                        protocol,
                        randomizer: self.randomizer,
                        d: self.d,
                        n,
                        k: ((beta * self.d as f64).round() as usize).max(1),
                        n_p: ((n as f64 / self.pool_ratio).round() as usize).max(1),
                        l: None,
                        nu: None,
                        clip: 1.0,
                        b: self.b,
                        eps_l: 1.0,
                        rounds: 1,
                        seed: 0,
                    };
                    cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
                    out.push(cfg);
                }
            }
        }
        Ok(out)
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_sweep_path() -> PathBuf {
    PathBuf::from("out/sweep.csv")
}

/// A one-knob grid over a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub base: RunConfig,
    pub knob: Option<Knob>,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_sweep_path")]
    pub output: PathBuf,
}

impl Default for SweepConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Reads a JSON config, or the defaults when no path is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
}

/// Parses a flag value with the same spelling the JSON form uses.
pub fn parse_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Synthetic data sized for quick runs.
pub fn synthetic_source(train: usize, seed: u64) -> DataSource {
    DataSource::Synthetic(SyntheticSpec::new(train, (train / 5).max(1), seed))
}
