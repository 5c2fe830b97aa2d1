//! Multi-round training runs for every method, with per-round accuracy and
//! per-epoch privacy.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use flame_core::accountant::{protocol_report, AmplificationReport};
use flame_core::{GlobalModel, LocalUpdate, PrivacyParams, ProtocolConfig};

use crate::baselines::{dpfl_step, gaussian_scale, ldpfl_gauss_step, ldpfl_laplace_step, npfl_step, BaselineKind};
use crate::dataset::{DataSplit, Dataset};
use crate::error::{HarnessError, Result};
use crate::model::{local_update, LogReg};
use crate::protocol::{stream_rng, FlameRound, RoundDiagnostics};

/// Training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The shuffle-model protocol named in the protocol config.
    Flame,
    Npfl,
    DpflGauss,
    LdpflGauss,
    LdpflLap,
}

impl From<BaselineKind> for Method {
    fn from(k: BaselineKind) -> Self {
        match k {
            BaselineKind::Npfl => Method::Npfl,
            BaselineKind::DpflGauss => Method::DpflGauss,
            BaselineKind::LdpflGauss => Method::LdpflGauss,
            BaselineKind::LdpflLap => Method::LdpflLap,
        }
    }
}

/// How training samples are dealt to users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    #[default]
    Iid,
    /// Shards are cut from label-sorted data, so each holds few labels.
    LabelSkew,
}

fn default_lr() -> f64 {
    1.0
}

fn default_shard() -> usize {
    1
}

fn default_delta_budget() -> f64 {
    5e-6
}

/// Everything needed to reproduce a run, apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Protocol knobs. Baselines read `n`, `clip`, `eps_l` and `seed`.
    pub protocol: ProtocolConfig,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Total rounds are `epochs * rounds_per_epoch`; without it,
    /// `protocol.rounds`.
    #[serde(default)]
    pub epochs: Option<usize>,
    /// Samples per user per round.
    #[serde(default = "default_shard")]
    pub shard_size: usize,
    #[serde(default)]
    pub partition: Partition,
    /// Defaults to `ceil(train / (n * shard_size))`.
    #[serde(default)]
    pub rounds_per_epoch: Option<usize>,
    /// Per-round target of the Gaussian baselines.
    #[serde(default)]
    pub dp: Option<PrivacyParams>,
    /// Epoch delta handed to the accountant.
    #[serde(default = "default_delta_budget")]
    pub delta_budget: f64,
}

impl ExperimentConfig {
    pub fn new(method: Method, protocol: ProtocolConfig) -> Self {
        Self {
            method,
            protocol,
            lr: default_lr(),
            epochs: Some(2),
            shard_size: default_shard(),
            partition: Partition::Iid,
            rounds_per_epoch: None,
            dp: None,
            delta_budget: default_delta_budget(),
        }
    }

    pub fn rounds_per_epoch(&self, train: usize) -> usize {
        self.rounds_per_epoch
            .unwrap_or_else(|| train.div_ceil(self.protocol.n * self.shard_size))
            .max(1)
    }

    pub fn total_rounds(&self, train: usize) -> usize {
        match self.epochs {
            Some(e) => e * self.rounds_per_epoch(train),
            None => self.protocol.rounds,
        }
    }

    pub fn validate(&self, data: &DataSplit) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let params = LogReg::for_data(&data.train).params();
        if self.protocol.d != params {
            return bad(format!("protocol d = {} but the model has {params} parameters", self.protocol.d));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.shard_size == 0 {
            return bad("shard_size must be at least 1".into());
        }
        if self.epochs == Some(0) || self.rounds_per_epoch == Some(0) {
            return bad("epochs and rounds_per_epoch must be at least 1".into());
        }
        if !(self.delta_budget > 0.0 && self.delta_budget < 1.0) {
            return bad(format!("delta_budget must lie in (0, 1), got {}", self.delta_budget));
        }
        match self.method {
            Method::Flame => self.protocol.validate()?,
            Method::DpflGauss | Method::LdpflGauss if self.dp.is_none() => {
                return bad("Gaussian baselines need a `dp` target".into());
            }
            _ => {}
        }
        if data.train.is_empty() || data.test.is_empty() {
            return Err(HarnessError::EmptyShard);
        }
        Ok(())
    }
}

/// Privacy spent in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochPrivacy {
    pub epoch: usize,
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub dataset_fingerprint: u64,
    pub rounds_per_epoch: usize,
    /// Test accuracy after each round.
    pub accuracy: Vec<f64>,
    pub final_accuracy: f64,
    /// Guarantee of a single round, when the method has one.
    pub round_privacy: Option<PrivacyParams>,
    pub epoch_privacy: Vec<EpochPrivacy>,
    pub report: Option<AmplificationReport>,
    /// Why the accountant could not produce a report.
    pub report_error: Option<String>,
    /// Largest number of user values any dimension received in a round.
    pub max_user_count: usize,
    /// Not serialized, so reruns produce identical files.
    #[serde(skip)]
    pub wall_clock: Duration,
}

/// The CSV columns written by [`ExperimentResult::write_csv`].
pub const RESULT_CSV_HEADER: [&str; 4] = ["round", "accuracy", "eps_c", "delta_c"];

impl ExperimentResult {
    /// One row per round; privacy columns hold the epoch the round belongs to
    /// and stay empty for non-private runs.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RESULT_CSV_HEADER)?;
        for (r, acc) in self.accuracy.iter().enumerate() {
            let epoch = r / self.rounds_per_epoch;
            let (e, d) = match self.epoch_privacy.get(epoch) {
                Some(p) => (p.epsilon.to_string(), p.delta.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([(r + 1).to_string(), acc.to_string(), e, d])?;
        }
        w.flush().map_err(|source| HarnessError::Io {
            path: "<csv>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Sample indexes for every user in every round of one epoch.
pub fn epoch_shards(
    train: &Dataset,
    users: usize,
    shard_size: usize,
    rounds: usize,
    partition: Partition,
    rng: &mut impl rand::Rng,
) -> Vec<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    if partition == Partition::LabelSkew {
        order.sort_by_key(|&i| train.labels[i]);
    }
    let need = rounds * users;
    let mut shards: Vec<Vec<usize>> = (0..need)
        .map(|s| (0..shard_size).map(|t| order[(s * shard_size + t) % order.len()]).collect())
        .collect();
    if partition == Partition::LabelSkew {
        shards.shuffle(rng);
    }
    let mut it = shards.into_iter();
    (0..rounds).map(|_| it.by_ref().take(users).collect()).collect()
}

/// One shuffle-model round over users' shards.
pub fn run_protocol_round(
    round: &FlameRound,
    model: &GlobalModel,
    data: &Dataset,
    shards: &[Vec<usize>],
    lr: f64,
    seed: u64,
) -> Result<(GlobalModel, RoundDiagnostics)> {
    let updates = local_updates(model, data, shards, lr)?;
    round.run(model, &updates, seed)
}

fn local_updates(model: &GlobalModel, data: &Dataset, shards: &[Vec<usize>], lr: f64) -> Result<Vec<LocalUpdate>> {
    shards.par_iter().map(|s| local_update(model, data, s, lr)).collect()
}

fn flame_privacy(
    cfg: &ExperimentConfig,
    rpe: usize,
    epochs: usize,
) -> (Option<PrivacyParams>, Vec<EpochPrivacy>, Option<AmplificationReport>, Option<String>) {
    match protocol_report(&cfg.protocol, rpe, cfg.delta_budget) {
        Ok(r) => {
            let per_epoch = (0..epochs)
                .map(|epoch| EpochPrivacy { epoch, epsilon: r.epoch.epsilon, delta: r.epoch.delta })
                .collect();
            (Some(r.central), per_epoch, Some(r), None)
        }
        Err(e) => (None, Vec::new(), None, Some(e.to_string())),
    }
}

/// Trains for the configured number of rounds, evaluating after each.
pub fn run_experiment(cfg: &ExperimentConfig, data: &DataSplit) -> Result<ExperimentResult> {
    cfg.validate(data)?;
    let start = Instant::now();
    let model_shape = LogReg::for_data(&data.train);
    let seed = cfg.protocol.seed;
    let n = cfg.protocol.n;
    let c = cfg.protocol.clip;
    let rpe = cfg.rounds_per_epoch(data.train.len());
    let total = cfg.total_rounds(data.train.len());
    let epochs = total.div_ceil(rpe);

    let flame = match cfg.method {
        Method::Flame => Some(FlameRound::new(&cfg.protocol)?),
        _ => None,
    };
    let sigma = cfg.dp.map(|t| gaussian_scale(c, t));

    // Sample-level guarantees: every sample is used in one round per epoch.
    let (round_privacy, epoch_privacy, report, report_error) = match cfg.method {
        Method::Flame => flame_privacy(cfg, rpe, epochs),
        Method::Npfl => (None, Vec::new(), None, None),
        Method::DpflGauss | Method::LdpflGauss => {
            let t = cfg.dp.expect("validated");
            let per = (0..epochs).map(|epoch| EpochPrivacy { epoch, epsilon: t.epsilon, delta: t.delta });
            (Some(t), per.collect(), None, None)
        }
        Method::LdpflLap => {
            let t = PrivacyParams { epsilon: cfg.protocol.eps_l, delta: 0.0 };
            let per = (0..epochs).map(|epoch| EpochPrivacy { epoch, epsilon: t.epsilon, delta: 0.0 });
            (Some(t), per.collect(), None, None)
        }
    };

    let mut model = GlobalModel::zeros(model_shape.params());
    let mut accuracy = Vec::with_capacity(total);
    let mut max_user_count = 0;
    let mut round = 0;
    'epochs: for epoch in 0..epochs {
        let mut rng = stream_rng(seed ^ 0x5eed_da7a, epoch as u64, u32::MAX as u64);
        let shards = epoch_shards(&data.train, n, cfg.shard_size, rpe, cfg.partition, &mut rng);
        for users in &shards {
            if round == total {
                break 'epochs;
            }
            let updates = local_updates(&model, &data.train, users, cfg.lr)?;
            model = match cfg.method {
                Method::Flame => {
                    let (next, diag) = flame.as_ref().expect("built above").run(&model, &updates, seed)?;
                    let top = diag.audit.user_counts.iter().copied().max().unwrap_or(0);
                    max_user_count = max_user_count.max(top);
                    next
                }
                Method::Npfl => npfl_step(&model, &updates)?,
                Method::DpflGauss => {
                    let mut rng = stream_rng(seed, model.round, 0);
                    dpfl_step(&model, &updates, c, sigma.expect("validated"), &mut rng)?
                }
                Method::LdpflGauss => ldpfl_gauss_step(&model, &updates, c, sigma.expect("validated"), seed)?,
                Method::LdpflLap => ldpfl_laplace_step(&model, &updates, c, cfg.protocol.eps_l, seed)?,
            };
            accuracy.push(model_shape.accuracy(&model.theta, &data.test)?);
            round += 1;
        }
    }

    Ok(ExperimentResult {
        config: cfg.clone(),
        seed,
        dataset_fingerprint: data.train.fingerprint(),
        rounds_per_epoch: rpe,
        final_accuracy: accuracy.last().copied().unwrap_or(0.0),
        accuracy,
        round_privacy,
        epoch_privacy,
        report,
        report_error,
        max_user_count,
        wall_clock: start.elapsed(),
    })
}

/// A baseline run; the method in `cfg` is replaced by `kind`.
pub fn run_baseline(kind: BaselineKind, cfg: &ExperimentConfig, data: &DataSplit) -> Result<ExperimentResult> {
    let cfg = ExperimentConfig { method: kind.into(), ..cfg.clone() };
    run_experiment(&cfg, data)
}
