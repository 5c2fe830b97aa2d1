//! The analyzer: opens the shuffled payloads, de-biases per-dimension means
//! and applies the model update.

use std::io::Write;

use crate::encoding::denormalize;
use crate::error::{Error, Result};
use crate::randomizers::{debias_mean, Randomizer};
use crate::seal::Opener;
use crate::shuffler::ShuffledBatch;
use crate::types::{GlobalModel, Protocol, ProtocolConfig};

/// Per-round estimate in both normalized and gradient units.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundEstimate {
    pub zbar: Vec<f64>,
    /// `clip * (2 zbar - 1)`, clamped to `[-clip, clip]`.
    pub z: Vec<f64>,
    pub received: Vec<usize>,
    pub assumed_real: f64,
}

impl RoundEstimate {
    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Writes `round,dimension,received,zbar,z` rows.
    pub fn write_diagnostics<W: Write>(&self, round: u64, w: &mut csv::Writer<W>) -> Result<()> {
        for j in 0..self.dim() {
            w.write_record(&[
                round.to_string(),
                j.to_string(),
                self.received[j].to_string(),
                self.zbar[j].to_string(),
                self.z[j].to_string(),
            ])?;
        }
        Ok(())
    }
}

pub const DIAGNOSTICS_HEADER: [&str; 5] = ["round", "dimension", "received", "zbar", "z"];

/// Holds the analyzer's secret key and the protocol parameters it needs.
#[derive(Debug, Clone)]
pub struct Analyzer {
    opener: Opener,
    randomizer: Randomizer,
    protocol: Protocol,
    d: usize,
    per_dim_total: usize,
    assumed_real: f64,
    clip: f64,
}

impl Analyzer {
    pub fn new(cfg: &ProtocolConfig, randomizer: Randomizer, opener: Opener) -> Self {
        Self {
            opener,
            randomizer,
            protocol: cfg.protocol,
            d: cfg.d,
            per_dim_total: cfg.per_dim_total(),
            assumed_real: cfg.assumed_real_count(),
            clip: cfg.clip,
        }
    }

    /// De-biased per-dimension mean of a shuffled batch.
    pub fn aggregate(&self, batch: &ShuffledBatch) -> Result<RoundEstimate> {
        if batch.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: batch.dim(),
            });
        }
        if let Some((j, &c)) = batch
            .per_dim_count
            .iter()
            .enumerate()
            .find(|(_, &c)| c != self.per_dim_total)
        {
            return Err(Error::ProtocolViolation(format!(
                "dimension {j} carries {c} values, protocol {} expects {}",
                self.protocol.name(),
                self.per_dim_total
            )));
        }
        let mut sums = vec![0.0f64; self.d];
        for m in &batch.messages {
            let values = self.opener.unseal(&m.payload)?;
            if values.len() != m.indexes.len() {
                return Err(Error::ProtocolViolation(format!(
                    "message with {} indexes opened to {} values",
                    m.indexes.len(),
                    values.len()
                )));
            }
            for (&j, &v) in m.indexes.iter().zip(&values) {
                sums[j as usize] += self.randomizer.to_unit(v);
            }
        }
        let blanket = self.randomizer.blanket();
        let total = self.per_dim_total as f64;
        let zbar = sums
            .iter()
            .map(|&s| debias_mean(s, total, self.assumed_real, &blanket))
            .collect::<Result<Vec<_>>>()?;
        let z = zbar
            .iter()
            .map(|&m| denormalize(m, self.clip).clamp(-self.clip, self.clip))
            .collect();
        Ok(RoundEstimate {
            zbar,
            z,
            received: batch.per_dim_count.clone(),
            assumed_real: self.assumed_real,
        })
    }
}

/// `theta + z`, one round later.
pub fn update_model(model: &GlobalModel, est: &RoundEstimate) -> Result<GlobalModel> {
    apply_delta(model, &est.z)
}

/// `theta + delta`, one round later.
pub fn apply_delta(model: &GlobalModel, delta: &[f64]) -> Result<GlobalModel> {
    if model.dim() != delta.len() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: delta.len(),
        });
    }
    Ok(GlobalModel {
        theta: model.theta.iter().zip(delta).map(|(t, z)| t + z).collect(),
        round: model.round + 1,
    })
}
