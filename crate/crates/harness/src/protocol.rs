//! One shuffle-model round: encode, select and randomize, seal, shuffle (with
//! padding), aggregate, update.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use flame_core::analyzer::{update_model, Analyzer, RoundEstimate};
use flame_core::encoding::{clip_linf, normalize};
use flame_core::randomizers::Randomizer;
use flame_core::seal::{keypair, Sealer};
use flame_core::selection::{full_select, subsample_select, topk_select};
use flame_core::shuffler::{
    pad_and_shuffle, shuffle_simple, EncodedMessage, Origin, ReportShape, ShuffleAudit,
    ShuffleOutput, ShuffledBatch,
};
use flame_core::{GlobalModel, LocalUpdate, Protocol, ProtocolConfig};

use crate::error::Result;

/// Deterministic stream for `(seed, round, party)`. Party 0 is the shuffler;
/// user `u` is party `u + 1`.
pub fn stream_rng(seed: u64, round: u64, party: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((round << 32) | party);
    rng
}

/// What a round leaves behind besides the new model.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDiagnostics {
    pub estimate: RoundEstimate,
    pub audit: ShuffleAudit,
    pub messages: usize,
}

/// A configured protocol: users' encoder, shuffler and analyzer sharing one
/// key pair.
#[derive(Debug)]
pub struct FlameRound {
    cfg: ProtocolConfig,
    l: usize,
    randomizer: Randomizer,
    shape: ReportShape,
    sealer: Sealer,
    analyzer: Analyzer,
}

impl FlameRound {
    pub fn new(cfg: &ProtocolConfig) -> Result<Self> {
        cfg.validate()?;
        let l = cfg.resolved_l()?;
        let randomizer = Randomizer::new(cfg.randomizer, cfg.eps_per_dim(), cfg.b)?;
        let shape = ReportShape {
            d: cfg.d,
            messages_per_user: l,
            max_indexes: cfg.k,
        };
        let (sealer, opener) = keypair(cfg.seed);
        Ok(Self {
            cfg: cfg.clone(),
            l,
            randomizer,
            shape,
            sealer,
            analyzer: Analyzer::new(cfg, randomizer, opener),
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn shape(&self) -> ReportShape {
        self.shape
    }

    pub fn randomizer(&self) -> Randomizer {
        self.randomizer
    }

    /// A user's messages for one update.
    pub fn encode(&self, user: u32, x: &LocalUpdate, rng: &mut ChaCha12Rng) -> Result<Vec<EncodedMessage>> {
        if x.len() != self.cfg.d {
            return Err(flame_core::Error::DimensionMismatch {
                expected: self.cfg.d,
                got: x.len(),
            }
            .into());
        }
        let clipped = clip_linf(x, self.cfg.clip)?;
        let unit = normalize(&clipped, self.cfg.clip)?;
        let selected = match self.cfg.protocol {
            Protocol::Simple => full_select(&unit, &self.randomizer, rng)?,
            Protocol::Double => subsample_select(&unit, self.cfg.k, &self.randomizer, rng)?,
            Protocol::Topk => topk_select(&unit, self.cfg.k, self.l, &self.randomizer, rng)?,
        };
        selected
            .chunks(self.cfg.k)
            .map(|(idx, vals)| {
                EncodedMessage::seal(idx.to_vec(), vals, &self.sealer, Origin::User(user))
                    .map_err(Into::into)
            })
            .collect()
    }

    pub fn shuffle(&self, messages: Vec<EncodedMessage>, rng: &mut ChaCha12Rng) -> Result<ShuffleOutput> {
        Ok(match self.cfg.protocol {
            Protocol::Simple => shuffle_simple(messages, self.shape, rng)?,
            Protocol::Double | Protocol::Topk => pad_and_shuffle(
                messages,
                self.shape,
                self.cfg.n_p,
                &self.randomizer.blanket(),
                &self.sealer,
                rng,
            )?,
        })
    }

    pub fn aggregate(&self, batch: &ShuffledBatch) -> Result<RoundEstimate> {
        Ok(self.analyzer.aggregate(batch)?)
    }

    /// Runs one round over the users' updates. Randomness comes from
    /// [`stream_rng`] keyed by `seed` and the model's round counter.
    pub fn run(&self, model: &GlobalModel, updates: &[LocalUpdate], seed: u64) -> Result<(GlobalModel, RoundDiagnostics)> {
        if updates.len() != self.cfg.n {
            return Err(flame_core::Error::InvalidInput(format!(
                "round expects {} users, got {}",
                self.cfg.n,
                updates.len()
            ))
            .into());
        }
        let round = model.round;
        let per_user = updates
            .par_iter()
            .enumerate()
            .map(|(u, x)| {
                let mut rng = stream_rng(seed, round, u as u64 + 1);
                self.encode(u as u32, x, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let messages: Vec<EncodedMessage> = per_user.into_iter().flatten().collect();
        let count = messages.len();
        let out = self.shuffle(messages, &mut stream_rng(seed, round, 0))?;
        let estimate = self.aggregate(&out.batch)?;
        let next = update_model(model, &estimate)?;
        Ok((
            next,
            RoundDiagnostics {
                estimate,
                audit: out.audit,
                messages: count,
            },
        ))
    }
}
