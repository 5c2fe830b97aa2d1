//! Domain types shared by every stage of a round.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection;

/// An `(epsilon, delta)` guarantee. Epsilon is in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidInput(format!(
                "delta must lie in [0, 1), got {delta}"
            )));
        }
        Ok(Self { epsilon, delta })
    }

    /// Pure epsilon-DP.
    pub fn pure(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, 0.0)
    }
}

/// Which of the three shuffle-model protocols a round runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Every dimension perturbed, plain shuffle.
    Simple,
    /// Uniform subsampling of k dimensions plus dummy padding.
    Double,
    /// Top-k selection with decoy indexes plus dummy padding.
    Topk,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Simple => "simple",
            Protocol::Double => "double",
            Protocol::Topk => "topk",
        }
    }
}

/// The per-value local randomizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomizerKind {
    /// The discrete blanket randomizer as printed: levels `{0, .., b}`,
    /// blanket uniform on `{1, .., b}`.
    Krr,
    /// The `b`-level variant whose levels coincide with the blanket support.
    #[serde(rename = "krr_strict")]
    KrrStrict,
    /// Laplace noise on `[0, 1]` with sensitivity 1.
    Laplace,
    /// No perturbation. Non-private; used to check the pipeline.
    Identity,
}

fn default_b() -> u32 {
    2
}

fn default_rounds() -> usize {
    1
}

/// Every knob of a protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub randomizer: RandomizerKind,
    /// Model dimension.
    pub d: usize,
    /// Users per round.
    pub n: usize,
    /// Dimensions each user perturbs. Must equal `d` for [`Protocol::Simple`].
    pub k: usize,
    /// Padded per-dimension value count (ignored by [`Protocol::Simple`]).
    #[serde(default)]
    pub n_p: usize,
    /// Report multiplier for [`Protocol::Topk`]. Derived from `nu` when absent.
    #[serde(default)]
    pub l: Option<usize>,
    /// Requested index-privacy level for [`Protocol::Topk`].
    #[serde(default)]
    pub nu: Option<f64>,
    /// Per-coordinate clip bound, in gradient units.
    pub clip: f64,
    /// Discretization granularity of the KRR randomizer.
    #[serde(default = "default_b")]
    pub b: u32,
    /// Local budget for a whole vector (nats).
    pub eps_l: f64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ProtocolConfig {
    /// Sampling rate `k / d`.
    pub fn beta(&self) -> f64 {
        self.k as f64 / self.d as f64
    }

    /// Report multiplier after applying the protocol rules.
    ///
    /// A pinned `l` wins; otherwise Top-k takes the smallest `l` that gives
    /// the requested `nu`, and no `nu` means `l = 1`.
    pub fn resolved_l(&self) -> Result<usize> {
        match self.protocol {
            Protocol::Simple | Protocol::Double => match self.l {
                None | Some(1) => Ok(1),
                Some(l) => Err(Error::InvalidInput(format!(
                    "protocol {} requires l = 1, got l = {l}",
                    self.protocol.name()
                ))),
            },
            Protocol::Topk => {
                if let Some(l) = self.l {
                    return Ok(l);
                }
                match self.nu {
                    Some(nu) => Ok(selection::valid_l_range(nu, self.beta())?.min),
                    None => Ok(1),
                }
            }
        }
    }

    /// Local budget given to each perturbed coordinate: `eps_l / d` for
    /// Simple, `eps_l / k` otherwise.
    pub fn eps_per_dim(&self) -> f64 {
        match self.protocol {
            Protocol::Simple => self.eps_l / self.d as f64,
            Protocol::Double | Protocol::Topk => self.eps_l / self.k as f64,
        }
    }

    /// Values each dimension carries after the shuffler is done.
    pub fn per_dim_total(&self) -> usize {
        match self.protocol {
            Protocol::Simple => self.n,
            Protocol::Double | Protocol::Topk => self.n_p,
        }
    }

    /// Real-report count the analyzer assumes per dimension.
    pub fn assumed_real_count(&self) -> f64 {
        match self.protocol {
            Protocol::Simple => self.n as f64,
            Protocol::Double | Protocol::Topk => self.n as f64 * self.beta(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.k == 0 || self.k > self.d {
            return bad(format!("k must satisfy 1 <= k <= d, got k = {}", self.k));
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        if self.b < 2 {
            return bad(format!("b must be at least 2, got {}", self.b));
        }
        if !(self.eps_l.is_finite() && self.eps_l > 0.0) {
            return bad(format!("eps_l must be positive, got {}", self.eps_l));
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if let Some(nu) = self.nu {
            if !(nu >= 1.0) {
                return bad(format!("nu must be >= 1, got {nu}"));
            }
        }
        let l = self.resolved_l()?;
        match self.protocol {
            Protocol::Simple => {
                if self.k != self.d {
                    return bad(format!(
                        "protocol simple requires k = d, got k = {} and d = {}",
                        self.k, self.d
                    ));
                }
            }
            Protocol::Double | Protocol::Topk => {
                if self.n_p == 0 {
                    return bad("n_p must be at least 1".into());
                }
                let l_max = (1.0 / self.beta()).ceil() as usize;
                if l == 0 || l > l_max {
                    return bad(format!("l must satisfy 1 <= l <= {l_max}, got l = {l}"));
                }
                if self.k * l > self.d {
                    return bad(format!(
                        "k * l = {} exceeds d = {}",
                        self.k * l,
                        self.d
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A user's raw model delta.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate(Vec<f64>);

impl LocalUpdate {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "local update component {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A clipped update mapped into `[0, 1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedVector(Vec<f64>);

impl NormalizedVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::ContractViolation(format!(
                "normalized component {i} = {} outside [0, 1]",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Global parameters and the number of rounds applied so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub theta: Vec<f64>,
    pub round: u64,
}

impl GlobalModel {
    pub fn zeros(d: usize) -> Self {
        Self {
            theta: vec![0.0; d],
            round: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}
