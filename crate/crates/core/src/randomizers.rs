//! Local randomizers, their privacy blankets, and the de-biasing estimator.
//!
//! Reports live in a randomizer-specific "raw" space (the integer level for
//! KRR, a real number for Laplace). [`Randomizer::to_unit`] maps a raw report
//! back onto the normalized `[0, 1]` scale the estimator works in.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::RandomizerKind;

/// Probability that the KRR randomizer answers from its blanket:
/// `b / (e^eps + b - 1)`.
pub fn krr_gamma(eps: f64, b: u32) -> f64 {
    let b = f64::from(b);
    b / (eps.exp() + b - 1.0)
}

/// Blanket probability reported for the Laplace randomizer on `[0, 1]`.
pub fn laplace_gamma(eps: f64) -> f64 {
    (-eps / 2.0).exp()
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::ContractViolation(format!("input {x} outside [0, 1]")))
    }
}

/// Unbiased stochastic rounding of `x * b` to `{0, .., b}`.
pub fn stochastic_round<R: Rng + ?Sized>(x: f64, b: u32, rng: &mut R) -> u32 {
    let scaled = x * f64::from(b);
    let floor = scaled.floor();
    let up = rng.random::<f64>() < scaled - floor;
    (floor as u32 + u32::from(up)).min(b)
}

/// KRR with an explicit blanket probability.
pub fn krr_randomize_with_gamma<R: Rng + ?Sized>(
    x: f64,
    gamma: f64,
    b: u32,
    rng: &mut R,
) -> Result<u32> {
    check_unit(x)?;
    let level = stochastic_round(x, b, rng);
    if rng.random::<f64>() < gamma {
        Ok(rng.random_range(1..=b))
    } else {
        Ok(level)
    }
}

/// The discrete blanket randomizer: stochastic rounding of `x * b`, replaced
/// by a uniform draw from `{1, .., b}` with probability `krr_gamma(eps, b)`.
pub fn krr_randomize<R: Rng + ?Sized>(x: f64, eps: f64, b: u32, rng: &mut R) -> Result<u32> {
    krr_randomize_with_gamma(x, krr_gamma(eps, b), b, rng)
}

/// KRR variant whose data-dependent part shares the blanket's support.
///
/// The input is rounded onto the `b` levels `{1, .., b}` (level `1 + round(x (b - 1))`),
/// so every output has probability at least `gamma / b` under any input and
/// the output distributions differ by at most a factor `e^eps`.
pub fn krr_strict_randomize<R: Rng + ?Sized>(
    x: f64,
    eps: f64,
    b: u32,
    rng: &mut R,
) -> Result<u32> {
    check_unit(x)?;
    let level = 1 + stochastic_round(x, b - 1, rng);
    if rng.random::<f64>() < krr_gamma(eps, b) {
        Ok(rng.random_range(1..=b))
    } else {
        Ok(level)
    }
}

/// One draw from `Lap(0, scale)`.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    // One draw: the top bit picks the sign, the low 53 bits give u in (0, 1].
    let bits = rng.next_u64();
    let u = ((bits & ((1 << 53) - 1)) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let magnitude = -scale * u.ln();
    if bits >> 63 == 1 {
        magnitude
    } else {
        -magnitude
    }
}

/// `x + Lap(1 / eps)`; the output is not clamped.
pub fn laplace_randomize<R: Rng + ?Sized>(x: f64, eps: f64, rng: &mut R) -> Result<f64> {
    check_unit(x)?;
    Ok(x + sample_laplace(1.0 / eps, rng))
}

/// Gaussian-mechanism scale `sensitivity / eps * sqrt(2 ln(1.25 / delta))`.
pub fn gaussian_sigma(l2_sensitivity: f64, eps: f64, delta: f64) -> f64 {
    l2_sensitivity / eps * (2.0 * (1.25 / delta).ln()).sqrt()
}

/// I.i.d. `N(0, sigma^2)` vector.
pub fn gaussian_noise<R: Rng + ?Sized>(sigma: f64, dims: usize, rng: &mut R) -> Vec<f64> {
    (0..dims)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

/// Draws one value from the blanket distribution, in raw report space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlanketSampler {
    /// Uniform over `{1, .., b}`.
    UniformLevel { b: u32 },
    /// `u + Lap(1 / eps)` with `u ~ Unif[0, 1]`.
    ///
    /// Not the exact common part of the Laplace output distributions; it is
    /// symmetric about 1/2, which is all the estimator relies on.
    UniformPlusLaplace { eps: f64 },
    /// Always 1/2.
    Center,
}

impl BlanketSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            BlanketSampler::UniformLevel { b } => f64::from(rng.random_range(1..=b)),
            BlanketSampler::UniformPlusLaplace { eps } => {
                rng.random::<f64>() + sample_laplace(1.0 / eps, rng)
            }
            BlanketSampler::Center => 0.5,
        }
    }
}

/// Privacy blanket of a randomizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlanketSpec {
    /// Total probability mass of the blanket.
    pub gamma: f64,
    /// Mean of a blanket draw, on the normalized scale.
    pub blanket_mean: f64,
    pub sampler: BlanketSampler,
}

impl BlanketSpec {
    /// Weight of the blanket inside the expectation of a real report.
    ///
    /// KRR reports are the mixture `(1 - gamma) x + gamma * blanket_mean` in
    /// expectation. Laplace reports have mean `x` exactly, so nothing needs to
    /// be inverted and the weight is zero.
    pub fn mixing_weight(&self) -> f64 {
        match self.sampler {
            BlanketSampler::UniformLevel { .. } => self.gamma,
            BlanketSampler::UniformPlusLaplace { .. } | BlanketSampler::Center => 0.0,
        }
    }
}

/// Blanket of the KRR randomizer: uniform over `{1, .., b}`, mean
/// `(b + 1) / (2b)` once divided by `b`.
pub fn krr_blanket(eps: f64, b: u32) -> BlanketSpec {
    let bf = f64::from(b);
    BlanketSpec {
        gamma: krr_gamma(eps, b),
        blanket_mean: (bf + 1.0) / (2.0 * bf),
        sampler: BlanketSampler::UniformLevel { b },
    }
}

/// Blanket of [`krr_strict_randomize`]: uniform over `{1, .., b}`, which maps
/// to mean 1/2 on the normalized scale.
pub fn krr_strict_blanket(eps: f64, b: u32) -> BlanketSpec {
    BlanketSpec {
        gamma: krr_gamma(eps, b),
        blanket_mean: 0.5,
        sampler: BlanketSampler::UniformLevel { b },
    }
}

/// Blanket used for Laplace dummies and decoys.
pub fn laplace_blanket(eps: f64) -> BlanketSpec {
    BlanketSpec {
        gamma: laplace_gamma(eps),
        blanket_mean: 0.5,
        sampler: BlanketSampler::UniformPlusLaplace { eps },
    }
}

/// De-biased per-dimension mean.
///
/// `sum` adds up `n_total` normalized reports of which `n_real` are assumed to
/// come from users; the rest are blanket draws. Returns
/// `(sum - (n_total - n_real (1 - g)) m) / (n_real (1 - g))` where `g` is the
/// blanket's mixing weight and `m` its mean.
pub fn debias_mean(sum: f64, n_total: f64, n_real: f64, blanket: &BlanketSpec) -> Result<f64> {
    let effective = n_real * (1.0 - blanket.mixing_weight());
    if !(effective > 0.0) {
        return Err(Error::DegenerateEstimator(effective));
    }
    Ok((sum - (n_total - effective) * blanket.blanket_mean) / effective)
}

/// A configured per-value randomizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Randomizer {
    Krr { eps: f64, b: u32 },
    KrrStrict { eps: f64, b: u32 },
    Laplace { eps: f64 },
    Identity,
}

impl Randomizer {
    /// `eps` and `b` are ignored for [`RandomizerKind::Identity`].
    pub fn new(kind: RandomizerKind, eps: f64, b: u32) -> Result<Self> {
        if kind == RandomizerKind::Identity {
            return Ok(Randomizer::Identity);
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidInput(format!(
                "randomizer epsilon must be positive, got {eps}"
            )));
        }
        match kind {
            RandomizerKind::Krr | RandomizerKind::KrrStrict if b < 2 => Err(
                Error::InvalidInput(format!("KRR needs b >= 2, got {b}")),
            ),
            RandomizerKind::Krr => Ok(Randomizer::Krr { eps, b }),
            RandomizerKind::KrrStrict => Ok(Randomizer::KrrStrict { eps, b }),
            RandomizerKind::Laplace => Ok(Randomizer::Laplace { eps }),
            RandomizerKind::Identity => Ok(Randomizer::Identity),
        }
    }

    pub fn eps(&self) -> f64 {
        match *self {
            Randomizer::Krr { eps, .. }
            | Randomizer::KrrStrict { eps, .. }
            | Randomizer::Laplace { eps } => eps,
            Randomizer::Identity => f64::INFINITY,
        }
    }

    /// Blanket probability used for accounting.
    pub fn gamma(&self) -> f64 {
        self.blanket().gamma
    }

    pub fn blanket(&self) -> BlanketSpec {
        match *self {
            Randomizer::Krr { eps, b } => krr_blanket(eps, b),
            Randomizer::KrrStrict { eps, b } => krr_strict_blanket(eps, b),
            Randomizer::Laplace { eps } => laplace_blanket(eps),
            Randomizer::Identity => BlanketSpec {
                gamma: 0.0,
                blanket_mean: 0.5,
                sampler: BlanketSampler::Center,
            },
        }
    }

    /// Randomizes one normalized value into raw report space.
    pub fn randomize<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        match *self {
            Randomizer::Krr { eps, b } => krr_randomize(x, eps, b, rng).map(f64::from),
            Randomizer::KrrStrict { eps, b } => {
                krr_strict_randomize(x, eps, b, rng).map(f64::from)
            }
            Randomizer::Laplace { eps } => laplace_randomize(x, eps, rng),
            Randomizer::Identity => {
                check_unit(x)?;
                Ok(x)
            }
        }
    }

    /// Raw report to the normalized scale.
    pub fn to_unit(&self, report: f64) -> f64 {
        match *self {
            Randomizer::Krr { b, .. } => report / f64::from(b),
            Randomizer::KrrStrict { b, .. } => (report - 1.0) / f64::from(b - 1),
            Randomizer::Laplace { .. } | Randomizer::Identity => report,
        }
    }
}
