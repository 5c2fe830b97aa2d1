//! Dimension selection: uniform subsampling, Top-k with decoy indexes, and
//! the index-privacy calculus that ties the decoy count to `nu`.
//!
//! Dimension ids are zero-based throughout the crate.

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::randomizers::Randomizer;
use crate::types::NormalizedVector;

// Tolerance for ceil/floor of ratios such as 1 / (3.125 * 0.02) that are
// integers in exact arithmetic.
const RATIO_TOL: f64 = 1e-9;

fn ceil_tol(x: f64) -> f64 {
    (x - RATIO_TOL * x.abs().max(1.0)).ceil()
}

fn floor_tol(x: f64) -> f64 {
    (x + RATIO_TOL * x.abs().max(1.0)).floor()
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("beta must lie in (0, 1], got {beta}")))
    }
}

/// Output of a user's selection step, before sealing.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub indexes: Vec<u32>,
    /// Perturbed values in raw report space, parallel to `indexes`.
    pub values: Vec<f64>,
    /// Simulation metadata: which entries carry a real perturbed value.
    pub real_mask: Vec<bool>,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.indexes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexes.is_empty()
    }

    /// Splits the report into consecutive messages of `per_message` entries.
    pub fn chunks(&self, per_message: usize) -> impl Iterator<Item = (&[u32], &[f64])> {
        self.indexes
            .chunks(per_message)
            .zip(self.values.chunks(per_message))
    }
}

/// `k` distinct dimensions drawn uniformly without replacement.
pub fn random_subsample<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Vec<u32>> {
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!(
            "subsample size must satisfy 1 <= k <= d, got k = {k}, d = {d}"
        )));
    }
    Ok(index::sample(rng, d, k).into_iter().map(|i| i as u32).collect())
}

/// Inclusive range of admissible report multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LRange {
    pub min: usize,
    pub max: usize,
}

impl LRange {
    pub fn contains(&self, l: usize) -> bool {
        (self.min..=self.max).contains(&l)
    }
}

/// Report multipliers `l` that give `nu`-index privacy at sampling rate `beta`:
/// `[ceil(max{1/(nu beta), nu/(nu - 1 + beta)}), ceil(1/beta)]`.
///
/// `nu >= 1/beta` asks for no index privacy at all and admits `l = 1`.
pub fn valid_l_range(nu: f64, beta: f64) -> Result<LRange> {
    if !(nu >= 1.0) {
        return Err(Error::InvalidInput(format!("nu must be >= 1, got {nu}")));
    }
    check_beta(beta)?;
    let max = ceil_tol(1.0 / beta) as usize;
    let min = if nu * beta >= 1.0 - RATIO_TOL {
        1
    } else {
        let bound = (1.0 / (nu * beta)).max(nu / (nu - 1.0 + beta));
        ceil_tol(bound) as usize
    };
    if min > max {
        return Err(Error::InfeasibleConfig(format!(
            "no report multiplier gives nu = {nu} at beta = {beta}: need l >= {min} but l <= {max}"
        )));
    }
    Ok(LRange { min, max })
}

/// Strongest index privacy that reporting `l * k` indexes gives:
/// the smallest `nu` for which `l` is admissible. `l = 1` gives `1/beta`.
pub fn index_privacy_for_l(l: usize, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if l == 0 {
        return Err(Error::InvalidInput("l must be at least 1".into()));
    }
    if l == 1 {
        return Ok(1.0 / beta);
    }
    let lf = l as f64;
    Ok(1.0f64
        .max(1.0 / (lf * beta))
        .max(lf * (1.0 - beta) / (lf - 1.0)))
}

/// Largest report multiplier whose expected per-dimension load `n l beta`
/// fits in `n_p`: `floor(n_p / (n beta))`.
pub fn max_report_multiplier(n_p: usize, n: usize, beta: f64) -> Result<usize> {
    check_beta(beta)?;
    if n_p == 0 || n == 0 {
        return Err(Error::InvalidInput("n_p and n must be at least 1".into()));
    }
    let l = floor_tol(n_p as f64 / (n as f64 * beta));
    if l < 1.0 {
        return Err(Error::InfeasibleConfig(format!(
            "n_p = {n_p} cannot hold the expected {} real values per dimension",
            n as f64 * beta
        )));
    }
    Ok(l as usize)
}

/// Strongest index privacy a padding size allows:
/// `max{1, 1 / (floor(n_p / (n beta)) beta)}`.
pub fn max_index_privacy(n_p: usize, n: usize, beta: f64) -> Result<f64> {
    let l = max_report_multiplier(n_p, n, beta)?;
    Ok(1.0f64.max(1.0 / (l as f64 * beta)))
}

/// Every dimension, each value perturbed.
pub fn full_select<R: Rng + ?Sized>(
    x: &NormalizedVector,
    randomizer: &Randomizer,
    rng: &mut R,
) -> Result<SelectionResult> {
    let values = x
        .as_slice()
        .iter()
        .map(|&v| randomizer.randomize(v, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionResult {
        indexes: (0..x.len() as u32).collect(),
        real_mask: vec![true; values.len()],
        values,
    })
}

/// `k` uniformly sampled dimensions, each value perturbed.
pub fn subsample_select<R: Rng + ?Sized>(
    x: &NormalizedVector,
    k: usize,
    randomizer: &Randomizer,
    rng: &mut R,
) -> Result<SelectionResult> {
    let indexes = random_subsample(x.len(), k, rng)?;
    let values = indexes
        .iter()
        .map(|&j| randomizer.randomize(x.as_slice()[j as usize], rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionResult {
        real_mask: vec![true; k],
        indexes,
        values,
    })
}

/// The `k` dimensions with the largest `|x - 1/2|`, i.e. the largest clipped
/// gradient magnitudes. Ties are broken uniformly at random.
pub fn top_k_indexes<R: Rng + ?Sized>(x: &[f64], k: usize, rng: &mut R) -> Vec<u32> {
    let keys: Vec<f64> = x.iter().map(|v| (v - 0.5).abs()).collect();
    top_k_by(&keys, k, rng)
}

/// The `k` dimensions with the largest `keys`, ties broken uniformly at
/// random.
pub fn top_k_by<R: Rng + ?Sized>(keys: &[f64], k: usize, rng: &mut R) -> Vec<u32> {
    let d = keys.len();
    let mut order: Vec<(f64, u32, u32)> = keys
        .iter()
        .enumerate()
        .map(|(j, &v)| (v, rng.random::<u32>(), j as u32))
        .collect();
    let by_rank = |a: &(f64, u32, u32), b: &(f64, u32, u32)| {
        b.0.total_cmp(&a.0).then(b.1.cmp(&a.1))
    };
    if k < d {
        order.select_nth_unstable_by(k, by_rank);
    }
    order.truncate(k);
    order.into_iter().map(|(_, _, j)| j).collect()
}

/// Top-k selection with `k (l - 1)` decoy indexes.
///
/// Top-k entries carry `randomizer(x_j)`; decoys are drawn uniformly from the
/// remaining dimensions and carry blanket draws. The `l k` pairs come back
/// jointly permuted.
pub fn topk_select<R: Rng + ?Sized>(
    x: &NormalizedVector,
    k: usize,
    l: usize,
    randomizer: &Randomizer,
    rng: &mut R,
) -> Result<SelectionResult> {
    let keys: Vec<f64> = x.as_slice().iter().map(|v| (v - 0.5).abs()).collect();
    topk_select_by(x, &keys, k, l, randomizer, rng)
}

/// [`topk_select`] ranking dimensions by `keys` instead of `|x - 1/2|`.
pub fn topk_select_by<R: Rng + ?Sized>(
    x: &NormalizedVector,
    keys: &[f64],
    k: usize,
    l: usize,
    randomizer: &Randomizer,
    rng: &mut R,
) -> Result<SelectionResult> {
    let d = x.len();
    if k == 0 || l == 0 || k * l > d {
        return Err(Error::InvalidInput(format!(
            "top-k selection needs 1 <= k, 1 <= l and k * l <= d; got k = {k}, l = {l}, d = {d}"
        )));
    }
    if keys.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: keys.len() });
    }
    let top = top_k_by(keys, k, rng);
    let mut in_top = vec![false; d];
    for &j in &top {
        in_top[j as usize] = true;
    }

    let blanket = randomizer.blanket();
    let mut entries: Vec<(u32, f64, bool)> = Vec::with_capacity(k * l);
    for &j in &top {
        entries.push((j, randomizer.randomize(x.as_slice()[j as usize], rng)?, true));
    }
    let decoys = k * (l - 1);
    if decoys > 0 {
        let rest: Vec<u32> = (0..d as u32).filter(|&j| !in_top[j as usize]).collect();
        for pos in index::sample(rng, rest.len(), decoys) {
            entries.push((rest[pos], blanket.sampler.sample(rng), false));
        }
    }
    entries.shuffle(rng);

    let mut out = SelectionResult {
        indexes: Vec::with_capacity(entries.len()),
        values: Vec::with_capacity(entries.len()),
        real_mask: Vec::with_capacity(entries.len()),
    };
    for (j, v, real) in entries {
        out.indexes.push(j);
        out.values.push(v);
        out.real_mask.push(real);
    }
    Ok(out)
}
