//! Reference aggregators: non-private averaging, central Gaussian DP and the
//! two local-DP variants.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use flame_core::analyzer::apply_delta;
use flame_core::encoding::{clip_linf, denormalize, normalize};
use flame_core::randomizers::{gaussian_noise, gaussian_sigma, sample_laplace};
use flame_core::{GlobalModel, LocalUpdate, PrivacyParams};

use crate::error::{HarnessError, Result};
use crate::protocol::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Npfl,
    DpflGauss,
    LdpflGauss,
    LdpflLap,
}

/// `x * min(1, c / ||x||_2)`.
pub fn l2_clip(x: &[f64], c: f64) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if norm > c { c / norm } else { 1.0 };
    x.iter().map(|v| v * scale).collect()
}

fn check_users(updates: &[LocalUpdate], d: usize) -> Result<()> {
    if updates.is_empty() {
        return Err(HarnessError::Config("a round needs at least one user".into()));
    }
    if let Some(u) = updates.iter().find(|u| u.len() != d) {
        return Err(flame_core::Error::DimensionMismatch { expected: d, got: u.len() }.into());
    }
    Ok(())
}

fn sum_into(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

/// `theta + (1/n) sum x_i`.
pub fn npfl_step(model: &GlobalModel, updates: &[LocalUpdate]) -> Result<GlobalModel> {
    check_users(updates, model.dim())?;
    let mut acc = vec![0.0; model.dim()];
    for u in updates {
        sum_into(&mut acc, u.as_slice());
    }
    let n = updates.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(apply_delta(model, &acc)?)
}

/// Noise scale for the Gaussian baselines: L2 sensitivity `2c`.
pub fn gaussian_scale(c: f64, target: PrivacyParams) -> f64 {
    gaussian_sigma(2.0 * c, target.epsilon, target.delta)
}

/// `theta + (1/n)(sum clip2(x_i) + N(0, sigma^2 I))`.
pub fn dpfl_step<R: Rng + ?Sized>(
    model: &GlobalModel,
    updates: &[LocalUpdate],
    c: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<GlobalModel> {
    check_users(updates, model.dim())?;
    let mut acc = vec![0.0; model.dim()];
    for u in updates {
        sum_into(&mut acc, &l2_clip(u.as_slice(), c));
    }
    if sigma > 0.0 {
        sum_into(&mut acc, &gaussian_noise(sigma, model.dim(), rng));
    }
    let n = updates.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(apply_delta(model, &acc)?)
}

/// Every user adds `N(0, sigma^2 I)` to its L2-clipped update; the server
/// averages.
pub fn ldpfl_gauss_step(
    model: &GlobalModel,
    updates: &[LocalUpdate],
    c: f64,
    sigma: f64,
    seed: u64,
) -> Result<GlobalModel> {
    check_users(updates, model.dim())?;
    let round = model.round;
    let noisy: Vec<Vec<f64>> = updates
        .par_iter()
        .enumerate()
        .map(|(u, x)| {
            let mut rng = stream_rng(seed, round, u as u64 + 1);
            let mut v = l2_clip(x.as_slice(), c);
            let noise = gaussian_noise(sigma, v.len(), &mut rng);
            sum_into(&mut v, &noise);
            v
        })
        .collect();
    let mut acc = vec![0.0; model.dim()];
    for v in &noisy {
        sum_into(&mut acc, v);
    }
    let n = updates.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(apply_delta(model, &acc)?)
}

/// Every user clips to `[-c, c]`, normalizes and adds `Lap(d / eps_l)` to each
/// coordinate; the server averages, maps back and clamps to `[-c, c]`.
pub fn ldpfl_laplace_step(
    model: &GlobalModel,
    updates: &[LocalUpdate],
    c: f64,
    eps_l: f64,
    seed: u64,
) -> Result<GlobalModel> {
    check_users(updates, model.dim())?;
    let d = model.dim();
    let scale = d as f64 / eps_l;
    let round = model.round;
    let noisy = updates
        .par_iter()
        .enumerate()
        .map(|(u, x)| {
            let mut rng = stream_rng(seed, round, u as u64 + 1);
            let unit = normalize(&clip_linf(x, c)?, c)?;
            Ok(unit
                .as_slice()
                .iter()
                .map(|&v| v + sample_laplace(scale, &mut rng))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0; d];
    for v in &noisy {
        sum_into(&mut acc, v);
    }
    let n = updates.len() as f64;
    let z: Vec<f64> = acc.iter().map(|&s| denormalize(s / n, c).clamp(-c, c)).collect();
    Ok(apply_delta(model, &z)?)
}
