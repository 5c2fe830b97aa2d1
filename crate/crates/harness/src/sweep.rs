//! One-knob grids over an experiment config, repeated over seeds.

use std::io::Write;

use serde::{Deserialize, Serialize};

use flame_core::Protocol;

use crate::dataset::DataSplit;
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, ExperimentConfig};

/// A knob a sweep can turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    /// Local budget per perturbed coordinate; `eps_l` follows.
    EpsPerDim,
    /// `n / n_p`.
    PoolRatio,
    /// Sampling rate `k / d`, keeping the per-coordinate budget.
    Beta,
    Clip,
    Lr,
}

impl Knob {
    pub fn name(self) -> &'static str {
        match self {
            Knob::EpsPerDim => "eps_per_dim",
            Knob::PoolRatio => "pool_ratio",
            Knob::Beta => "beta",
            Knob::Clip => "clip",
            Knob::Lr => "lr",
        }
    }
}

/// `base` with `knob` set to `value`.
pub fn apply_knob(base: &ExperimentConfig, knob: Knob, value: f64) -> Result<ExperimentConfig> {
    if !(value.is_finite() && value > 0.0) {
        return Err(HarnessError::Config(format!("{} must be positive, got {value}", knob.name())));
    }
    let mut cfg = base.clone();
    let p = &mut cfg.protocol;
    let perturbed = |p: &flame_core::ProtocolConfig| match p.protocol {
        Protocol::Simple => p.d,
        _ => p.k,
    };
    match knob {
        Knob::EpsPerDim => p.eps_l = value * perturbed(p) as f64,
        Knob::PoolRatio => {
            let n_p = (p.n as f64 / value).round() as usize;
            if n_p == 0 {
                return Err(HarnessError::Config(format!("pool_ratio {value} leaves n_p = 0")));
            }
            p.n_p = n_p;
        }
        Knob::Beta => {
            if p.protocol == Protocol::Simple {
                return Err(HarnessError::Config("protocol simple has no beta knob".into()));
            }
            let per_dim = p.eps_per_dim();
            p.k = ((value * p.d as f64).round() as usize).clamp(1, p.d);
            p.eps_l = per_dim * p.k as f64;
        }
        Knob::Clip => p.clip = value,
        Knob::Lr => cfg.lr = value,
    }
    Ok(cfg)
}

/// One finished run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub knob: Knob,
    pub value: f64,
    pub seed: u64,
    pub final_accuracy: f64,
    /// First epoch's epsilon, empty for non-private runs.
    pub epoch_epsilon: Option<f64>,
    pub epoch_delta: Option<f64>,
    pub max_user_count: usize,
}

/// Runs `base` at every `(value, seed)` pair, values outermost.
pub fn run_sweep(
    base: &ExperimentConfig,
    knob: Knob,
    values: &[f64],
    seeds: &[u64],
    data: &DataSplit,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Config("a sweep needs at least one value and one seed".into()));
    }
    let mut rows = Vec::with_capacity(values.len() * seeds.len());
    for &value in values {
        for &seed in seeds {
            let mut cfg = apply_knob(base, knob, value)?;
            cfg.protocol.seed = seed;
            let r = run_experiment(&cfg, data)?;
            let first = r.epoch_privacy.first();
            rows.push(SweepRow {
                knob,
                value,
                seed,
                final_accuracy: r.final_accuracy,
                epoch_epsilon: first.map(|p| p.epsilon),
                epoch_delta: first.map(|p| p.delta),
                max_user_count: r.max_user_count,
            });
        }
    }
    Ok(rows)
}

/// Mean final accuracy per value, in the order values first appear.
pub fn mean_by_value(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(v, _, _)| *v == r.value) {
            Some(e) => {
                e.1 += r.final_accuracy;
                e.2 += 1;
            }
            None => out.push((r.value, r.final_accuracy, 1)),
        }
    }
    out.into_iter().map(|(v, s, c)| (v, s / c as f64)).collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic, SyntheticSpec};
    use crate::experiment::Method;
    use flame_core::{ProtocolConfig, RandomizerKind};

    fn base() -> ExperimentConfig {
        let p = ProtocolConfig {
            protocol: Protocol::Double,
            randomizer: RandomizerKind::KrrStrict,
            d: 210,
            n: 50,
            k: 21,
            n_p: 50,
            l: None,
            nu: None,
            clip: 0.05,
            b: 2,
            eps_l: 21.0,
            rounds: 1,
            seed: 0,
        };
        let mut cfg = ExperimentConfig::new(Method::Flame, p);
        cfg.epochs = Some(1);
        cfg
    }

    #[test]
    fn knobs_touch_the_right_fields() {
        let b = base();
        let e = apply_knob(&b, Knob::EpsPerDim, 2.0).unwrap();
        assert_eq!(e.protocol.eps_l, 42.0);
        let r = apply_knob(&b, Knob::PoolRatio, 2.0).unwrap();
        assert_eq!(r.protocol.n_p, 25);
        let s = apply_knob(&b, Knob::Beta, 0.2).unwrap();
        assert_eq!(s.protocol.k, 42);
        assert_eq!(s.protocol.eps_per_dim(), 1.0);
        assert_eq!(apply_knob(&b, Knob::Lr, 0.5).unwrap().lr, 0.5);
        assert!(apply_knob(&b, Knob::Clip, 0.0).is_err());
        assert!(apply_knob(&b, Knob::PoolRatio, 1000.0).is_err());
    }

    #[test]
    fn sweep_rows_and_means() {
        let mut s = SyntheticSpec::new(300, 100, 3);
        s.dims = 20;
        let data = synthetic(&s).unwrap();
        let rows = run_sweep(&base(), Knob::EpsPerDim, &[0.5, 4.0], &[1, 2], &data).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].value, 0.5);
        assert_eq!(rows[1].seed, 2);
        let means = mean_by_value(&rows);
        assert_eq!(means.len(), 2);
        assert!(rows.iter().all(|r| r.epoch_epsilon.is_some()));
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("knob,value,seed,final_accuracy,epoch_epsilon,epoch_delta,max_user_count\n"));
        assert!(run_sweep(&base(), Knob::Lr, &[], &[1], &data).is_err());
    }
}
