//! Closed-form privacy calculus: shuffle and subsampling amplification,
//! composition, and per-protocol reports.
//!
//! All logarithms are natural.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::randomizers::krr_gamma;
use crate::types::{PrivacyParams, Protocol, ProtocolConfig, RandomizerKind};

fn check_eps(name: &str, eps: f64) -> Result<()> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {eps}")))
    }
}

fn check_open_delta(name: &str, delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must lie in (0, 1), got {delta}")))
    }
}

fn params(bound: &'static str, epsilon: f64, delta: f64) -> Result<PrivacyParams> {
    if !(delta < 1.0) {
        return Err(Error::Validity {
            bound,
            detail: format!("delta = {delta} is vacuous"),
        });
    }
    Ok(PrivacyParams { epsilon, delta })
}

/// Numerical shuffle amplification for a randomizer with blanket
/// probability `gamma`: maps `(gamma, n, delta)` to a central epsilon.
pub trait AmplificationBound: Send + Sync {
    fn name(&self) -> &'static str;

    fn epsilon(&self, gamma: f64, n: usize, delta: f64) -> Result<f64>;

    /// Whether the bound's own applicability condition holds.
    fn holds(&self, _gamma: f64, _n: usize, _delta: f64) -> bool {
        true
    }
}

/// The closed form for the `b`-level randomized response randomizer.
#[derive(Debug, Clone, Copy)]
pub struct KrrClosedForm {
    pub b: u32,
}

impl KrrClosedForm {
    fn lower(&self, n: usize, delta: f64) -> f64 {
        (14.0 * (2.0 / delta).ln() * (self.b as f64 - 1.0) / (n as f64 - 1.0)).sqrt()
    }
}

impl AmplificationBound for KrrClosedForm {
    fn name(&self) -> &'static str {
        "krr-closed-form"
    }

    fn epsilon(&self, gamma: f64, n: usize, delta: f64) -> Result<f64> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("need n >= 2 reports, got {n}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        // The closed form stays finite up to delta = 2.
        if !(delta > 0.0 && delta < 2.0) {
            return Err(Error::InvalidInput(format!("delta must lie in (0, 2), got {delta}")));
        }
        // e^eps + b - 1 = b / gamma
        let spread = self.b as f64 / gamma;
        Ok((14.0 * (2.0 / delta).ln() * spread / (n as f64 - 1.0)).sqrt())
    }

    fn holds(&self, gamma: f64, n: usize, delta: f64) -> bool {
        match self.epsilon(gamma, n, delta) {
            Ok(eps) => delta < 1.0 && self.lower(n, delta) < eps && eps <= 1.0,
            Err(_) => false,
        }
    }
}

/// Result of shuffling `n` reports of one value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShuffleAmplification {
    pub params: PrivacyParams,
    /// Smallest epsilon the bound may be applied at.
    pub lower: f64,
    pub valid: bool,
}

/// Central guarantee of `n` shuffled `eps_l`-LDP randomized response reports
/// with `b` levels.
pub fn shuffle_amplify_krr(eps_l: f64, b: u32, n: usize, delta_c: f64) -> Result<ShuffleAmplification> {
    check_eps("eps_l", eps_l)?;
    if b < 2 {
        return Err(Error::InvalidInput(format!("b must be at least 2, got {b}")));
    }
    check_open_delta("delta_c", delta_c)?;
    let bound = KrrClosedForm { b };
    let gamma = krr_gamma(eps_l, b);
    let eps = bound.epsilon(gamma, n, delta_c)?;
    let lower = bound.lower(n, delta_c);
    Ok(ShuffleAmplification {
        params: PrivacyParams { epsilon: eps, delta: delta_c },
        lower,
        valid: lower < eps && eps <= 1.0,
    })
}

/// Amplification by sampling a fraction `rate` of the population.
pub fn subsample_amplify_rate(p: PrivacyParams, rate: f64) -> Result<PrivacyParams> {
    check_eps("epsilon", p.epsilon)?;
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidInput(format!("sampling rate must lie in (0, 1], got {rate}")));
    }
    if rate == 1.0 {
        return Ok(p);
    }
    Ok(PrivacyParams {
        epsilon: (rate * p.epsilon.exp_m1()).ln_1p(),
        delta: rate * p.delta,
    })
}

/// Amplification by sampling `m` of `n` records without replacement.
pub fn subsample_amplify(p: PrivacyParams, m: usize, n: usize) -> Result<PrivacyParams> {
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("need 1 <= m <= n, got m = {m}, n = {n}")));
    }
    subsample_amplify_rate(p, m as f64 / n as f64)
}

/// Basic composition of `t` mechanisms.
pub fn compose_sequential(eps: f64, t: usize) -> f64 {
    t as f64 * eps
}

/// Advanced composition of `t` mechanisms with slack `delta_prime`.
pub fn compose_advanced(p: PrivacyParams, t: usize, delta_prime: f64) -> Result<PrivacyParams> {
    check_eps("epsilon", p.epsilon)?;
    if t == 0 {
        return Err(Error::InvalidInput("t must be at least 1".into()));
    }
    check_open_delta("delta_prime", delta_prime)?;
    let t_f = t as f64;
    let eps = (2.0 * t_f * (1.0 / delta_prime).ln()).sqrt() * p.epsilon
        + t_f * p.epsilon * p.epsilon.exp_m1();
    params("advanced composition", eps, t_f * p.delta + delta_prime)
}

/// A vector-level bound with both branches of its minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VectorBound {
    pub params: PrivacyParams,
    pub linear: f64,
    pub advanced: f64,
}

fn vector_bound(
    name: &'static str,
    eps: f64,
    delta: f64,
    dims: f64,
) -> Result<VectorBound> {
    check_eps("eps_cd", eps)?;
    check_open_delta("delta_cd", delta)?;
    let linear = dims * eps;
    let advanced = eps * (2.0 * dims * (1.0 / delta).ln()).sqrt() + dims * eps * eps.exp_m1();
    Ok(VectorBound {
        params: params(name, linear.min(advanced), delta * (dims + 1.0))?,
        linear,
        advanced,
    })
}

/// Vector guarantee when all `d` dimensions are reported.
pub fn simple_vector_bound(eps_cd: f64, delta_cd: f64, d: usize) -> Result<VectorBound> {
    if d == 0 {
        return Err(Error::InvalidInput("d must be at least 1".into()));
    }
    vector_bound("simple vector", eps_cd, delta_cd, d as f64)
}

/// Vector guarantee when each user reports a `beta` fraction of `d`
/// dimensions; neighbouring vectors differ in at most `2 beta d` of them.
pub fn double_vector_bound(eps_cd: f64, delta_cd: f64, beta: f64, d: usize) -> Result<VectorBound> {
    if d == 0 {
        return Err(Error::InvalidInput("d must be at least 1".into()));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidInput(format!("beta must lie in (0, 1], got {beta}")));
    }
    vector_bound("double vector", eps_cd, delta_cd, 2.0 * beta * d as f64)
}

/// Per-dimension result of subsampling followed by padded shuffling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoubleDim {
    /// Shuffle-only epsilon over the `n_p` padded reports.
    pub eps_ck: f64,
    pub params: PrivacyParams,
    pub valid: bool,
}

/// Per-dimension guarantee under subsampling at rate `beta` and shuffling
/// among `n_p` padded reports, using the randomized response closed form.
pub fn double_dim_bound(eps_lk: f64, b: u32, beta: f64, n_p: usize, delta_cd: f64) -> Result<DoubleDim> {
    check_eps("eps_lk", eps_lk)?;
    double_dim_bound_with(&KrrClosedForm { b }, krr_gamma(eps_lk, b), beta, n_p, delta_cd)
}

/// [`double_dim_bound`] for any shuffle bound.
pub fn double_dim_bound_with(
    bound: &dyn AmplificationBound,
    gamma: f64,
    beta: f64,
    n_p: usize,
    delta_cd: f64,
) -> Result<DoubleDim> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidInput(format!("beta must lie in (0, 1], got {beta}")));
    }
    check_open_delta("delta_cd", delta_cd)?;
    if delta_cd >= 2.0 * beta {
        return Err(Error::Validity {
            bound: "double dimension",
            detail: format!("delta_cd = {delta_cd} must be below 2 beta = {}", 2.0 * beta),
        });
    }
    // The shuffle step runs at delta_ck = delta_cd / beta, which subsampling
    // scales back down.
    let delta_ck = delta_cd / beta;
    let eps_ck = bound.epsilon(gamma, n_p, delta_ck)?;
    let valid = delta_ck < 1.0 && bound.holds(gamma, n_p, delta_ck);
    let eps_cd = (beta * eps_ck.exp_m1()).ln_1p();
    Ok(DoubleDim {
        eps_ck,
        params: PrivacyParams { epsilon: eps_cd, delta: delta_cd },
        valid,
    })
}

/// Outcome of one applicability check inside a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityFlag {
    pub bound: &'static str,
    pub holds: bool,
    pub detail: String,
}

/// Everything the accountant says about one protocol configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplificationReport {
    pub protocol: Protocol,
    pub local: PrivacyParams,
    /// `eps_l / d` for Simple, `eps_l / k` otherwise.
    pub per_coordinate_local: f64,
    /// Shuffle-only epsilon before subsampling, when subsampling applies.
    pub eps_ck: Option<f64>,
    pub per_dim_central: PrivacyParams,
    /// Per-round vector guarantee.
    pub central: PrivacyParams,
    pub central_linear: f64,
    pub central_advanced: f64,
    pub rounds_per_epoch: usize,
    pub epoch: PrivacyParams,
    /// `eps_l / central.epsilon`.
    pub magnification: f64,
    pub validity: Vec<ValidityFlag>,
}

impl AmplificationReport {
    pub fn all_valid(&self) -> bool {
        self.validity.iter().all(|v| v.holds)
    }
}

/// Knobs for [`protocol_report_with`].
#[derive(Clone, Copy)]
pub struct AccountingOptions<'a> {
    pub rounds_per_epoch: usize,
    /// Total delta for one epoch.
    pub delta_budget: f64,
    /// Credit amplification from dimension subsampling. Off gives the
    /// shuffle-only ablation.
    pub subsampling: bool,
    /// Shuffle among `n_s` reports instead of `n_p` (the pre-padding bound).
    pub n_s: Option<usize>,
    /// Replaces the randomized response closed form.
    pub bound: Option<&'a dyn AmplificationBound>,
}

impl<'a> AccountingOptions<'a> {
    pub fn new(rounds_per_epoch: usize, delta_budget: f64) -> Self {
        Self {
            rounds_per_epoch,
            delta_budget,
            subsampling: true,
            n_s: None,
            bound: None,
        }
    }
}

/// Report with the default options.
pub fn protocol_report(
    cfg: &ProtocolConfig,
    rounds_per_epoch: usize,
    delta_budget: f64,
) -> Result<AmplificationReport> {
    protocol_report_with(cfg, &AccountingOptions::new(rounds_per_epoch, delta_budget))
}

/// Per-round and per-epoch guarantees of a protocol configuration.
///
/// With `t > 1` rounds per epoch, each round gets `delta_budget / (2t)` and
/// advanced composition gets the other half as slack; the epoch epsilon is
/// the smaller of basic and advanced composition.
pub fn protocol_report_with(cfg: &ProtocolConfig, opts: &AccountingOptions<'_>) -> Result<AmplificationReport> {
    cfg.validate()?;
    check_open_delta("delta_budget", opts.delta_budget)?;
    let t = opts.rounds_per_epoch;
    if t == 0 {
        return Err(Error::InvalidInput("rounds_per_epoch must be at least 1".into()));
    }
    let delta_round = if t == 1 {
        opts.delta_budget
    } else {
        opts.delta_budget / (2.0 * t as f64)
    };

    let closed = KrrClosedForm { b: cfg.b };
    let bound: &dyn AmplificationBound = opts.bound.unwrap_or(&closed);
    let eps_dim = cfg.eps_per_dim();
    let gamma = krr_gamma(eps_dim, cfg.b);
    let mut validity = Vec::new();
    if opts.bound.is_none()
        && matches!(cfg.randomizer, RandomizerKind::Laplace | RandomizerKind::Identity)
    {
        validity.push(ValidityFlag {
            bound: "randomizer",
            holds: false,
            detail: "the closed form covers randomized response only".into(),
        });
    }

    let (eps_ck, per_dim, vector) = match cfg.protocol {
        Protocol::Simple => {
            let delta_cd = delta_round / (cfg.d as f64 + 1.0);
            let eps_cd = bound.epsilon(gamma, cfg.n, delta_cd)?;
            validity.push(ValidityFlag {
                bound: "shuffle",
                holds: bound.holds(gamma, cfg.n, delta_cd),
                detail: format!("{} at n = {}, eps = {eps_cd:.6}", bound.name(), cfg.n),
            });
            let vector = simple_vector_bound(eps_cd, delta_cd, cfg.d)?;
            (None, PrivacyParams { epsilon: eps_cd, delta: delta_cd }, vector)
        }
        Protocol::Double | Protocol::Topk => {
            let beta = cfg.beta();
            let delta_cd = delta_round / (2.0 * beta * cfg.d as f64 + 1.0);
            let pool = opts.n_s.unwrap_or(cfg.n_p);
            let (eps_ck, per_dim) = if opts.subsampling {
                let dd = double_dim_bound_with(bound, gamma, beta, pool, delta_cd)?;
                validity.push(ValidityFlag {
                    bound: "double dimension",
                    holds: dd.valid,
                    detail: format!("eps_ck = {:.6} over {pool} reports", dd.eps_ck),
                });
                (Some(dd.eps_ck), dd.params)
            } else {
                let eps = bound.epsilon(gamma, pool, delta_cd)?;
                validity.push(ValidityFlag {
                    bound: "shuffle",
                    holds: bound.holds(gamma, pool, delta_cd),
                    detail: format!("{} at n = {pool}, eps = {eps:.6}", bound.name()),
                });
                (None, PrivacyParams { epsilon: eps, delta: delta_cd })
            };
            let vector = double_vector_bound(per_dim.epsilon, delta_cd, beta, cfg.d)?;
            (eps_ck, per_dim, vector)
        }
    };

    let central = vector.params;
    // The range conditions above do not guarantee the shuffle bound beats the
    // local one.
    validity.push(ValidityFlag {
        bound: "amplification",
        holds: central.epsilon <= cfg.eps_l,
        detail: format!("central {:.6} vs local {}", central.epsilon, cfg.eps_l),
    });
    let epoch = if t == 1 {
        central
    } else {
        let adv = compose_advanced(central, t, opts.delta_budget / 2.0)?;
        PrivacyParams {
            epsilon: compose_sequential(central.epsilon, t).min(adv.epsilon),
            delta: opts.delta_budget,
        }
    };
    Ok(AmplificationReport {
        protocol: cfg.protocol,
        local: PrivacyParams { epsilon: cfg.eps_l, delta: 0.0 },
        per_coordinate_local: eps_dim,
        eps_ck,
        per_dim_central: per_dim,
        central,
        central_linear: vector.linear,
        central_advanced: vector.advanced,
        rounds_per_epoch: t,
        epoch,
        magnification: cfg.eps_l / central.epsilon,
        validity,
    })
}

/// One row of an amplification curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub protocol: Protocol,
    pub d: usize,
    pub n: usize,
    pub n_p: usize,
    pub beta: f64,
    pub b: u32,
    pub eps_l: f64,
    pub eps_per_dim: f64,
    pub eps_c: f64,
    pub delta_c: f64,
    pub magnification: f64,
}

/// Grid of one-round reports at matched per-dimension budgets: each row
/// spends `eps_per_dim` on every perturbed coordinate.
pub fn amplification_curve(
    base: &ProtocolConfig,
    eps_per_dim: &[f64],
    delta_c: f64,
) -> Result<Vec<CurveRow>> {
    let dims = match base.protocol {
        Protocol::Simple => base.d,
        Protocol::Double | Protocol::Topk => base.k,
    };
    eps_per_dim
        .iter()
        .map(|&e| {
            let cfg = ProtocolConfig { eps_l: e * dims as f64, ..base.clone() };
            let r = protocol_report(&cfg, 1, delta_c)?;
            Ok(CurveRow {
                protocol: cfg.protocol,
                d: cfg.d,
                n: cfg.n,
                n_p: cfg.per_dim_total(),
                beta: cfg.beta(),
                b: cfg.b,
                eps_l: cfg.eps_l,
                eps_per_dim: r.per_coordinate_local,
                eps_c: r.central.epsilon,
                delta_c: r.central.delta,
                magnification: r.magnification,
            })
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RandomizerKind;
    use proptest::prelude::*;

    // Frozen from tests/oracles/accountant_golden.py (mpmath, 50 digits).
    const SHUFFLE_1_2_10001: f64 = 0.2748202863587054;
    const SHUFFLE_LOWER: f64 = 0.14252059792862892;
    const SUBSAMPLE_1_TENTH: f64 = 0.1585650787404291;
    const ADVANCED_EPS: f64 = 1.7674290543447575;
    const SIMPLE_VECTOR: f64 = 0.6170210188382266;
    const DOUBLE_ECK: f64 = 0.7899494735850401;
    const DOUBLE_ECD: f64 = 0.11362195474095079;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn cfg(protocol: Protocol, d: usize, k: usize, n: usize, n_p: usize, eps_l: f64) -> ProtocolConfig {
        ProtocolConfig {
            protocol,
            randomizer: RandomizerKind::Krr,
            d,
            n,
            k,
            n_p,
            l: None,
            nu: None,
            clip: 0.01,
            b: 2,
            eps_l,
            rounds: 1,
            seed: 0,
        }
    }

    #[test]
    fn shuffle_golden() {
        let r = shuffle_amplify_krr(1.0, 2, 10001, 1e-6).unwrap();
        assert!(rel(r.params.epsilon, SHUFFLE_1_2_10001) < 1e-12);
        assert!(rel(r.lower, SHUFFLE_LOWER) < 1e-12);
        assert!(r.valid);
        assert_eq!(r.params.delta, 1e-6);
        assert!(shuffle_amplify_krr(1.0, 2, 1, 1e-6).is_err());
        assert!(shuffle_amplify_krr(1.0, 2, 100, 0.0).is_err());
        assert!(shuffle_amplify_krr(f64::NAN, 2, 100, 1e-6).is_err());
        // Too few users: eps_c > 1 so the flag drops.
        assert!(!shuffle_amplify_krr(1.0, 2, 50, 1e-6).unwrap().valid);
    }

    #[test]
    fn shuffle_monotone() {
        let e = |eps, b, n| shuffle_amplify_krr(eps, b, n, 1e-6).unwrap().params.epsilon;
        for n in [10, 100, 1000, 10_000] {
            assert!(e(1.0, 2, n + 1) < e(1.0, 2, n));
            assert!(e(1.1, 2, n) > e(1.0, 2, n));
            assert!(e(1.0, 3, n) > e(1.0, 2, n));
        }
    }

    #[test]
    fn subsample_golden() {
        let p = PrivacyParams::new(1.0, 1e-6).unwrap();
        let r = subsample_amplify(p, 1, 10).unwrap();
        assert!(rel(r.epsilon, SUBSAMPLE_1_TENTH) < 1e-12);
        assert!(rel(r.delta, 1e-7) < 1e-12);
        assert_eq!(subsample_amplify(p, 7, 7).unwrap(), p);
        assert!(subsample_amplify(p, 8, 7).is_err());
        assert!(subsample_amplify(p, 0, 7).is_err());
        // Small-epsilon limit: (m/n) eps.
        let tiny = PrivacyParams::pure(1e-6).unwrap();
        let r = subsample_amplify(tiny, 1, 10).unwrap();
        assert!(rel(r.epsilon, 1e-7) < 1e-3);
    }

    #[test]
    fn composition_golden() {
        assert_eq!(compose_sequential(0.3, 1), 0.3);
        assert_eq!(compose_sequential(0.0, 9), 0.0);
        assert!(rel(compose_sequential(0.01, 7850), 78.5) < 1e-12);

        let p = PrivacyParams::new(0.1, 1e-6).unwrap();
        let r = compose_advanced(p, 10, 1e-6).unwrap();
        assert!(rel(r.epsilon, ADVANCED_EPS) < 1e-12);
        assert!(rel(r.delta, 1.1e-5) < 1e-12);

        let one = compose_advanced(p, 1, 1e-3).unwrap();
        let expect = (2.0 * (1e3f64).ln()).sqrt() * 0.1 + 0.1 * 0.1f64.exp_m1();
        assert!(rel(one.epsilon, expect) < 1e-14);
        assert!(rel(one.delta, 1e-6 + 1e-3) < 1e-14);

        let mut prev = 0.0;
        for t in 1..=100 {
            let e = compose_advanced(p, t, 1e-6).unwrap().epsilon;
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn simple_vector_golden() {
        let r = simple_vector_bound(0.01, 1e-8, 100).unwrap();
        assert!(rel(r.params.epsilon, SIMPLE_VECTOR) < 1e-12);
        assert!(rel(r.params.delta, 1.01e-6) < 1e-12);
        assert!(rel(r.linear, 1.0) < 1e-12);

        let one = simple_vector_bound(0.3, 1e-8, 1).unwrap();
        assert_eq!(one.params.epsilon, 0.3);
        assert_eq!(one.params.delta, 2e-8);

        for eps in [1.0, 2.0, 5.0] {
            let r = simple_vector_bound(eps, 1e-8, 50).unwrap();
            assert_eq!(r.params.epsilon, r.linear);
        }
    }

    #[test]
    fn double_dim_golden() {
        let r = double_dim_bound(0.5, 2, 0.1, 1000, 1e-8).unwrap();
        assert!(rel(r.eps_ck, DOUBLE_ECK) < 1e-12);
        assert!(rel(r.params.epsilon, DOUBLE_ECD) < 1e-12);
        assert_eq!(r.params.delta, 1e-8);
        assert!(matches!(
            double_dim_bound(0.5, 2, 0.1, 1000, 0.2),
            Err(Error::Validity { .. })
        ));
    }

    #[test]
    fn double_dim_at_full_rate_is_shuffle_bound() {
        for (eps, n) in [(0.5, 1000), (1.0, 10001), (2.0, 333)] {
            let d = double_dim_bound(eps, 2, 1.0, n, 1e-7).unwrap();
            let s = shuffle_amplify_krr(eps, 2, n, 1e-7).unwrap();
            assert_eq!(d.eps_ck, s.params.epsilon);
            assert_eq!(d.params.epsilon, s.params.epsilon);
            assert_eq!(d.valid, s.valid);
        }
    }

    #[test]
    fn double_vector_instances() {
        // beta d = 1: the linear branch is 2 eps.
        let r = double_vector_bound(0.05, 1e-8, 0.01, 100).unwrap();
        assert!(rel(r.linear, 0.1) < 1e-12);
        assert!(rel(r.params.delta, 3e-8) < 1e-12);
        // 2 beta d = d at beta = 1/2 matches the all-dimension bound.
        let a = double_vector_bound(0.05, 1e-8, 0.5, 2).unwrap();
        let b = simple_vector_bound(0.05, 1e-8, 2).unwrap();
        assert_eq!(a, b);
        assert!(rel(a.params.epsilon, 0.1) < 1e-12);
        let mut prev = 0.0;
        for i in 1..=20 {
            let e = double_vector_bound(0.05, 1e-8, i as f64 / 20.0, 1000).unwrap().params.epsilon;
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn experiment_per_dimension_splits() {
        let s = cfg(Protocol::Simple, 7850, 7850, 1000, 1000, 78.5);
        let d = cfg(Protocol::Double, 7850, 157, 1000, 334, 78.5);
        assert!(rel(protocol_report(&s, 1, 5e-6).unwrap().per_coordinate_local, 0.01) < 1e-12);
        assert!(rel(protocol_report(&d, 1, 5e-6).unwrap().per_coordinate_local, 0.5) < 1e-12);
    }

    #[test]
    fn report_structure() {
        let c = cfg(Protocol::Double, 7850, 157, 1000, 334, 78.5);
        let r = protocol_report(&c, 1, 5e-6).unwrap();
        let beta = c.beta();
        let delta_cd = 5e-6 / (2.0 * beta * 7850.0 + 1.0);
        let dd = double_dim_bound(0.5, 2, beta, 334, delta_cd).unwrap();
        assert_eq!(r.eps_ck, Some(dd.eps_ck));
        assert_eq!(r.per_dim_central, dd.params);
        let v = double_vector_bound(dd.params.epsilon, delta_cd, beta, 7850).unwrap();
        assert_eq!(r.central, v.params);
        assert!(rel(r.central.delta, 5e-6) < 1e-12);
        assert_eq!(r.magnification, 78.5 / r.central.epsilon);

        let multi = protocol_report(&c, 10, 5e-6).unwrap();
        assert_eq!(multi.epoch.delta, 5e-6);
        assert!(multi.epoch.epsilon <= 10.0 * multi.central.epsilon);
        // Each round gets a smaller delta share, so a larger epsilon.
        assert!(multi.central.epsilon > r.central.epsilon);

        // Without subsampling the same config looks much worse.
        let mut opts = AccountingOptions::new(1, 5e-6);
        opts.subsampling = false;
        let ablated = protocol_report_with(&c, &opts).unwrap();
        assert!(ablated.central.epsilon > 10.0 * r.central.epsilon);
        assert!(ablated.eps_ck.is_none());
    }

    #[test]
    fn range_condition_alone_does_not_amplify() {
        let c = cfg(Protocol::Simple, 200, 200, 2000, 2000, 10.0);
        let r = protocol_report(&c, 1, 1e-6).unwrap();
        let shuffle = r.validity.iter().find(|v| v.bound == "shuffle").unwrap();
        assert!(shuffle.holds);
        assert!(r.central.epsilon > 10.0);
        assert!(!r.all_valid());
    }

    #[test]
    fn report_flags_laplace() {
        let mut c = cfg(Protocol::Double, 100, 10, 1000, 1000, 5.0);
        c.randomizer = RandomizerKind::Laplace;
        let r = protocol_report(&c, 1, 1e-6).unwrap();
        assert!(!r.all_valid());
        assert!(r.validity.iter().any(|v| v.bound == "randomizer"));
    }

    #[test]
    fn report_rejects_infeasible_delta() {
        let c = cfg(Protocol::Double, 100, 10, 1000, 1000, 5.0);
        assert!(protocol_report(&c, 0, 1e-6).is_err());
        assert!(protocol_report(&c, 1, 1.5).is_err());
    }

    struct Halved;
    impl AmplificationBound for Halved {
        fn name(&self) -> &'static str {
            "halved"
        }
        fn epsilon(&self, gamma: f64, n: usize, delta: f64) -> Result<f64> {
            Ok(KrrClosedForm { b: 2 }.epsilon(gamma, n, delta)? / 2.0)
        }
    }

    #[test]
    fn plug_in_bound_is_used() {
        let c = cfg(Protocol::Simple, 10, 10, 5000, 5000, 2.0);
        let base = protocol_report(&c, 1, 1e-6).unwrap();
        let mut opts = AccountingOptions::new(1, 1e-6);
        opts.bound = Some(&Halved);
        let r = protocol_report_with(&c, &opts).unwrap();
        assert!(rel(r.per_dim_central.epsilon, base.per_dim_central.epsilon / 2.0) < 1e-12);
    }

    #[test]
    fn pre_padding_pool() {
        let c = cfg(Protocol::Double, 1000, 100, 1000, 400, 50.0);
        let mut opts = AccountingOptions::new(1, 1e-6);
        opts.n_s = Some(100);
        let small = protocol_report_with(&c, &opts).unwrap();
        let padded = protocol_report(&c, 1, 1e-6).unwrap();
        assert!(small.eps_ck.unwrap() > padded.eps_ck.unwrap());
    }

    #[test]
    fn curve_csv_columns() {
        let base = cfg(Protocol::Double, 1000, 10, 1000, 1000, 1.0);
        let rows = amplification_curve(&base, &[0.1, 0.5], 1e-6).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rel(rows[1].eps_l, 5.0) < 1e-12);
        let mut buf = Vec::new();
        write_curve_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "protocol,d,n,n_p,beta,b,eps_l,eps_per_dim,eps_c,delta_c,magnification"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("double,1000,1000,1000,0.01,2,"));
    }

    proptest! {
        #[test]
        fn subsampling_never_hurts(eps in 0.0f64..10.0, delta in 0.0f64..0.5, m in 1usize..100, extra in 0usize..100) {
            let p = PrivacyParams { epsilon: eps, delta };
            let r = subsample_amplify(p, m, m + extra).unwrap();
            prop_assert!(r.epsilon <= eps * (1.0 + 1e-12));
            prop_assert!(r.delta <= delta);
        }

        #[test]
        fn double_dim_amplifies(eps in 0.05f64..3.0, beta in 0.001f64..0.999, n_p in 2usize..100_000) {
            let r = double_dim_bound(eps, 2, beta, n_p, 1e-9).unwrap();
            prop_assert!(r.params.epsilon < r.eps_ck);
        }

        #[test]
        fn vector_bounds_monotone(eps in 0.001f64..2.0, d in 1usize..10_000) {
            let a = simple_vector_bound(eps, 1e-8, d).unwrap().params.epsilon;
            let b = simple_vector_bound(eps, 1e-8, d + 1).unwrap().params.epsilon;
            let c = simple_vector_bound(eps * 1.01, 1e-8, d).unwrap().params.epsilon;
            let e = simple_vector_bound(eps, 1e-9, d).unwrap().params.epsilon;
            prop_assert!(b >= a && c > a && e >= a);
        }

        #[test]
        fn valid_reports_amplify(
            eps_dim in 0.05f64..1.0,
            n in 2_000usize..200_000,
            k in 1usize..50,
            simple in any::<bool>(),
        ) {
            let d = 200;
            let c = if simple {
                cfg(Protocol::Simple, d, d, n, n, eps_dim * d as f64)
            } else {
                cfg(Protocol::Double, d, k, n, n, eps_dim * k as f64)
            };
            let r = protocol_report(&c, 1, 1e-6).unwrap();
            prop_assert!(r.magnification > 0.0);
            if r.all_valid() {
                prop_assert!(r.central.epsilon <= r.local.epsilon);
                prop_assert!(r.magnification >= 1.0);
            }
        }
    }
}
