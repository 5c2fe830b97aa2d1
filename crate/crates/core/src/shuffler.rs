//! The shuffler: validates user reports, optionally pads every dimension to
//! a fixed count with sealed blanket values, and permutes.
//!
//! The shuffler only ever sees plaintext indexes and sealed payloads. It holds
//! a [`Sealer`] for dummy values and no way to open anything.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomizers::BlanketSpec;
use crate::seal::{KeyId, SealedPayload, Sealer};

/// Simulation metadata recording who produced a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    User(u32),
    Dummy,
}

/// `<indexes, sealed values>` as sent to the shuffler.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMessage {
    pub indexes: Vec<u32>,
    pub payload: SealedPayload,
    pub origin: Origin,
}

impl EncodedMessage {
    /// Seals `values` and pairs them with `indexes`.
    pub fn seal(indexes: Vec<u32>, values: &[f64], sealer: &Sealer, origin: Origin) -> Result<Self> {
        if indexes.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} indexes but {} values",
                indexes.len(),
                values.len()
            )));
        }
        Ok(Self {
            indexes,
            payload: sealer.seal(values),
            origin,
        })
    }

    fn deliver(self) -> DeliveredMessage {
        DeliveredMessage {
            indexes: self.indexes,
            payload: self.payload,
        }
    }
}

/// What the analyzer receives: origin stripped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveredMessage {
    pub indexes: Vec<u32>,
    pub payload: SealedPayload,
}

/// Permuted messages plus per-dimension value counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffledBatch {
    pub messages: Vec<DeliveredMessage>,
    pub per_dim_count: Vec<usize>,
}

impl ShuffledBatch {
    pub fn from_messages(messages: Vec<DeliveredMessage>, d: usize) -> Result<Self> {
        let mut per_dim_count = vec![0usize; d];
        for m in &messages {
            for &j in &m.indexes {
                *per_dim_count.get_mut(j as usize).ok_or_else(|| {
                    Error::ProtocolViolation(format!("index {j} outside dimension {d}"))
                })? += 1;
            }
        }
        Ok(Self {
            messages,
            per_dim_count,
        })
    }

    pub fn total(&self) -> usize {
        self.messages.len()
    }

    pub fn dim(&self) -> usize {
        self.per_dim_count.len()
    }
}

/// Simulation-side record of a shuffle, never passed to the analyzer.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleAudit {
    /// Origin of each delivered message, in delivery order.
    pub origins: Vec<Origin>,
    /// Per-dimension count of user-submitted values.
    pub user_counts: Vec<usize>,
    pub dummy_messages: usize,
    pub dummy_values: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleOutput {
    pub batch: ShuffledBatch,
    pub audit: ShuffleAudit,
}

/// Shape every user's report must have.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportShape {
    pub d: usize,
    /// Messages per user.
    pub messages_per_user: usize,
    /// Maximum indexes per message.
    pub max_indexes: usize,
}

/// Checks per-user message count, message size, index range and that no user
/// reports a dimension twice. Returns per-dimension user value counts.
pub fn validate_reports(messages: &[EncodedMessage], shape: ReportShape) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; shape.d];
    let mut per_user: HashMap<u32, (usize, Vec<u32>)> = HashMap::new();
    for m in messages {
        let Origin::User(u) = m.origin else {
            return Err(Error::ProtocolViolation(
                "dummy message submitted as a user report".into(),
            ));
        };
        if m.indexes.is_empty() || m.indexes.len() > shape.max_indexes {
            return Err(Error::ProtocolViolation(format!(
                "user {u} sent a message with {} indexes (allowed 1..={})",
                m.indexes.len(),
                shape.max_indexes
            )));
        }
        let entry = per_user.entry(u).or_default();
        entry.0 += 1;
        for &j in &m.indexes {
            if j as usize >= shape.d {
                return Err(Error::ProtocolViolation(format!(
                    "user {u} reported index {j} outside dimension {}",
                    shape.d
                )));
            }
            entry.1.push(j);
            counts[j as usize] += 1;
        }
    }
    for (u, (n_msgs, mut idx)) in per_user {
        if n_msgs != shape.messages_per_user {
            return Err(Error::ProtocolViolation(format!(
                "user {u} sent {n_msgs} messages, expected {}",
                shape.messages_per_user
            )));
        }
        idx.sort_unstable();
        if let Some(w) = idx.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::ProtocolViolation(format!(
                "user {u} reported dimension {} more than once",
                w[0]
            )));
        }
    }
    Ok(counts)
}

fn permute_and_deliver<R: Rng + ?Sized>(
    mut messages: Vec<EncodedMessage>,
    d: usize,
    user_counts: Vec<usize>,
    dummy_values: usize,
    rng: &mut R,
) -> Result<ShuffleOutput> {
    messages.shuffle(rng);
    let origins: Vec<Origin> = messages.iter().map(|m| m.origin).collect();
    let dummy_messages = origins.iter().filter(|o| **o == Origin::Dummy).count();
    let delivered = messages.into_iter().map(EncodedMessage::deliver).collect();
    Ok(ShuffleOutput {
        batch: ShuffledBatch::from_messages(delivered, d)?,
        audit: ShuffleAudit {
            origins,
            user_counts,
            dummy_messages,
            dummy_values,
        },
    })
}

/// Uniformly random permutation of the received messages.
pub fn shuffle_simple<R: Rng + ?Sized>(
    messages: Vec<EncodedMessage>,
    shape: ReportShape,
    rng: &mut R,
) -> Result<ShuffleOutput> {
    let counts = validate_reports(&messages, shape)?;
    permute_and_deliver(messages, shape.d, counts, 0, rng)
}

/// Groups per-dimension deficits into dummy messages of at most `k` distinct
/// indexes each, using the fewest messages possible:
/// `v = max(max_j deficit_j, ceil(total / k))`.
///
/// Dimensions are laid out by descending deficit and dealt round-robin over
/// the `v` messages; a dimension's tokens are consecutive and number at most
/// `v`, so they land in distinct messages.
pub fn pack_dummies(deficits: &[usize], k: usize) -> Vec<Vec<u32>> {
    let total: usize = deficits.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    let max_def = deficits.iter().copied().max().unwrap_or(0);
    let v = max_def.max(total.div_ceil(k));
    let mut order: Vec<u32> = (0..deficits.len() as u32)
        .filter(|&j| deficits[j as usize] > 0)
        .collect();
    order.sort_by(|&a, &b| deficits[b as usize].cmp(&deficits[a as usize]).then(a.cmp(&b)));
    let mut out = vec![Vec::with_capacity(total.div_ceil(v)); v];
    let mut t = 0usize;
    for j in order {
        for _ in 0..deficits[j as usize] {
            out[t % v].push(j);
            t += 1;
        }
    }
    out
}

/// Pads every dimension to exactly `n_p` values with sealed blanket draws,
/// then permutes users' and dummy messages together.
///
/// Fails with [`Error::PaddingOverflow`] when users already sent more than
/// `n_p` values for some dimension.
pub fn pad_and_shuffle<R: Rng + ?Sized>(
    messages: Vec<EncodedMessage>,
    shape: ReportShape,
    n_p: usize,
    blanket: &BlanketSpec,
    sealer: &Sealer,
    rng: &mut R,
) -> Result<ShuffleOutput> {
    let counts = validate_reports(&messages, shape)?;
    let mut deficits = Vec::with_capacity(shape.d);
    for (j, &c) in counts.iter().enumerate() {
        if c > n_p {
            return Err(Error::PaddingOverflow {
                dim: j as u32,
                count: c,
                n_p,
            });
        }
        deficits.push(n_p - c);
    }
    let mut messages = messages;
    let mut dummy_values = 0;
    for mut idx in pack_dummies(&deficits, shape.max_indexes) {
        idx.shuffle(rng);
        let values: Vec<f64> = idx.iter().map(|_| blanket.sampler.sample(rng)).collect();
        dummy_values += values.len();
        messages.push(EncodedMessage::seal(idx, &values, sealer, Origin::Dummy)?);
    }
    permute_and_deliver(messages, shape.d, counts, dummy_values, rng)
}

#[derive(Serialize, Deserialize)]
struct DumpRecord {
    indexes: Vec<u32>,
    scheme: String,
    key: u64,
    payload: String,
}

/// Writes a batch as JSON lines, one message per line.
pub fn write_dump<W: Write>(batch: &ShuffledBatch, mut w: W) -> Result<()> {
    for m in &batch.messages {
        let rec = DumpRecord {
            indexes: m.indexes.clone(),
            scheme: m.payload.scheme.clone(),
            key: m.payload.key.0,
            payload: hex::encode(&m.payload.bytes),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a batch written by [`write_dump`].
pub fn read_dump<R: BufRead>(r: R, d: usize) -> Result<ShuffledBatch> {
    let mut messages = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DumpRecord = serde_json::from_str(&line)?;
        let bytes = hex::decode(&rec.payload)
            .map_err(|e| Error::ProtocolViolation(format!("bad payload encoding: {e}")))?;
        messages.push(DeliveredMessage {
            indexes: rec.indexes,
            payload: SealedPayload {
                scheme: rec.scheme,
                key: KeyId(rec.key),
                bytes,
            },
        });
    }
    ShuffledBatch::from_messages(messages, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomizers::krr_blanket;
    use crate::seal::keypair;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn user_msg(sealer: &Sealer, u: u32, idx: &[u32]) -> EncodedMessage {
        let vals = vec![f64::from(u); idx.len()];
        EncodedMessage::seal(idx.to_vec(), &vals, sealer, Origin::User(u)).unwrap()
    }

    #[test]
    fn single_message_unchanged() {
        let (sealer, _) = keypair(1);
        let m = user_msg(&sealer, 0, &[0, 1]);
        let shape = ReportShape { d: 2, messages_per_user: 1, max_indexes: 2 };
        let out = shuffle_simple(vec![m.clone()], shape, &mut rng(0)).unwrap();
        assert_eq!(out.batch.messages, vec![m.deliver()]);
        assert_eq!(out.batch.per_dim_count, vec![1, 1]);
    }

    #[test]
    fn shuffle_is_uniform_over_orderings() {
        let (sealer, _) = keypair(1);
        let msgs: Vec<_> = (0..4).map(|u| user_msg(&sealer, u, &[0])).collect();
        let shape = ReportShape { d: 1, messages_per_user: 1, max_indexes: 1 };
        let mut r = rng(1);
        let trials = 100_000;
        let mut freq: HashMap<Vec<Origin>, usize> = HashMap::new();
        for _ in 0..trials {
            let out = shuffle_simple(msgs.clone(), shape, &mut r).unwrap();
            *freq.entry(out.audit.origins).or_default() += 1;
        }
        assert_eq!(freq.len(), 24);
        let p = 1.0 / 24.0;
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        for c in freq.values() {
            assert!((*c as f64 / trials as f64 - p).abs() <= 3.5 * sd);
        }
    }

    #[test]
    fn padding_hand_trace() {
        // d = 2, k = 1, n_p = 3, counts (1, 3): two dummies, both on dimension 0.
        let (sealer, _) = keypair(1);
        let msgs = vec![
            user_msg(&sealer, 0, &[0]),
            user_msg(&sealer, 1, &[1]),
            user_msg(&sealer, 2, &[1]),
            user_msg(&sealer, 3, &[1]),
        ];
        let shape = ReportShape { d: 2, messages_per_user: 1, max_indexes: 1 };
        let out = pad_and_shuffle(msgs, shape, 3, &krr_blanket(1.0, 2), &sealer, &mut rng(2)).unwrap();
        assert_eq!(out.audit.dummy_messages, 2);
        assert_eq!(out.batch.total(), 6);
        assert_eq!(out.batch.per_dim_count, vec![3, 3]);
        for (m, o) in out.batch.messages.iter().zip(&out.audit.origins) {
            if *o == Origin::Dummy {
                assert_eq!(m.indexes, vec![0]);
            }
        }
    }

    #[test]
    fn no_deficit_means_plain_shuffle() {
        let (sealer, _) = keypair(1);
        let msgs = vec![user_msg(&sealer, 0, &[0, 1]), user_msg(&sealer, 1, &[1, 0])];
        let shape = ReportShape { d: 2, messages_per_user: 1, max_indexes: 2 };
        let out = pad_and_shuffle(msgs, shape, 2, &krr_blanket(1.0, 2), &sealer, &mut rng(3)).unwrap();
        assert_eq!(out.audit.dummy_messages, 0);
        assert_eq!(out.batch.total(), 2);
    }

    #[test]
    fn overflow_names_dimension() {
        let (sealer, _) = keypair(1);
        let msgs = vec![user_msg(&sealer, 0, &[1]), user_msg(&sealer, 1, &[1])];
        let shape = ReportShape { d: 3, messages_per_user: 1, max_indexes: 1 };
        let err = pad_and_shuffle(msgs, shape, 1, &krr_blanket(1.0, 2), &sealer, &mut rng(4)).unwrap_err();
        assert_eq!(err, Error::PaddingOverflow { dim: 1, count: 2, n_p: 1 });
    }

    #[test]
    fn malformed_reports_rejected() {
        let (sealer, _) = keypair(1);
        let shape = ReportShape { d: 4, messages_per_user: 2, max_indexes: 2 };
        // Wrong message count.
        let msgs = vec![user_msg(&sealer, 0, &[0, 1])];
        assert!(validate_reports(&msgs, shape).is_err());
        // Duplicate across a user's messages.
        let msgs = vec![user_msg(&sealer, 0, &[0, 1]), user_msg(&sealer, 0, &[1, 2])];
        assert!(validate_reports(&msgs, shape).is_err());
        // Oversized message.
        let msgs = vec![user_msg(&sealer, 0, &[0, 1, 2]), user_msg(&sealer, 0, &[3])];
        assert!(validate_reports(&msgs, shape).is_err());
        // Out-of-range index.
        let msgs = vec![user_msg(&sealer, 0, &[0]), user_msg(&sealer, 0, &[4])];
        assert!(validate_reports(&msgs, shape).is_err());
        let msgs = vec![user_msg(&sealer, 0, &[0, 1]), user_msg(&sealer, 0, &[2, 3])];
        assert_eq!(validate_reports(&msgs, shape).unwrap(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn dummies_look_like_user_messages() {
        let (sealer, _) = keypair(9);
        let msgs = vec![user_msg(&sealer, 0, &[0, 2])];
        let shape = ReportShape { d: 3, messages_per_user: 1, max_indexes: 2 };
        let out = pad_and_shuffle(msgs, shape, 2, &krr_blanket(1.0, 4), &sealer, &mut rng(5)).unwrap();
        let mut buf = Vec::new();
        write_dump(&out.batch, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let keys: Vec<Vec<String>> = text
            .lines()
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object().unwrap().keys().cloned().collect()
            })
            .collect();
        assert!(keys.windows(2).all(|w| w[0] == w[1]));
        assert!(!text.contains("origin") && !text.contains("Dummy"));
        for m in &out.batch.messages {
            assert_eq!(m.payload.key, sealer.key());
            assert_eq!(m.payload.bytes.len(), 8 * m.indexes.len());
        }
    }

    #[test]
    fn dump_round_trip() {
        let (sealer, _) = keypair(3);
        let msgs = vec![user_msg(&sealer, 0, &[0, 1]), user_msg(&sealer, 1, &[2])];
        let shape = ReportShape { d: 3, messages_per_user: 1, max_indexes: 2 };
        let out = shuffle_simple(msgs, shape, &mut rng(6)).unwrap();
        let mut buf = Vec::new();
        write_dump(&out.batch, &mut buf).unwrap();
        let back = read_dump(&buf[..], 3).unwrap();
        assert_eq!(back, out.batch);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn padding_reaches_n_p_everywhere(seed in any::<u64>()) {
            let mut r = rng(seed);
            let d = r.random_range(1..40usize);
            let k = r.random_range(1..=d);
            let l = r.random_range(1..=(d / k));
            let n = r.random_range(1..30usize);
            let (sealer, _) = keypair(1);
            let mut msgs = Vec::new();
            for u in 0..n as u32 {
                let idx = crate::selection::random_subsample(d, k * l, &mut r).unwrap();
                for chunk in idx.chunks(k) {
                    msgs.push(user_msg(&sealer, u, chunk));
                }
            }
            let shape = ReportShape { d, messages_per_user: l, max_indexes: k };
            let counts = validate_reports(&msgs, shape).unwrap();
            let n_p = counts.iter().copied().max().unwrap() + r.random_range(0..5usize);
            let out = pad_and_shuffle(msgs, shape, n_p, &krr_blanket(1.0, 2), &sealer, &mut r).unwrap();
            prop_assert!(out.batch.per_dim_count.iter().all(|&c| c == n_p));
            prop_assert_eq!(out.batch.total(), n * l + out.audit.dummy_messages);
            let user_values: usize = out.batch.messages.iter().zip(&out.audit.origins)
                .filter(|(_, o)| **o != Origin::Dummy)
                .map(|(m, _)| m.indexes.len())
                .sum();
            prop_assert_eq!(user_values, n * k * l);
            for (m, o) in out.batch.messages.iter().zip(&out.audit.origins) {
                prop_assert!(m.indexes.len() <= k);
                let mut s = m.indexes.clone();
                s.sort_unstable();
                s.dedup();
                prop_assert_eq!(s.len(), m.indexes.len());
                if *o == Origin::Dummy {
                    prop_assert!(!m.indexes.is_empty());
                }
            }
        }
    }
}
