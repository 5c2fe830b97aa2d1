//! Image classification data: IDX files (the MNIST container) or a seeded
//! synthetic Gaussian-blob set.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Row-major features in `[0, 1]` with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
    pub dims: usize,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Vec<f32>, labels: Vec<u8>, dims: usize, classes: usize, split: Split) -> Result<Self> {
        if dims == 0 || features.len() != labels.len() * dims {
            return Err(HarnessError::Idx(format!(
                "{} feature values do not form {} rows of {dims}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
            return Err(HarnessError::Idx(format!("label {bad} outside {classes} classes")));
        }
        if let Some(bad) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(HarnessError::Idx(format!("feature value {bad} outside [0, 1]")));
        }
        Ok(Self { features, labels, dims, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    /// FNV-1a over dimensions, labels and feature bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&(self.dims as u64).to_le_bytes());
        eat(&self.labels);
        for v in &self.features {
            eat(&v.to_bits().to_le_bytes());
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Dataset,
    pub test: Dataset,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| HarnessError::Idx(format!("truncated header at byte {at}")))
}

/// Parses an IDX image file (`u8` pixels) into rows scaled to `[0, 1]`.
/// Returns the rows and the number of pixels per row.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<f32>, usize, usize)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(HarnessError::Idx(format!(
            "image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let dims = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * dims {
        return Err(HarnessError::Idx(format!(
            "header promises {count} images of {dims} pixels, payload has {} bytes",
            body.len()
        )));
    }
    Ok((body.iter().map(|&p| f32::from(p) / 255.0).collect(), count, dims))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(HarnessError::Idx(format!(
            "label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(HarnessError::Idx(format!(
            "header promises {count} labels, payload has {} bytes",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads one image/label file pair.
pub fn load_idx_pair(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let (features, count, dims) = parse_idx_images(&read(images)?)?;
    let labels = parse_idx_labels(&read(labels)?)?;
    if labels.len() != count {
        return Err(HarnessError::Idx(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    Dataset::new(features, labels, dims, 10, split)
}

/// Loads the four standard MNIST files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<DataSplit> {
    let f = |name: &str| dir.join(name);
    Ok(DataSplit {
        train: load_idx_pair(
            &f("train-images-idx3-ubyte"),
            &f("train-labels-idx1-ubyte"),
            Split::Train,
        )?,
        test: load_idx_pair(
            &f("t10k-images-idx3-ubyte"),
            &f("t10k-labels-idx1-ubyte"),
            Split::Test,
        )?,
    })
}

/// Seeded Gaussian blobs: one sparse random center per class, isotropic
/// noise, clamped into `[0, 1]`. Like MNIST strokes, each center lights up a
/// small fraction of the pixels and leaves the rest at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_dims")]
    pub dims: usize,
    pub train: usize,
    pub test: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_classes() -> usize {
    10
}

fn default_dims() -> usize {
    784
}

const ACTIVE_FRACTION: f64 = 0.2;

fn default_spread() -> f64 {
    0.3
}

impl SyntheticSpec {
    pub fn new(train: usize, test: usize, seed: u64) -> Self {
        Self {
            classes: default_classes(),
            dims: default_dims(),
            train,
            test,
            spread: default_spread(),
            seed,
        }
    }
}

pub fn synthetic(spec: &SyntheticSpec) -> Result<DataSplit> {
    if spec.classes < 2 || spec.classes > 256 || spec.dims == 0 {
        return Err(HarnessError::Config(format!(
            "synthetic data needs 2..=256 classes and dims >= 1, got {} and {}",
            spec.classes, spec.dims
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let centers: Vec<f64> = (0..spec.classes * spec.dims)
        .map(|_| {
            if rng.random::<f64>() < ACTIVE_FRACTION {
                rng.random_range(0.5..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let mut draw = |count: usize, split: Split| {
        let mut features = Vec::with_capacity(count * spec.dims);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let c = i % spec.classes;
            labels.push(c as u8);
            for &m in &centers[c * spec.dims..(c + 1) * spec.dims] {
                let noise: f64 = rng.sample(StandardNormal);
                features.push((m + spec.spread * noise).clamp(0.0, 1.0) as f32);
            }
        }
        Dataset::new(features, labels, spec.dims, spec.classes, split)
    };
    let train = draw(spec.train, Split::Train)?;
    let test = draw(spec.test, Split::Test)?;
    Ok(DataSplit { train, test })
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Directory holding the four MNIST IDX files.
    Mnist { dir: PathBuf },
    Synthetic(SyntheticSpec),
}

pub fn load_dataset(source: &DataSource) -> Result<DataSplit> {
    match source {
        DataSource::Mnist { dir } => load_mnist(dir),
        DataSource::Synthetic(spec) => synthetic(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for w in [IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&w.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_images_and_labels() {
        let (rows, count, dims) = parse_idx_images(&idx_images(2, 1, 2, &[0, 255, 51, 102])).unwrap();
        assert_eq!((count, dims), (2, 2));
        assert_eq!(rows, vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(parse_idx_labels(&idx_labels(&[3, 9])).unwrap(), vec![3, 9]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut b = idx_images(1, 1, 1, &[7]);
        b[3] = 0x01;
        assert!(matches!(parse_idx_images(&b), Err(HarnessError::Idx(_))));
        assert!(parse_idx_images(&idx_images(2, 1, 1, &[7])).is_err());
        assert!(parse_idx_images(&[0, 0, 8]).is_err());
        let mut l = idx_labels(&[1, 2]);
        l.pop();
        assert!(parse_idx_labels(&l).is_err());
        assert!(parse_idx_labels(&idx_images(1, 1, 1, &[0])).is_err());
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("i");
        let lab = dir.path().join("l");
        fs::write(&img, idx_images(2, 1, 1, &[0, 1])).unwrap();
        fs::write(&lab, idx_labels(&[1])).unwrap();
        assert!(load_idx_pair(&img, &lab, Split::Train).is_err());
        fs::write(&lab, idx_labels(&[1, 12])).unwrap();
        assert!(load_idx_pair(&img, &lab, Split::Train).is_err());
        fs::write(&lab, idx_labels(&[1, 2])).unwrap();
        let ds = load_idx_pair(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(load_mnist(dir.path()).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::new(1000, 200, 7);
        let a = synthetic(&spec).unwrap();
        let b = synthetic(&spec).unwrap();
        assert_eq!(a.train.fingerprint(), b.train.fingerprint());
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 1000);
        assert_eq!(a.train.dims, 784);
        let other = synthetic(&SyntheticSpec::new(1000, 200, 8)).unwrap();
        assert_ne!(a.train.fingerprint(), other.train.fingerprint());
        let mut counts = [0usize; 10];
        for &y in &a.train.labels {
            counts[y as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 100));
    }

    #[test]
    fn data_source_json() {
        let s: DataSource = serde_json::from_str(r#"{"synthetic": {"train": 10, "test": 5, "seed": 3}}"#).unwrap();
        assert_eq!(s, DataSource::Synthetic(SyntheticSpec::new(10, 5, 3)));
        let m: DataSource = serde_json::from_str(r#"{"mnist": {"dir": "data/mnist"}}"#).unwrap();
        assert!(matches!(m, DataSource::Mnist { .. }));
        assert!(serde_json::from_str::<DataSource>(r#"{"synthetic": {"train": 1, "test": 1, "bogus": 1}}"#).is_err());
    }
}
