//! Multinomial logistic regression. Parameters are flattened row-major:
//! `classes x dims` weights, then `classes` biases.

use flame_core::{GlobalModel, LocalUpdate};

use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};

/// Shape of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogReg {
    pub classes: usize,
    pub dims: usize,
}

impl LogReg {
    pub fn for_data(ds: &Dataset) -> Self {
        Self {
            classes: ds.classes,
            dims: ds.dims,
        }
    }

    /// Parameter count, `classes * (dims + 1)`.
    pub fn params(&self) -> usize {
        self.classes * (self.dims + 1)
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() == self.params() {
            Ok(())
        } else {
            Err(flame_core::Error::DimensionMismatch {
                expected: self.params(),
                got: theta.len(),
            }
            .into())
        }
    }

    fn logits_into(&self, theta: &[f64], x: &[f32], out: &mut [f64]) {
        let bias = &theta[self.classes * self.dims..];
        for (c, o) in out.iter_mut().enumerate() {
            let w = &theta[c * self.dims..(c + 1) * self.dims];
            *o = bias[c] + w.iter().zip(x).map(|(w, &x)| w * f64::from(x)).sum::<f64>();
        }
    }

    /// Class probabilities for one row.
    pub fn probabilities(&self, theta: &[f64], x: &[f32]) -> Vec<f64> {
        let mut p = vec![0.0; self.classes];
        self.logits_into(theta, x, &mut p);
        softmax(&mut p);
        p
    }

    pub fn predict(&self, theta: &[f64], x: &[f32]) -> usize {
        let mut z = vec![0.0; self.classes];
        self.logits_into(theta, x, &mut z);
        z.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
            .0
    }

    pub fn accuracy(&self, theta: &[f64], ds: &Dataset) -> Result<f64> {
        self.check(theta)?;
        if ds.is_empty() {
            return Err(HarnessError::EmptyShard);
        }
        let hits = (0..ds.len())
            .filter(|&i| self.predict(theta, ds.row(i)) == ds.labels[i] as usize)
            .count();
        Ok(hits as f64 / ds.len() as f64)
    }

    /// Mean cross-entropy over the rows in `shard`.
    pub fn loss(&self, theta: &[f64], ds: &Dataset, shard: &[usize]) -> Result<f64> {
        self.check(theta)?;
        if shard.is_empty() {
            return Err(HarnessError::EmptyShard);
        }
        let mut z = vec![0.0; self.classes];
        let mut total = 0.0;
        for &i in shard {
            self.logits_into(theta, ds.row(i), &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - z[ds.labels[i] as usize];
        }
        Ok(total / shard.len() as f64)
    }

    /// Gradient of [`LogReg::loss`].
    pub fn gradient(&self, theta: &[f64], ds: &Dataset, shard: &[usize]) -> Result<Vec<f64>> {
        self.check(theta)?;
        if shard.is_empty() {
            return Err(HarnessError::EmptyShard);
        }
        let mut g = vec![0.0; self.params()];
        let mut p = vec![0.0; self.classes];
        let scale = 1.0 / shard.len() as f64;
        for &i in shard {
            let x = ds.row(i);
            self.logits_into(theta, x, &mut p);
            softmax(&mut p);
            p[ds.labels[i] as usize] -= 1.0;
            for (c, &r) in p.iter().enumerate() {
                let r = r * scale;
                let w = &mut g[c * self.dims..(c + 1) * self.dims];
                for (gw, &xv) in w.iter_mut().zip(x) {
                    *gw += r * f64::from(xv);
                }
                g[self.classes * self.dims + c] += r;
            }
        }
        Ok(g)
    }
}

fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// One local gradient step: `-lr * grad` of the shard loss at `model`.
pub fn local_update(model: &GlobalModel, ds: &Dataset, shard: &[usize], lr: f64) -> Result<LocalUpdate> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(HarnessError::Config(format!("learning rate must be positive, got {lr}")));
    }
    let g = LogReg::for_data(ds).gradient(&model.theta, ds, shard)?;
    Ok(LocalUpdate::new(g.into_iter().map(|v| -lr * v).collect())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic, SyntheticSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn data() -> Dataset {
        let mut spec = SyntheticSpec::new(200, 10, 3);
        spec.dims = 30;
        synthetic(&spec).unwrap().train
    }

    #[test]
    fn finite_differences() {
        let ds = data();
        let m = LogReg::for_data(&ds);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let theta: Vec<f64> = (0..m.params()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let shard: Vec<usize> = (0..40).collect();
        let g = m.gradient(&theta, &ds, &shard).unwrap();
        let h = 1e-5;
        for _ in 0..20 {
            let j = rng.random_range(0..m.params());
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (m.loss(&up, &ds, &shard).unwrap() - m.loss(&down, &ds, &shard).unwrap()) / (2.0 * h);
            let rel = (fd - g[j]).abs() / g[j].abs().max(1e-8);
            assert!(rel < 1e-4, "coordinate {j}: analytic {} vs numeric {fd}", g[j]);
        }
    }

    #[test]
    fn balanced_shard_has_zero_bias_gradient_at_origin() {
        let ds = data();
        let m = LogReg::for_data(&ds);
        // Synthetic labels cycle through the classes, so 0..10 is balanced.
        let shard: Vec<usize> = (0..10).collect();
        let g = m.gradient(&vec![0.0; m.params()], &ds, &shard).unwrap();
        for c in 0..m.classes {
            assert!(g[m.classes * m.dims + c].abs() < 1e-12);
        }
    }

    #[test]
    fn small_step_lowers_loss() {
        let ds = data();
        let m = LogReg::for_data(&ds);
        let shard: Vec<usize> = (0..50).collect();
        let model = GlobalModel::zeros(m.params());
        let before = m.loss(&model.theta, &ds, &shard).unwrap();
        let upd = local_update(&model, &ds, &shard, 0.1).unwrap();
        let theta: Vec<f64> = model.theta.iter().zip(upd.as_slice()).map(|(t, u)| t + u).collect();
        assert!(m.loss(&theta, &ds, &shard).unwrap() < before);
    }

    #[test]
    fn errors() {
        let ds = data();
        let m = LogReg::for_data(&ds);
        let model = GlobalModel::zeros(m.params());
        assert!(matches!(local_update(&model, &ds, &[], 0.1), Err(HarnessError::EmptyShard)));
        assert!(local_update(&model, &ds, &[0], 0.0).is_err());
        assert!(m.gradient(&[0.0; 3], &ds, &[0]).is_err());
    }
}
