//! User-side encoding: per-coordinate clipping and the affine map between
//! gradient units and `[0, 1]`.

use crate::error::{Error, Result};
use crate::types::{LocalUpdate, NormalizedVector};

fn check_clip(c: f64) -> Result<()> {
    if c.is_finite() && c > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("clip bound must be positive, got {c}")))
    }
}

/// Clamps every coordinate into `[-c, c]`.
pub fn clip_linf(x: &LocalUpdate, c: f64) -> Result<LocalUpdate> {
    check_clip(c)?;
    LocalUpdate::new(x.as_slice().iter().map(|v| v.clamp(-c, c)).collect())
}

/// Maps a clipped update to `(x + c) / (2c)`.
pub fn normalize(xbar: &LocalUpdate, c: f64) -> Result<NormalizedVector> {
    check_clip(c)?;
    let mut out = Vec::with_capacity(xbar.len());
    for (i, &v) in xbar.as_slice().iter().enumerate() {
        if !(-c..=c).contains(&v) {
            return Err(Error::ContractViolation(format!(
                "component {i} = {v} outside [-{c}, {c}]; clip before normalizing"
            )));
        }
        // Rounding can land a hair outside [0, 1] at the endpoints.
        out.push(((v + c) / (2.0 * c)).clamp(0.0, 1.0));
    }
    NormalizedVector::new(out)
}

/// Inverse of [`normalize`], extended linearly outside `[0, 1]`.
pub fn denormalize(zbar: f64, c: f64) -> f64 {
    c * (2.0 * zbar - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn upd(v: &[f64]) -> LocalUpdate {
        LocalUpdate::new(v.to_vec()).unwrap()
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_linf(&upd(&[3.0, -0.5]), 1.0).unwrap(), upd(&[1.0, -0.5]));
        assert_eq!(clip_linf(&upd(&[0.0, 0.0, 0.0]), 1.0).unwrap(), upd(&[0.0; 3]));
        assert_eq!(
            clip_linf(&upd(&[-2.7, 0.9, 1.1]), 1.0).unwrap(),
            upd(&[-1.0, 0.9, 1.0])
        );
        assert!(clip_linf(&upd(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&upd(&[-2.0, 2.0, 0.0]), 2.0).unwrap();
        assert_eq!(n.as_slice(), &[0.0, 1.0, 0.5]);
        let n = normalize(&upd(&[0.25]), 0.5).unwrap();
        assert_eq!(n.as_slice(), &[0.75]);
        assert!(matches!(
            normalize(&upd(&[1.5]), 1.0),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn denormalize_examples() {
        assert_eq!(denormalize(0.5, 1.0), 0.0);
        assert_eq!(denormalize(1.0, 2.0), 2.0);
        assert!((denormalize(0.3, 1.0) + 0.4).abs() < 1e-15);
        // Noisy estimates outside [0, 1] are legal.
        assert_eq!(denormalize(1.5, 1.0), 2.0);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(xs in prop::collection::vec(-1e6f64..1e6, 1..64), c in 1e-3f64..1e3) {
            let once = clip_linf(&upd(&xs), c).unwrap();
            let twice = clip_linf(&once, c).unwrap();
            prop_assert_eq!(&once, &twice);
            for (&a, &b) in xs.iter().zip(once.as_slice()) {
                prop_assert!(b.abs() <= c);
                if a.abs() <= c {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn normalize_round_trips(xs in prop::collection::vec(-1e6f64..1e6, 1..64), c in 1e-3f64..1e3) {
            let clipped = clip_linf(&upd(&xs), c).unwrap();
            let n = normalize(&clipped, c).unwrap();
            for (&orig, &z) in clipped.as_slice().iter().zip(n.as_slice()) {
                let back = denormalize(z, c);
                prop_assert!((back - orig).abs() <= 4.0 * f64::EPSILON * c, "{orig} -> {back}");
            }
        }
    }
}
