//! Adversarial perturbation baseline: projected gradient ascent on an
//! additive embedding perturbation `δ`.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{frobenius_norm, DenseTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct FreeLbConfig {
    /// Radius of the Frobenius ball `δ` is projected onto.
    pub norm_bound: f64,
    /// Ascent step size `α`.
    pub step_size: f64,
    pub ascent_steps: usize,
    /// `δ_0` is drawn from `U(-init_range, init_range)`.
    pub init_range: f64,
}

impl Default for FreeLbConfig {
    fn default() -> Self {
        Self {
            norm_bound: 1e-2,
            step_size: 1e-4,
            ascent_steps: 3,
            init_range: 1e-4,
        }
    }
}

impl FreeLbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.norm_bound > 0.0 && self.norm_bound.is_finite()) {
            return Err(Error::config(format!(
                "freelb.norm_bound {} must be > 0",
                self.norm_bound
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config(format!(
                "freelb.step_size {} must be > 0",
                self.step_size
            )));
        }
        if self.ascent_steps == 0 {
            return Err(Error::config("freelb.ascent_steps must be >= 1"));
        }
        if !(self.init_range >= 0.0 && self.init_range.is_finite()) {
            return Err(Error::config(format!(
                "freelb.init_range {} must be >= 0",
                self.init_range
            )));
        }
        Ok(())
    }
}

pub fn freelb_init(shape: &[usize], cfg: &FreeLbConfig, rng: &mut RngStream) -> Result<DenseTensor> {
    if cfg.init_range == 0.0 {
        return DenseTensor::zeros(shape);
    }
    DenseTensor::uniform(shape, -cfg.init_range, cfg.init_range, rng)
}

/// `δ + α g / ‖δ‖_F`, then projection onto the ball of radius `norm_bound`.
/// A zero `δ` uses a divisor of 1.
pub fn freelb_update(delta: &DenseTensor, grad: &DenseTensor, cfg: &FreeLbConfig) -> Result<DenseTensor> {
    let norm = frobenius_norm(delta);
    let divisor = if norm == 0.0 { 1.0 } else { norm };
    let mut next = delta.clone();
    next.axpy(cfg.step_size / divisor, grad)?;
    let n = frobenius_norm(&next);
    if n > cfg.norm_bound {
        next = next.scale(cfg.norm_bound / n)?;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_range() {
        let cfg = FreeLbConfig::default();
        let d = freelb_init(&[4, 8, 16], &cfg, &mut RngStream::from_seed(1)).unwrap();
        assert!(d.data().iter().all(|v| v.abs() <= 1e-4));
        assert!(!d.is_all_zero());
        let again = freelb_init(&[4, 8, 16], &cfg, &mut RngStream::from_seed(1)).unwrap();
        assert_eq!(d, again);
        let zero = FreeLbConfig { init_range: 0.0, ..cfg };
        assert!(freelb_init(&[3, 3], &zero, &mut RngStream::from_seed(1))
            .unwrap()
            .is_all_zero());
    }

    #[test]
    fn zero_grad_inside_ball_is_identity() {
        let d = DenseTensor::new(&[2], vec![1e-3, -2e-3]).unwrap();
        let g = DenseTensor::zeros(&[2]).unwrap();
        assert_eq!(freelb_update(&d, &g, &FreeLbConfig::default()).unwrap(), d);
    }

    #[test]
    fn pure_projection() {
        let d = DenseTensor::new(&[2], vec![3.0, 4.0]).unwrap();
        let g = DenseTensor::zeros(&[2]).unwrap();
        let cfg = FreeLbConfig {
            norm_bound: 1.0,
            ..FreeLbConfig::default()
        };
        let out = freelb_update(&d, &g, &cfg).unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-15);
        assert!((out.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_delta_uses_unit_divisor() {
        let d = DenseTensor::zeros(&[2]).unwrap();
        let g = DenseTensor::new(&[2], vec![1.0, 0.0]).unwrap();
        let cfg = FreeLbConfig {
            norm_bound: 10.0,
            step_size: 0.5,
            ..FreeLbConfig::default()
        };
        assert_eq!(freelb_update(&d, &g, &cfg).unwrap().data(), &[0.5, 0.0]);
    }

    #[test]
    fn validate_rejects_bad_values() {
        for bad in [
            FreeLbConfig {
                norm_bound: 0.0,
                ..Default::default()
            },
            FreeLbConfig {
                step_size: -1.0,
                ..Default::default()
            },
            FreeLbConfig {
                ascent_steps: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn matches_direct_formula(
            seed in any::<u64>(),
            alpha in 1e-4f64..1.0,
            bound in 1e-3f64..5.0,
        ) {
            let mut rng = RngStream::from_seed(seed);
            let d = DenseTensor::uniform(&[3, 5], -1.0, 1.0, &mut rng).unwrap();
            let g = DenseTensor::uniform(&[3, 5], -1.0, 1.0, &mut rng).unwrap();
            let cfg = FreeLbConfig { norm_bound: bound, step_size: alpha, ..Default::default() };
            let out = freelb_update(&d, &g, &cfg).unwrap();

            let norm = d.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            let raw: Vec<f64> = d.data().iter().zip(g.data()).map(|(a, b)| a + alpha * b / norm).collect();
            let rn = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let want: Vec<f64> = if rn > bound { raw.iter().map(|v| v * bound / rn).collect() } else { raw };
            for (o, w) in out.data().iter().zip(&want) {
                prop_assert!((o - w).abs() <= 1e-12);
            }
            prop_assert!(frobenius_norm(&out) <= bound + 1e-12);
        }
    }
}
