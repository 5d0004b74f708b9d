use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Hyperparameters of the squared-exponential covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    /// Marginal standard deviation of the latent field.
    pub sigma_f: f64,
    /// Length scale on the unit dose interval.
    pub ell: f64,
}

impl KernelHyper {
    pub fn new(sigma_f: f64, ell: f64) -> Result<Self> {
        let h = Self { sigma_f, ell };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f > 0.0 && self.sigma_f.is_finite()) {
            return Err(invalid(format!("sigma_f must be positive, got {}", self.sigma_f)));
        }
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(invalid(format!("ell must be positive, got {}", self.ell)));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, x: f64, x2: f64) -> f64 {
        let d = x - x2;
        self.sigma_f * self.sigma_f * (-d * d / (2.0 * self.ell * self.ell)).exp()
    }

    pub fn with_sigma_f(self, sigma_f: f64) -> Self {
        Self { sigma_f, ..self }
    }
}

/// `sigma_f^2 * exp(-(x - x2)^2 / (2 ell^2))`.
pub fn kernel_eval(x: f64, x2: f64, hyper: &KernelHyper) -> Result<f64> {
    hyper.validate()?;
    Ok(hyper.eval(x, x2))
}

pub fn kernel_matrix(points: &[f64], hyper: &KernelHyper) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| hyper.eval(points[i], points[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_values() {
        let h = KernelHyper::new(1.35, 1.0).unwrap();
        assert!((kernel_eval(0.3, 0.3, &h).unwrap() - 1.8225).abs() < 1e-12);
        let h = KernelHyper::new(1.0, 1.0).unwrap();
        assert!((kernel_eval(0.0, 1.0, &h).unwrap() - (-0.5f64).exp()).abs() < 1e-12);
        let h = KernelHyper::new(2.0, 1.0).unwrap();
        assert!((kernel_eval(0.0, 1.0, &h).unwrap() - 2.426_122_638_850_534).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(KernelHyper::new(0.0, 1.0).is_err());
        assert!(KernelHyper::new(1.0, -1.0).is_err());
        let bad = KernelHyper { sigma_f: -1.0, ell: 1.0 };
        assert!(kernel_eval(0.0, 0.0, &bad).is_err());
    }

    proptest! {
        #[test]
        fn symmetric(x in 0.0..1.0f64, y in 0.0..1.0f64, s in 0.1..3.0f64, l in 0.1..2.0f64) {
            let h = KernelHyper::new(s, l).unwrap();
            prop_assert_eq!(h.eval(x, y), h.eval(y, x));
        }
    }
}
