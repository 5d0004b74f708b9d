use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::grid::DoseGrid;
use super::kernel::{kernel_matrix, KernelHyper};
use crate::error::{invalid, Error, Result};
use crate::math::inv_logit;

pub const BASE_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-3;

/// Multivariate normal prior of the latent logit-toxicity field on a grid.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// Diagonal jitter added at factorization time.
    pub jitter: f64,
    pub hyper: KernelHyper,
}

impl GaussianPrior {
    /// Lower Cholesky factor of `cov + jitter * I`, escalating the jitter by
    /// ×10 up to [`MAX_JITTER`].
    pub fn factor(&self) -> Result<(DMatrix<f64>, f64)> {
        cholesky_with_jitter(&self.cov, self.jitter)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

pub fn cholesky_with_jitter(cov: &DMatrix<f64>, start: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = cov.nrows();
    let mut jitter = start;
    loop {
        let m = cov + DMatrix::<f64>::identity(n, n) * jitter;
        if let Some(ch) = m.cholesky() {
            return Ok((ch.l(), jitter));
        }
        if jitter >= MAX_JITTER {
            return Err(Error::Factorization { jitter });
        }
        jitter = if jitter > 0.0 { (jitter * 10.0).min(MAX_JITTER) } else { BASE_JITTER };
    }
}

pub fn build_prior(grid: &DoseGrid, mean: &[f64], hyper: &KernelHyper) -> Result<GaussianPrior> {
    hyper.validate()?;
    if mean.len() != grid.len() {
        return Err(invalid(format!(
            "prior mean has {} entries but the grid has {} points",
            mean.len(),
            grid.len()
        )));
    }
    let prior = GaussianPrior {
        mean: mean.to_vec(),
        cov: kernel_matrix(grid.points(), hyper),
        jitter: BASE_JITTER,
        hyper: *hyper,
    };
    prior.factor()?;
    Ok(prior)
}

/// Draw `count` latent sample paths from the prior and map them through the
/// inverse logit. Each inner vector is one path over the grid.
pub fn prior_draws<R: Rng + ?Sized>(
    prior: &GaussianPrior,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(invalid("prior_draws requires count >= 1"));
    }
    let (l, _) = prior.factor()?;
    let mean = DVector::from_column_slice(&prior.mean);
    let n = prior.len();
    Ok((0..count)
        .map(|_| {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let f = &mean + &l * z;
            f.iter().map(|&v| inv_logit(v)).collect()
        })
        .collect())
}
