//! Laplace approximation to the latent-field posterior with sigma_f fixed at
//! the prior's value.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::grid::DoseGrid;
use super::posterior::{McmcDiagnostics, Observation, PosteriorSamples};
use super::prior::{cholesky_with_jitter, GaussianPrior};
use super::sampler::aggregate;
use crate::error::{invalid, Error, Result};
use crate::math::inv_logit;

pub const MAX_NEWTON_ITERATIONS: usize = 100;
const NEWTON_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LaplaceApproximation {
    /// Posterior mode of the latent field on the grid.
    pub mode: Vec<f64>,
    /// Gaussian covariance around the mode.
    pub cov: DMatrix<f64>,
    pub iterations: usize,
}

/// Newton iterations on the binomial-logit posterior with the stable
/// `B = I + W^1/2 K W^1/2` parametrization.
pub fn laplace_approximation(prior: &GaussianPrior, data: &[Observation], grid: &DoseGrid) -> Result<LaplaceApproximation> {
    let g = grid.len();
    if prior.len() != g {
        return Err(Error::Misaligned(format!("prior has {} points, grid has {g}", prior.len())));
    }
    let counts = aggregate(data, grid)?;
    let mut dlt = DVector::zeros(g);
    let mut n = DVector::zeros(g);
    for (k, &p) in counts.positions.iter().enumerate() {
        dlt[p] = counts.dlt[k];
        n[p] = counts.n[k];
    }
    let k_mat = &prior.cov + DMatrix::identity(g, g) * prior.jitter;
    let m = DVector::from_column_slice(&prior.mean);
    if counts.positions.is_empty() {
        return Ok(LaplaceApproximation { mode: prior.mean.clone(), cov: k_mat, iterations: 0 });
    }

    let mut f = m.clone();
    for it in 1..=MAX_NEWTON_ITERATIONS {
        let pi = f.map(inv_logit);
        let w = DVector::from_fn(g, |i, _| n[i] * pi[i] * (1.0 - pi[i]));
        let sw = w.map(f64::sqrt);
        let grad = DVector::from_fn(g, |i, _| dlt[i] - n[i] * pi[i]);
        let l = stable_factor(&k_mat, &sw)?;
        let b = w.component_mul(&(&f - &m)) + grad;
        let kb = &k_mat * &b;
        let v = l.solve_lower_triangular(&sw.component_mul(&kb)).ok_or(Error::Factorization { jitter: prior.jitter })?;
        let u = l.tr_solve_lower_triangular(&v).ok_or(Error::Factorization { jitter: prior.jitter })?;
        let a = b - sw.component_mul(&u);
        let f_new = &m + &k_mat * a;
        let step = (&f_new - &f).amax();
        f = f_new;
        if step < NEWTON_TOL {
            let pi = f.map(inv_logit);
            let sw = DVector::from_fn(g, |i, _| (n[i] * pi[i] * (1.0 - pi[i])).sqrt());
            let l = stable_factor(&k_mat, &sw)?;
            let swk = DMatrix::from_fn(g, g, |i, j| sw[i] * k_mat[(i, j)]);
            let v = l.solve_lower_triangular(&swk).ok_or(Error::Factorization { jitter: prior.jitter })?;
            let cov = &k_mat - v.transpose() * v;
            return Ok(LaplaceApproximation { mode: f.iter().copied().collect(), cov, iterations: it });
        }
    }
    Err(Error::NoConvergence(MAX_NEWTON_ITERATIONS))
}

fn stable_factor(k: &DMatrix<f64>, sw: &DVector<f64>) -> Result<DMatrix<f64>> {
    let g = k.nrows();
    let b = DMatrix::from_fn(g, g, |i, j| if i == j { 1.0 } else { 0.0 } + sw[i] * k[(i, j)] * sw[j]);
    b.cholesky().map(|c| c.l()).ok_or(Error::Factorization { jitter: 0.0 })
}

/// Draws of the toxicity curve from the Laplace approximation.
pub fn laplace_posterior<R: Rng + ?Sized>(
    prior: &GaussianPrior,
    data: &[Observation],
    grid: &DoseGrid,
    draws: usize,
    rng: &mut R,
) -> Result<PosteriorSamples> {
    if draws == 0 {
        return Err(invalid("number of draws must be positive"));
    }
    let approx = laplace_approximation(prior, data, grid)?;
    let g = grid.len();
    let sym = (&approx.cov + approx.cov.transpose()) * 0.5;
    let (l, _) = cholesky_with_jitter(&sym, 0.0)?;
    let mut pi_draws = Vec::with_capacity(draws * g);
    let mut z = DVector::zeros(g);
    for _ in 0..draws {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let f = &l * &z;
        pi_draws.extend((0..g).map(|i| inv_logit(approx.mode[i] + f[i])));
    }
    let sigma = vec![prior.hyper.sigma_f; draws];
    Ok(PosteriorSamples::new(g, pi_draws, sigma, McmcDiagnostics { sigma_acceptance: None, mean_shrinks: 0.0, min_ess: draws as f64 }))
}
