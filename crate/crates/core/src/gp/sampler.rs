//! Posterior sampling of the latent toxicity field.
//!
//! The field is written as `f = m + sigma_f * L0 * w` with `L0` the Cholesky
//! factor of the unit-scale squared-exponential correlation and `w ~ N(0, I)`.
//! Elliptical slice sampling updates `w` (equivalently `f` given `sigma_f`),
//! and a random-walk Metropolis step moves `log sigma_f` with `w` held fixed,
//! which rescales the covariance without refactorizing it. Only the rows of
//! `L0` at observed grid positions enter the likelihood.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::grid::DoseGrid;
use super::kernel::kernel_matrix;
use super::laplace::laplace_posterior;
use super::posterior::{McmcDiagnostics, Observation, PosteriorSamples};
use super::prior::{cholesky_with_jitter, GaussianPrior};
use crate::error::{invalid, Error, Result};
use crate::math::{inv_logit, log1p_exp};
use crate::prior_spec::SigmaPrior;

/// Proposal standard deviation of the log sigma_f random walk.
pub const SIGMA_PROPOSAL_SD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    #[default]
    Ess,
    Laplace,
}

impl std::str::FromStr for InferenceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ess" => Ok(Self::Ess),
            "laplace" => Ok(Self::Laplace),
            other => Err(Error::Parse(format!("unknown inference mode '{other}' (expected ess|laplace)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub mode: InferenceMode,
    /// Base seed; trial engines derive per-cohort streams from it when set.
    pub seed: Option<u64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self::simulation()
    }
}

impl McmcConfig {
    /// 1500 iterations, 500 burn-in.
    pub fn simulation() -> Self {
        Self { iterations: 1500, burn_in: 500, mode: InferenceMode::Ess, seed: None }
    }

    /// 4000 iterations, 1000 burn-in.
    pub fn service() -> Self {
        Self { iterations: 4000, burn_in: 1000, mode: InferenceMode::Ess, seed: None }
    }

    pub fn draws(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(invalid(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Per-position binomial counts at observed grid positions.
#[derive(Debug, Clone)]
pub(crate) struct GridCounts {
    pub positions: Vec<usize>,
    pub dlt: Vec<f64>,
    pub n: Vec<f64>,
}

pub(crate) fn aggregate(data: &[Observation], grid: &DoseGrid) -> Result<GridCounts> {
    let mut by_pos: Vec<(usize, f64, f64)> = Vec::new();
    for o in data {
        let pos = grid.position_of_level(o.dose_level).ok_or_else(|| {
            Error::Misaligned(format!("dose level {} is not on the grid", o.dose_level))
        })?;
        match by_pos.iter_mut().find(|e| e.0 == pos) {
            Some(e) => {
                e.1 += o.dlt as u8 as f64;
                e.2 += 1.0;
            }
            None => by_pos.push((pos, o.dlt as u8 as f64, 1.0)),
        }
    }
    by_pos.sort_by_key(|e| e.0);
    Ok(GridCounts {
        positions: by_pos.iter().map(|e| e.0).collect(),
        dlt: by_pos.iter().map(|e| e.1).collect(),
        n: by_pos.iter().map(|e| e.2).collect(),
    })
}

/// Draw from the posterior of the toxicity curve with the configured
/// inference mode.
pub fn infer<R: Rng + ?Sized>(
    prior: &GaussianPrior,
    data: &[Observation],
    grid: &DoseGrid,
    sigma_prior: SigmaPrior,
    mcmc: &McmcConfig,
    rng: &mut R,
) -> Result<PosteriorSamples> {
    match mcmc.mode {
        InferenceMode::Ess => sample_posterior(prior, data, grid, sigma_prior, mcmc, rng),
        InferenceMode::Laplace => {
            mcmc.validate()?;
            laplace_posterior(prior, data, grid, mcmc.draws(), rng)
        }
    }
}

/// Elliptical slice sampling of the latent field with sigma_f sampled under
/// its log-normal prior. `sigma_prior.tau == 0` fixes sigma_f at `exp(mu)`.
pub fn sample_posterior<R: Rng + ?Sized>(
    prior: &GaussianPrior,
    data: &[Observation],
    grid: &DoseGrid,
    sigma_prior: SigmaPrior,
    mcmc: &McmcConfig,
    rng: &mut R,
) -> Result<PosteriorSamples> {
    mcmc.validate()?;
    let g = grid.len();
    if g == 0 {
        return Err(Error::Misaligned("empty grid".into()));
    }
    if prior.len() != g {
        return Err(Error::Misaligned(format!("prior has {} points, grid has {g}", prior.len())));
    }
    let counts = aggregate(data, grid)?;

    let unit = prior.hyper.with_sigma_f(1.0);
    let (l0, _) = cholesky_with_jitter(&kernel_matrix(grid.points(), &unit), prior.jitter)?;
    // Dense row-major copy of the lower factor.
    let lrows: Vec<f64> = (0..g).flat_map(|i| (0..g).map(move |j| (i, j))).map(|(i, j)| l0[(i, j)]).collect();
    let row = |i: usize| &lrows[i * g..i * g + i + 1];

    let m_obs: Vec<f64> = counts.positions.iter().map(|&p| prior.mean[p]).collect();
    let loglik = |a: &[f64], sigma: f64| -> f64 {
        let mut ll = 0.0;
        for k in 0..a.len() {
            let f = m_obs[k] + sigma * a[k];
            ll += counts.dlt[k] * f - counts.n[k] * log1p_exp(f);
        }
        ll
    };
    let project = |v: &[f64], out: &mut [f64]| {
        for (k, &p) in counts.positions.iter().enumerate() {
            out[k] = row(p).iter().zip(v).map(|(l, x)| l * x).sum();
        }
    };

    let fixed_sigma = sigma_prior.tau <= 0.0;
    let mut log_sigma = if fixed_sigma { sigma_prior.mu } else { prior.hyper.sigma_f.ln() };
    let log_prior = |ls: f64| -0.5 * ((ls - sigma_prior.mu) / sigma_prior.tau).powi(2);

    let k = counts.positions.len();
    let mut w = vec![0.0; g];
    let mut nu = vec![0.0; g];
    let mut a = vec![0.0; k];
    let mut b = vec![0.0; k];
    let mut a_new = vec![0.0; k];

    let draws = mcmc.draws();
    let mut pi_draws = Vec::with_capacity(draws * g);
    let mut sigma_draws = Vec::with_capacity(draws);
    let mut shrinks = 0usize;
    let mut accepted = 0usize;

    for it in 0..mcmc.iterations {
        let sigma = log_sigma.exp();

        // Elliptical slice update of w given sigma.
        for v in nu.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        project(&nu, &mut b);
        let log_y = loglik(&a, sigma) + rng.random::<f64>().ln();
        let mut angle = rng.random::<f64>() * TAU;
        let (mut lo, mut hi) = (angle - TAU, angle);
        loop {
            let (s, c) = angle.sin_cos();
            for i in 0..k {
                a_new[i] = a[i] * c + b[i] * s;
            }
            if loglik(&a_new, sigma) > log_y {
                for (wi, ni) in w.iter_mut().zip(&nu) {
                    *wi = *wi * c + ni * s;
                }
                std::mem::swap(&mut a, &mut a_new);
                break;
            }
            shrinks += 1;
            if angle < 0.0 {
                lo = angle;
            } else {
                hi = angle;
            }
            angle = lo + rng.random::<f64>() * (hi - lo);
        }

        // Random-walk Metropolis on log sigma_f with the whitened field fixed.
        if !fixed_sigma {
            let proposal = log_sigma + SIGMA_PROPOSAL_SD * rng.sample::<f64, _>(StandardNormal);
            let log_ratio = loglik(&a, proposal.exp()) - loglik(&a, sigma) + log_prior(proposal) - log_prior(log_sigma);
            if rng.random::<f64>().ln() < log_ratio {
                log_sigma = proposal;
                accepted += 1;
            }
        }

        if it >= mcmc.burn_in {
            let sigma = log_sigma.exp();
            for i in 0..g {
                let lw: f64 = row(i).iter().zip(&w).map(|(l, x)| l * x).sum();
                pi_draws.push(inv_logit(prior.mean[i] + sigma * lw));
            }
            sigma_draws.push(sigma);
        }
    }

    let mut samples = PosteriorSamples::new(g, pi_draws, sigma_draws, McmcDiagnostics::default());
    let min_ess = grid
        .candidate_positions()
        .iter()
        .map(|&p| effective_sample_size(&samples.column(p)))
        .fold(f64::INFINITY, f64::min);
    samples.diagnostics = McmcDiagnostics {
        sigma_acceptance: (!fixed_sigma).then(|| accepted as f64 / mcmc.iterations as f64),
        mean_shrinks: shrinks as f64 / mcmc.iterations as f64,
        min_ess,
    };
    Ok(samples)
}

/// Effective sample size from Geyer's initial positive sequence of
/// autocorrelation pairs, truncated at lag 200.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    const MAX_LAG: usize = 200;
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * c0)
    };
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n.min(MAX_LAG) {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    let tau = 1.0 + 2.0 * sum;
    n as f64 / tau
}
