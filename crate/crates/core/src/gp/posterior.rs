use serde::{Deserialize, Serialize};

use crate::math::sorted_quantile;

/// A single patient's binary DLT outcome at a candidate dose level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    /// 1-based dose level.
    pub dose_level: usize,
    pub dlt: bool,
}

impl Observation {
    pub fn new(dose_level: usize, dlt: bool) -> Self {
        Self { dose_level, dlt }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    /// Acceptance rate of the log sigma_f random-walk moves; `None` when
    /// sigma_f is fixed.
    pub sigma_acceptance: Option<f64>,
    /// Mean number of slice shrinkage steps per elliptical update.
    pub mean_shrinks: f64,
    /// Smallest effective sample size of pi over the candidate doses.
    pub min_ess: f64,
}

/// Monte-Carlo draws of the toxicity curve over a dose grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSamples {
    grid_len: usize,
    /// Row-major `draws x grid_len` matrix of toxicity probabilities.
    pi_draws: Vec<f64>,
    pub sigma_f_draws: Vec<f64>,
    pub diagnostics: McmcDiagnostics,
}

impl PosteriorSamples {
    pub fn new(grid_len: usize, pi_draws: Vec<f64>, sigma_f_draws: Vec<f64>, diagnostics: McmcDiagnostics) -> Self {
        assert!(grid_len > 0 && pi_draws.len().is_multiple_of(grid_len));
        Self { grid_len, pi_draws, sigma_f_draws, diagnostics }
    }

    /// Build from explicit sample paths (used by tests and synthetic posteriors).
    pub fn from_paths(paths: &[Vec<f64>]) -> Self {
        let g = paths.first().map_or(0, |p| p.len());
        let flat: Vec<f64> = paths.iter().flat_map(|p| p.iter().copied()).collect();
        Self::new(g, flat, Vec::new(), McmcDiagnostics::default())
    }

    pub fn num_draws(&self) -> usize {
        self.pi_draws.len() / self.grid_len
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    pub fn draw(&self, s: usize) -> &[f64] {
        &self.pi_draws[s * self.grid_len..(s + 1) * self.grid_len]
    }

    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.pi_draws.chunks_exact(self.grid_len)
    }

    pub fn column(&self, g: usize) -> Vec<f64> {
        self.draws().map(|d| d[g]).collect()
    }

    pub fn sorted_column(&self, g: usize) -> Vec<f64> {
        let mut c = self.column(g);
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        c
    }

    fn fraction_where(&self, pred: impl Fn(f64, usize) -> bool) -> Vec<f64> {
        let s = self.num_draws() as f64;
        let mut counts = vec![0usize; self.grid_len];
        for d in self.draws() {
            for (g, &v) in d.iter().enumerate() {
                if pred(v, g) {
                    counts[g] += 1;
                }
            }
        }
        counts.into_iter().map(|c| c as f64 / s).collect()
    }

    /// `Pr(pi(x) >= theta | data)` at each grid point.
    pub fn prob_superlevel(&self, theta: f64) -> Vec<f64> {
        self.fraction_where(|v, _| v >= theta)
    }

    /// `Pr(lo <= pi(x) <= hi | data)` at each grid point.
    pub fn prob_in_interval(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.fraction_where(|v, _| v >= lo && v <= hi)
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        let s = self.num_draws() as f64;
        let mut acc = vec![0.0; self.grid_len];
        for d in self.draws() {
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= s);
        acc
    }

    pub fn quantiles(&self, q: f64) -> Vec<f64> {
        (0..self.grid_len).map(|g| sorted_quantile(&self.sorted_column(g), q)).collect()
    }

    pub fn summary(&self) -> PosteriorSummary {
        let mut s = PosteriorSummary::default();
        for g in 0..self.grid_len {
            let col = self.sorted_column(g);
            s.median.push(sorted_quantile(&col, 0.5));
            s.lower95.push(sorted_quantile(&col, 0.025));
            s.upper95.push(sorted_quantile(&col, 0.975));
            s.lower80.push(sorted_quantile(&col, 0.10));
            s.upper80.push(sorted_quantile(&col, 0.90));
        }
        s.mean = self.posterior_mean();
        s
    }
}

/// Pointwise summaries of a toxicity posterior, aligned with the grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub median: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
    pub lower80: Vec<f64>,
    pub upper80: Vec<f64>,
}

/// `p(x) = Pr(pi(x) <= theta | data)`: the fraction of draws at or below
/// `theta` at each grid point.
pub fn posterior_prob_sublevel(samples: &PosteriorSamples, theta: f64) -> Vec<f64> {
    debug_assert!(theta > 0.0 && theta < 1.0);
    samples.fraction_where(|v, _| v <= theta)
}
