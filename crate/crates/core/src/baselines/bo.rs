//! Bayesian-optimization comparator: expected improvement on
//! `g(d) = |pi(d) - theta|` over the GP posterior.

use crate::gp::PosteriorSamples;

/// Expected improvement at each column of `draws` (columns are doses).
pub fn bo_ei_acquisition(samples: &PosteriorSamples, positions: &[usize], theta: f64) -> Vec<f64> {
    let s = samples.num_draws() as f64;
    let mean_gap: Vec<f64> = positions
        .iter()
        .map(|&p| samples.draws().map(|d| (d[p] - theta).abs()).sum::<f64>() / s)
        .collect();
    let best = mean_gap.iter().copied().fold(f64::INFINITY, f64::min);
    positions
        .iter()
        .map(|&p| samples.draws().map(|d| (best - (d[p] - theta).abs()).max(0.0)).sum::<f64>() / s)
        .collect()
}

/// Level maximizing `Pr(theta - delta1 <= pi <= theta + delta1)` among
/// levels with posterior mean below `theta + delta2`; level 1 when none
/// qualifies. Inputs are per candidate level.
pub fn bo_recommend(interval_prob: &[f64], posterior_mean: &[f64], theta: f64, delta2: f64) -> usize {
    let mut best: Option<usize> = None;
    for j in 0..interval_prob.len() {
        if posterior_mean[j] >= theta + delta2 {
            continue;
        }
        if best.is_none_or(|b| interval_prob[j] > interval_prob[b]) {
            best = Some(j);
        }
    }
    best.map_or(1, |b| b + 1)
}
