//! Continual reassessment method with the one-parameter power model
//! `pi_j = a_j^exp(beta)`, `beta ~ N(0, v)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math::gauss_hermite;

pub const QUADRATURE_NODES: usize = 61;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmModel {
    pub skeleton: Vec<f64>,
    pub beta_prior_variance: f64,
}

impl CrmModel {
    pub fn new(skeleton: Vec<f64>, beta_prior_variance: f64) -> Result<Self> {
        if skeleton.is_empty() || skeleton.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(invalid("skeleton values must lie in (0,1)"));
        }
        if skeleton.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("skeleton must be strictly increasing"));
        }
        if !(beta_prior_variance > 0.0 && beta_prior_variance.is_finite()) {
            return Err(invalid("beta prior variance must be positive"));
        }
        Ok(Self { skeleton, beta_prior_variance })
    }

    pub fn levels(&self) -> usize {
        self.skeleton.len()
    }
}

/// Per-level DLT and patient counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DoseCounts {
    pub y: Vec<u32>,
    pub n: Vec<u32>,
}

impl DoseCounts {
    pub fn new(levels: usize) -> Self {
        Self { y: vec![0; levels], n: vec![0; levels] }
    }

    pub fn record(&mut self, level: usize, dlts: u32, patients: u32) {
        self.y[level - 1] += dlts;
        self.n[level - 1] += patients;
    }
}

/// Lee–Cheung skeleton: `a_nu = theta` with geometric spacing on the
/// indifference interval `theta ± halfwidth`.
pub fn crm_skeleton(theta: f64, nu: usize, halfwidth: f64, levels: usize) -> Result<Vec<f64>> {
    if !(theta - halfwidth > 0.0 && theta + halfwidth < 1.0 && halfwidth > 0.0) {
        return Err(invalid("theta ± halfwidth must lie in (0,1)"));
    }
    if nu == 0 || nu > levels {
        return Err(invalid(format!("prior MTD must lie in 1..={levels}, got {nu}")));
    }
    let (lo, hi) = ((theta - halfwidth).ln(), (theta + halfwidth).ln());
    let mut a = vec![0.0; levels];
    a[nu - 1] = theta;
    for k in nu..levels {
        a[k] = (theta + halfwidth).powf(a[k - 1].ln() / lo);
    }
    for k in (0..nu - 1).rev() {
        a[k] = (theta - halfwidth).powf(a[k + 1].ln() / hi);
    }
    Ok(a)
}

/// Log posterior density of beta up to a constant, with first and second
/// derivatives.
fn log_post(model: &CrmModel, data: &DoseCounts, beta: f64) -> (f64, f64, f64) {
    let t = beta.exp();
    let v = model.beta_prior_variance;
    let (mut h, mut d1, mut d2) = (-beta * beta / (2.0 * v), -beta / v, -1.0 / v);
    for (j, &a) in model.skeleton.iter().enumerate() {
        let (y, n) = (data.y[j] as f64, data.n[j] as f64);
        if n == 0.0 {
            continue;
        }
        let g = t * a.ln();
        let u = g.exp();
        let one_minus = -g.exp_m1();
        h += y * g + (n - y) * one_minus.ln();
        d1 += y * g - (n - y) * u * g / one_minus;
        d2 += y * g - (n - y) * u * g * (g + one_minus) / (one_minus * one_minus);
    }
    (h, d1, d2)
}

/// Posterior mode and curvature scale of beta.
fn mode_and_scale(model: &CrmModel, data: &DoseCounts) -> (f64, f64) {
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if log_post(model, data, mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mode = 0.5 * (lo + hi);
    let curvature = -log_post(model, data, mode).2;
    let scale = if curvature > 0.0 && curvature.is_finite() {
        1.0 / curvature.sqrt()
    } else {
        model.beta_prior_variance.sqrt()
    };
    (mode, scale)
}

/// Posterior means of the toxicity probabilities by mode-centred
/// Gauss–Hermite quadrature.
pub fn crm_posterior_means(model: &CrmModel, data: &DoseCounts) -> Result<Vec<f64>> {
    check_counts(model, data)?;
    let (mode, scale) = mode_and_scale(model, data);
    let (nodes, weights) = gauss_hermite(QUADRATURE_NODES);
    let h0 = log_post(model, data, mode).0;
    let mut z = 0.0;
    let mut acc = vec![0.0; model.levels()];
    for (&x, &w) in nodes.iter().zip(&weights) {
        let beta = mode + std::f64::consts::SQRT_2 * scale * x;
        let mass = w * (x * x + log_post(model, data, beta).0 - h0).exp();
        z += mass;
        let t = beta.exp();
        for (j, &a) in model.skeleton.iter().enumerate() {
            acc[j] += mass * a.powf(t);
        }
    }
    if !(z.is_finite() && z > 0.0) || acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteQuadrature);
    }
    Ok(acc.into_iter().map(|v| v / z).collect())
}

/// `Pr(pi_1 >= theta | data)` = `Pr(beta <= ln(ln theta / ln a_1))`, by
/// composite Simpson integration of the posterior around its mode.
pub fn crm_prob_overdose_lowest(model: &CrmModel, data: &DoseCounts, theta: f64) -> Result<f64> {
    check_counts(model, data)?;
    let cut = (theta.ln() / model.skeleton[0].ln()).ln();
    let (mode, scale) = mode_and_scale(model, data);
    let (lo, hi) = (mode - 14.0 * scale, mode + 14.0 * scale);
    let h0 = log_post(model, data, mode).0;
    let density = |b: f64| (log_post(model, data, b).0 - h0).exp();
    let total = simpson(&density, lo, hi, 400);
    let below = if cut <= lo {
        0.0
    } else if cut >= hi {
        total
    } else {
        simpson(&density, lo, cut, 400)
    };
    if !(total.is_finite() && total > 0.0 && below.is_finite()) {
        return Err(Error::NonFiniteQuadrature);
    }
    Ok((below / total).clamp(0.0, 1.0))
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn check_counts(model: &CrmModel, data: &DoseCounts) -> Result<()> {
    if data.y.len() != model.levels() || data.n.len() != model.levels() {
        return Err(Error::Misaligned(format!("counts for {} levels, model has {}", data.n.len(), model.levels())));
    }
    if data.y.iter().zip(&data.n).any(|(y, n)| y > n) {
        return Err(invalid("more DLTs than patients at a dose"));
    }
    Ok(())
}

/// Level whose posterior mean is closest to `theta`, ties (up to rounding)
/// to the lower level.
pub fn closest_to_target(means: &[f64], theta: f64) -> usize {
    let mut best = 0;
    for j in 1..means.len() {
        if (means[j] - theta).abs() < (means[best] - theta).abs() - 1e-12 {
            best = j;
        }
    }
    best + 1
}

/// Closest level clipped to one step from `current` in either direction.
pub fn crm_next_dose(means: &[f64], current: usize, theta: f64) -> usize {
    closest_to_target(means, theta).clamp(current.saturating_sub(1).max(1), (current + 1).min(means.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn round2(v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| (x * 100.0).round() / 100.0).collect()
    }

    #[test]
    fn published_skeletons() {
        assert_eq!(round2(&crm_skeleton(0.2, 3, 0.05, 5).unwrap()), vec![0.05, 0.11, 0.20, 0.31, 0.42]);
        assert_eq!(round2(&crm_skeleton(0.3, 3, 0.05, 5).unwrap()), vec![0.12, 0.20, 0.30, 0.40, 0.50]);
    }

    #[test]
    fn skeleton_anchor_and_order() {
        for theta in [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4] {
            for hw in [0.03, 0.04, 0.05, 0.06, 0.07, 0.08] {
                for nu in 1..=6 {
                    let s = crm_skeleton(theta, nu, hw, 6).unwrap();
                    assert_eq!(s[nu - 1], theta);
                    assert!(s.windows(2).all(|w| w[1] > w[0]));
                }
            }
        }
        assert!(crm_skeleton(0.03, 1, 0.05, 5).is_err());
    }

    fn model() -> CrmModel {
        CrmModel::new(crm_skeleton(0.2, 3, 0.05, 5).unwrap(), 2.0).unwrap()
    }

    /// Trapezoid rule on 10^5 points over [-10, 10].
    fn trapezoid_means(model: &CrmModel, data: &DoseCounts) -> Vec<f64> {
        let m = 100_000;
        let h = 20.0 / (m - 1) as f64;
        let lik = |b: f64| log_post(model, data, b).0.exp();
        let mut z = 0.0;
        let mut acc = vec![0.0; model.levels()];
        for i in 0..m {
            let b = -10.0 + i as f64 * h;
            let w = if i == 0 || i == m - 1 { 0.5 } else { 1.0 } * lik(b);
            z += w;
            for (j, &a) in model.skeleton.iter().enumerate() {
                acc[j] += w * a.powf(b.exp());
            }
        }
        acc.into_iter().map(|v| v / z).collect()
    }

    #[test]
    fn no_data_means_match_monte_carlo() {
        let m = model();
        let q = crm_posterior_means(&m, &DoseCounts::new(5)).unwrap();
        let mut rng = stream(2024);
        let mut acc = [0.0; 5];
        let draws = 10_000_000;
        for _ in 0..draws {
            let t = (2f64.sqrt() * rng.sample::<f64, _>(StandardNormal)).exp();
            for (j, &a) in m.skeleton.iter().enumerate() {
                acc[j] += a.powf(t);
            }
        }
        for j in 0..5 {
            assert!((q[j] - acc[j] / draws as f64).abs() < 0.003, "level {}", j + 1);
        }
    }

    #[test]
    fn single_cohort_matches_trapezoid() {
        let m = model();
        let mut d = DoseCounts::new(5);
        d.record(3, 0, 3);
        let q = crm_posterior_means(&m, &d).unwrap();
        let t = trapezoid_means(&m, &d);
        for j in 0..5 {
            assert!((q[j] - t[j]).abs() < 1e-3);
        }
    }

    #[test]
    fn random_datasets_match_trapezoid() {
        let m = model();
        let mut rng = stream(77);
        for _ in 0..10 {
            let mut d = DoseCounts::new(5);
            for _ in 0..rng.random_range(1..=12) {
                let level = rng.random_range(1..=5);
                d.record(level, rng.random_range(0..=3), 3);
            }
            let q = crm_posterior_means(&m, &d).unwrap();
            let t = trapezoid_means(&m, &d);
            for j in 0..5 {
                assert!((q[j] - t[j]).abs() < 1e-3, "{q:?} vs {t:?}");
            }
            assert!(q.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn more_dlts_raise_lowest_mean() {
        let m = model();
        let mut last = 0.0;
        for y in 0..=6 {
            let mut d = DoseCounts::new(5);
            d.record(1, y, 6);
            let q = crm_posterior_means(&m, &d).unwrap();
            assert!(q[0] > last);
            last = q[0];
        }
    }

    #[test]
    fn overdose_probability_matches_trapezoid() {
        let m = model();
        let mut d = DoseCounts::new(5);
        d.record(1, 2, 3);
        d.record(1, 1, 3);
        let p = crm_prob_overdose_lowest(&m, &d, 0.2).unwrap();
        let cut = (0.2f64.ln() / m.skeleton[0].ln()).ln();
        let (mut below, mut total) = (0.0, 0.0);
        for i in 0..200_000 {
            let b = -10.0 + 20.0 * (i as f64 + 0.5) / 200_000.0;
            let w = log_post(&m, &d, b).0.exp();
            total += w;
            if b <= cut {
                below += w;
            }
        }
        assert!((p - below / total).abs() < 1e-3);
        assert!(p > 0.5);
        let prior_cut = (0.2f64.ln() / m.skeleton[0].ln()).ln();
        let exact = crate::math::std_normal_cdf(prior_cut / 2f64.sqrt());
        assert!((crm_prob_overdose_lowest(&m, &DoseCounts::new(5), 0.2).unwrap() - exact).abs() < 1e-6);
    }

    #[test]
    fn next_dose_rules() {
        assert_eq!(crm_next_dose(&[0.05, 0.18, 0.33, 0.4, 0.5], 1, 0.2), 2);
        assert_eq!(crm_next_dose(&[0.01, 0.02, 0.05, 0.2, 0.5], 2, 0.2), 3);
        assert_eq!(crm_next_dose(&[0.01, 0.15, 0.25, 0.4, 0.5], 2, 0.2), 2);
        assert_eq!(crm_next_dose(&[0.4, 0.5, 0.6, 0.7, 0.8], 4, 0.2), 3);
    }
}
