//! Prior mean function and sigma_f hyperprior elicited from limited
//! toxicity information.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gp::DoseGrid;
use crate::math::{logit, z_upper};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    pub theta: f64,
    pub delta1: f64,
    pub q1: f64,
    pub qj: f64,
    pub sigma_f_tilde: f64,
    /// Prior MTD location (1-based), if known.
    pub nu: Option<usize>,
}

impl QuantileSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta - self.delta1 > 0.0 && self.theta + self.delta1 < 1.0) {
            return Err(invalid(format!(
                "theta ± delta1 must lie in (0,1), got theta={} delta1={}",
                self.theta, self.delta1
            )));
        }
        if !(self.delta1 > 0.0) {
            return Err(invalid("delta1 must be positive"));
        }
        for (name, q) in [("q1", self.q1), ("qj", self.qj)] {
            if !(q > 0.0 && q < 1.0) {
                return Err(invalid(format!("{name} must lie in (0,1), got {q}")));
            }
        }
        if !(self.sigma_f_tilde > 0.0 && self.sigma_f_tilde.is_finite()) {
            return Err(invalid("sigma_f_tilde must be positive"));
        }
        Ok(())
    }
}

/// Plausible range of sigma_f, read as a 95% interval of its log-normal prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaBand {
    pub sigma_f1: f64,
    pub sigma_f2: f64,
}

impl Default for SigmaBand {
    fn default() -> Self {
        Self { sigma_f1: 0.5, sigma_f2: 3.0 }
    }
}

/// `log sigma_f ~ N(mu, tau^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPrior {
    pub mu: f64,
    pub tau: f64,
}

impl SigmaPrior {
    /// Prior mean of sigma_f, `exp(mu + tau^2 / 2)`.
    pub fn mean_sigma_f(&self) -> f64 {
        (self.mu + 0.5 * self.tau * self.tau).exp()
    }

    pub fn fixed(sigma_f: f64) -> Self {
        Self { mu: sigma_f.ln(), tau: 0.0 }
    }
}

/// Prior means of the latent field at the lowest and highest doses.
pub fn edge_prior_means(spec: &QuantileSpec) -> Result<(f64, f64)> {
    spec.validate()?;
    let m1 = logit(spec.theta + spec.delta1) - z_upper(spec.q1) * spec.sigma_f_tilde;
    let mj = logit(spec.theta - spec.delta1) - z_upper(1.0 - spec.qj) * spec.sigma_f_tilde;
    Ok((m1, mj))
}

/// Prior means at the J candidate doses, anchored at `logit(theta)` for the
/// prior MTD `nu` when given. Lines are drawn in dose-index space.
pub fn mean_function(m1: f64, mj: f64, nu: Option<usize>, theta: f64, levels: usize) -> Result<Vec<f64>> {
    if levels < 2 {
        return Err(invalid(format!("at least two dose levels are required, got {levels}")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid(format!("theta must lie in (0,1), got {theta}")));
    }
    let j = levels as f64;
    let lt = logit(theta);
    let line = |(x0, y0): (f64, f64), (x1, y1): (f64, f64)| {
        (1..=levels)
            .map(|i| {
                let t = (i as f64 - x0) / (x1 - x0);
                (1.0 - t) * y0 + t * y1
            })
            .collect::<Vec<_>>()
    };
    let m = match nu {
        None => line((1.0, m1), (j, mj)),
        Some(v) if v == 0 || v > levels => {
            return Err(invalid(format!("nu must lie in 1..={levels}, got {v}")));
        }
        Some(1) => line((1.0, lt), (j, mj)),
        Some(v) if v == levels => line((1.0, m1), (j, lt)),
        Some(v) if v <= levels / 2 => line((v as f64, lt), (j, mj)),
        Some(v) => line((1.0, m1), (v as f64, lt)),
    };
    Ok(m)
}

/// Log-normal hyperprior whose central 95% mass spans the band.
pub fn sigma_f_prior(band: &SigmaBand) -> Result<SigmaPrior> {
    if !(band.sigma_f1 > 0.0 && band.sigma_f1 <= band.sigma_f2 && band.sigma_f2.is_finite()) {
        return Err(invalid(format!(
            "sigma band must satisfy 0 < sigma_f1 <= sigma_f2, got ({}, {})",
            band.sigma_f1, band.sigma_f2
        )));
    }
    let (l1, l2) = (band.sigma_f1.ln(), band.sigma_f2.ln());
    Ok(SigmaPrior { mu: 0.5 * (l1 + l2), tau: 0.25 * (l2 - l1) })
}

/// Piecewise-linear interpolation of candidate-dose means at `x`; constant
/// beyond the outermost candidates.
pub fn mean_at(x: f64, candidate_means: &[f64], grid: &DoseGrid) -> Result<f64> {
    let doses = grid.candidate_doses();
    if doses.len() != candidate_means.len() || doses.is_empty() {
        return Err(invalid(format!(
            "{} candidate means for {} candidate doses",
            candidate_means.len(),
            doses.len()
        )));
    }
    Ok(interpolate(x, &doses, candidate_means))
}

pub(crate) fn interpolate(x: f64, xs: &[f64], ys: &[f64]) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    for k in 1..xs.len() {
        if x <= xs[k] {
            let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
            return ys[k - 1] + t * (ys[k] - ys[k - 1]);
        }
    }
    ys[ys.len() - 1]
}

/// Prior mean over every grid point.
pub fn grid_mean(candidate_means: &[f64], grid: &DoseGrid) -> Result<Vec<f64>> {
    grid.points().iter().map(|&x| mean_at(x, candidate_means, grid)).collect()
}

/// Candidate-dose means from explicit prior toxicity guesses.
pub fn means_from_initial_guess(guess: &[f64]) -> Result<Vec<f64>> {
    if guess.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return Err(invalid("initial guesses must lie in (0,1)"));
    }
    Ok(guess.iter().map(|&a| logit(a)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(theta: f64) -> QuantileSpec {
        QuantileSpec { theta, delta1: 0.05, q1: 0.1, qj: 0.1, sigma_f_tilde: 1.35, nu: None }
    }

    #[test]
    fn edge_means_theta_02() {
        let (m1, mj) = edge_prior_means(&spec(0.2)).unwrap();
        assert!((m1 - (logit(0.25) - 1.2815515655446004 * 1.35)).abs() < 1e-9);
        assert!((m1 + 2.829).abs() < 0.001);
        assert!((mj + 0.005).abs() < 0.001, "{mj}");
    }

    #[test]
    fn median_tail_gives_logit() {
        let s = QuantileSpec { q1: 0.5, ..spec(0.3) };
        let (m1, _) = edge_prior_means(&s).unwrap();
        assert_eq!(m1, logit(0.35));
    }

    #[test]
    fn degenerate_interval_rejected() {
        assert!(edge_prior_means(&QuantileSpec { delta1: 0.3, ..spec(0.3) }).is_err());
        assert!(edge_prior_means(&QuantileSpec { q1: 1.0, ..spec(0.3) }).is_err());
        assert!(mean_function(-2.0, 0.5, None, 0.3, 1).is_err());
        assert!(mean_function(-2.0, 0.5, Some(6), 0.3, 5).is_err());
    }

    #[test]
    fn nu_at_top_pins_last_dose() {
        let m = mean_function(-2.35, 0.64, Some(5), 0.3, 5).unwrap();
        assert_eq!(m[4], logit(0.3));
        assert_eq!(m[0], -2.35);
    }

    #[test]
    fn sigma_band_exact_cases() {
        let p = sigma_f_prior(&SigmaBand { sigma_f1: 2.0, sigma_f2: 2.0 }).unwrap();
        assert_eq!((p.mu, p.tau), (2f64.ln(), 0.0));
        let p = sigma_f_prior(&SigmaBand { sigma_f1: 1.0, sigma_f2: 4f64.exp() }).unwrap();
        assert!((p.mu - 2.0).abs() < 1e-12 && (p.tau - 1.0).abs() < 1e-12);
        assert!(sigma_f_prior(&SigmaBand { sigma_f1: 3.0, sigma_f2: 1.0 }).is_err());
    }

    #[test]
    fn interpolation_between_candidates() {
        let grid = DoseGrid::new(&[0.1, 0.2, 0.3], 0).unwrap();
        let m = [-1.0, 0.0, 2.0];
        assert_eq!(mean_at(0.2, &m, &grid).unwrap(), 0.0);
        assert!((mean_at(0.15, &m, &grid).unwrap() + 0.5).abs() < 1e-12);
        let doses = crate::gp::equally_spaced_doses(5);
        let grid = DoseGrid::new(&doses, 21).unwrap();
        let v = [-0.85, -0.48, -0.11, 0.27, 0.64];
        assert!((mean_at(0.125, &v, &grid).unwrap() + 0.665).abs() < 0.005);
    }

    #[test]
    fn initial_guess_overrides() {
        let m = means_from_initial_guess(&[0.1, 0.3]).unwrap();
        assert!((m[1] - logit(0.3)).abs() < 1e-15);
        assert!(means_from_initial_guess(&[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_anchored(m1 in -5.0..0.0f64, rise in 0.01..5.0f64, theta in 0.05..0.6f64, levels in 2usize..9, pick in 0usize..9) {
            let mj = m1 + rise;
            let m = mean_function(m1, mj, None, theta, levels).unwrap();
            prop_assert!(m.windows(2).all(|w| w[1] > w[0]));
            let nu = pick % levels + 1;
            let lt = logit(theta);
            // Anchoring holds for every nu; monotonicity when logit(theta) sits between the edges.
            let m = mean_function(m1, mj, Some(nu), theta, levels).unwrap();
            prop_assert!((m[nu - 1] - lt).abs() < 1e-9);
            if lt > m1 && lt < mj {
                prop_assert!(m.windows(2).all(|w| w[1] > w[0]));
            }
            let inside = m.iter().map(|&x| crate::math::inv_logit(x)).all(|p| p > 0.0 && p < 1.0);
            prop_assert!(inside);
        }

        #[test]
        fn band_endpoints(a in 0.01..5.0f64, w in 0.0..5.0f64) {
            let band = SigmaBand { sigma_f1: a, sigma_f2: a + w };
            let p = sigma_f_prior(&band).unwrap();
            prop_assert!((p.mu - 2.0 * p.tau - a.ln()).abs() < 1e-12);
            prop_assert!((p.mu + 2.0 * p.tau - (a + w).ln()).abs() < 1e-12);
        }
    }
}
