use serde::{Deserialize, Serialize};

use crate::baselines::crm::{crm_skeleton, CrmModel};
use crate::error::{Error, Result};
use crate::gp::{build_prior, equally_spaced_doses, DoseGrid, GaussianPrior, InferenceMode, KernelHyper, McmcConfig};
use crate::prior_spec::{
    edge_prior_means, grid_mean, mean_function, means_from_initial_guess, sigma_f_prior, QuantileSpec, SigmaBand,
    SigmaPrior,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Acquisition {
    /// Weighted misclassification probability `p^r min(p, 1 - p)`.
    #[default]
    Misclass,
    /// Weighted credible-interval ambiguity `p^r min(U - theta, theta - L)`.
    Ambiguity,
}

impl std::str::FromStr for Acquisition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "misclass" => Ok(Self::Misclass),
            "ambiguity" => Ok(Self::Ambiguity),
            other => Err(Error::Parse(format!("unknown acquisition '{other}' (expected misclass|ambiguity)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrmSettings {
    pub prior_mtd: usize,
    pub halfwidth: f64,
    pub beta_prior_variance: f64,
    /// Explicit skeleton; derived from `prior_mtd` and `halfwidth` if absent.
    pub skeleton: Option<Vec<f64>>,
}

impl Default for CrmSettings {
    fn default() -> Self {
        Self { prior_mtd: 3, halfwidth: 0.05, beta_prior_variance: 2.0, skeleton: None }
    }
}

/// Full configuration of a trial. Field names double as the JSON schema and
/// the CLI flag names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub doses: Vec<f64>,
    pub theta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub c1: f64,
    pub c2: f64,
    pub r: f64,
    pub cohort_size: usize,
    pub n_max: usize,
    pub n1: usize,
    pub acquisition: Acquisition,
    pub inference: InferenceMode,
    pub seed: u64,

    pub q1: f64,
    pub qj: f64,
    pub sigma_band: SigmaBand,
    /// Prior mean of sigma_f used for the mean function; defaults to the
    /// mean of the log-normal hyperprior.
    pub sigma_f_tilde: Option<f64>,
    pub initial_guess: Option<Vec<f64>>,
    pub ell: f64,
    pub refinement: usize,
    pub credible_level: f64,
    pub safety_threshold: f64,
    pub mcmc_iterations: Option<usize>,
    pub mcmc_burn_in: Option<usize>,
    pub crm: CrmSettings,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            doses: equally_spaced_doses(5),
            theta: 0.3,
            delta1: 0.05,
            delta2: 0.1,
            c1: 0.5,
            c2: 0.9,
            r: 1.0,
            cohort_size: 3,
            n_max: 36,
            n1: 2,
            acquisition: Acquisition::Misclass,
            inference: InferenceMode::Ess,
            seed: 42,
            q1: 0.1,
            qj: 0.1,
            sigma_band: SigmaBand::default(),
            sigma_f_tilde: None,
            initial_guess: None,
            ell: 1.0,
            refinement: 21,
            credible_level: 0.95,
            safety_threshold: 0.9,
            mcmc_iterations: None,
            mcmc_burn_in: None,
            crm: CrmSettings::default(),
        }
    }
}

impl TrialConfig {
    pub fn levels(&self) -> usize {
        self.doses.len()
    }

    /// Every violated constraint, in a fixed order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        let j = self.levels();
        check(j >= 2, format!("doses: at least 2 levels required, got {j}"));
        check(
            self.doses.iter().all(|d| (0.0..=1.0).contains(d)) && self.doses.windows(2).all(|w| w[1] > w[0]),
            "doses: must be strictly increasing within [0, 1]".into(),
        );
        check(self.theta > 0.0 && self.theta < 1.0, format!("theta: must lie in (0,1), got {}", self.theta));
        check(self.delta1 > 0.0, format!("delta1: must be positive, got {}", self.delta1));
        check(self.delta2 >= self.delta1, format!("delta2: must be >= delta1, got {} < {}", self.delta2, self.delta1));
        check(
            self.theta - self.delta1 > 0.0 && self.theta + self.delta1 < 1.0,
            "delta1: theta ± delta1 must lie in (0,1)".into(),
        );
        check(
            (0.0..=1.0).contains(&self.c1) && (0.0..=1.0).contains(&self.c2) && self.c1 <= self.c2,
            format!("c1, c2: require 0 <= c1 <= c2 <= 1, got c1={} c2={}", self.c1, self.c2),
        );
        check(self.r >= 0.0 && self.r.is_finite(), format!("r: must be a finite value >= 0, got {}", self.r));
        check(self.cohort_size >= 1, "cohort_size: must be at least 1".into());
        check(
            self.n_max >= self.cohort_size.max(1) && self.n_max.is_multiple_of(self.cohort_size.max(1)),
            format!("n_max: must be a positive multiple of cohort_size ({}), got {}", self.cohort_size, self.n_max),
        );
        check(self.n1 >= 1, "n1: must be at least 1".into());
        check(self.q1 > 0.0 && self.q1 < 1.0, format!("q1: must lie in (0,1), got {}", self.q1));
        check(self.qj > 0.0 && self.qj < 1.0, format!("qj: must lie in (0,1), got {}", self.qj));
        check(
            self.sigma_band.sigma_f1 > 0.0 && self.sigma_band.sigma_f1 <= self.sigma_band.sigma_f2,
            "sigma_band: require 0 < sigma_f1 <= sigma_f2".into(),
        );
        if let Some(s) = self.sigma_f_tilde {
            check(s > 0.0 && s.is_finite(), format!("sigma_f_tilde: must be positive, got {s}"));
        }
        if let Some(g) = &self.initial_guess {
            check(g.len() == j, format!("initial_guess: expected {j} values, got {}", g.len()));
            check(g.iter().all(|&a| a > 0.0 && a < 1.0), "initial_guess: values must lie in (0,1)".into());
        }
        check(self.ell > 0.0 && self.ell.is_finite(), format!("ell: must be positive, got {}", self.ell));
        check(self.refinement != 1, "refinement: must be 0 or at least 2".into());
        check(
            self.credible_level > 0.0 && self.credible_level < 1.0,
            format!("credible_level: must lie in (0,1), got {}", self.credible_level),
        );
        check(
            self.safety_threshold > 0.0 && self.safety_threshold <= 1.0,
            format!("safety_threshold: must lie in (0,1], got {}", self.safety_threshold),
        );
        if let (Some(it), Some(b)) = (self.mcmc_iterations, self.mcmc_burn_in) {
            check(it > b, format!("mcmc_iterations: must exceed mcmc_burn_in, got {it} <= {b}"));
        }
        check(self.theta < 1.0 / 1.4, "theta: BOIN boundaries need theta < 0.714".into());
        let crm = &self.crm;
        check(
            crm.beta_prior_variance > 0.0 && crm.beta_prior_variance.is_finite(),
            "crm.beta_prior_variance: must be positive".into(),
        );
        match &crm.skeleton {
            Some(s) => check(
                s.len() == j && s.iter().all(|&a| a > 0.0 && a < 1.0) && s.windows(2).all(|w| w[1] > w[0]),
                format!("crm.skeleton: must be {j} strictly increasing values in (0,1)"),
            ),
            None => {
                check(
                    crm.prior_mtd >= 1 && crm.prior_mtd <= j,
                    format!("crm.prior_mtd: must lie in 1..={j}, got {}", crm.prior_mtd),
                );
                check(
                    crm.halfwidth > 0.0 && self.theta - crm.halfwidth > 0.0 && self.theta + crm.halfwidth < 1.0,
                    "crm.halfwidth: theta ± halfwidth must lie in (0,1)".into(),
                );
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn grid(&self) -> Result<DoseGrid> {
        DoseGrid::new(&self.doses, self.refinement)
    }

    pub fn sigma_prior(&self) -> Result<SigmaPrior> {
        sigma_f_prior(&self.sigma_band)
    }

    pub fn sigma_f_tilde(&self) -> Result<f64> {
        match self.sigma_f_tilde {
            Some(s) => Ok(s),
            None => Ok(self.sigma_prior()?.mean_sigma_f()),
        }
    }

    /// MCMC settings, falling back to `default` for unset budget fields.
    pub fn mcmc(&self, default: &McmcConfig) -> McmcConfig {
        McmcConfig {
            iterations: self.mcmc_iterations.unwrap_or(default.iterations),
            burn_in: self.mcmc_burn_in.unwrap_or(default.burn_in),
            mode: self.inference,
            seed: Some(self.seed),
        }
    }

    pub fn quantile_spec(&self, nu: Option<usize>) -> Result<QuantileSpec> {
        Ok(QuantileSpec {
            theta: self.theta,
            delta1: self.delta1,
            q1: self.q1,
            qj: self.qj,
            sigma_f_tilde: self.sigma_f_tilde()?,
            nu,
        })
    }

    /// Prior means at the candidate doses for prior MTD `nu`.
    pub fn candidate_means(&self, nu: Option<usize>) -> Result<Vec<f64>> {
        if let Some(g) = &self.initial_guess {
            return means_from_initial_guess(g);
        }
        let spec = self.quantile_spec(nu)?;
        let (m1, mj) = edge_prior_means(&spec)?;
        mean_function(m1, mj, nu, self.theta, self.levels())
    }

    pub fn gp_prior(&self, grid: &DoseGrid, nu: Option<usize>) -> Result<GaussianPrior> {
        let mean = grid_mean(&self.candidate_means(nu)?, grid)?;
        build_prior(grid, &mean, &KernelHyper::new(self.sigma_f_tilde()?, self.ell)?)
    }

    pub fn crm_model(&self) -> Result<CrmModel> {
        let skeleton = match &self.crm.skeleton {
            Some(s) => s.clone(),
            None => crm_skeleton(self.theta, self.crm.prior_mtd, self.crm.halfwidth, self.levels())?,
        };
        CrmModel::new(skeleton, self.crm.beta_prior_variance)
    }
}
