//! Sequential conduct of one trial: cohort submission, stage transitions,
//! stopping and finalization for every supported design.

use serde::{Deserialize, Serialize};

use super::config::TrialConfig;
use super::rules::{
    acquisition_values, admissible_set, classify_levels, mtd_estimate, next_dose, recommend_dose, safety_stop,
    LevelSetPartition, MtdEstimate, Rationale, Recommendation,
};
use crate::baselines::bo::{bo_ei_acquisition, bo_recommend};
use crate::baselines::boin::{boin_boundaries, BoinBoundaries, BoinStep, BoinTracker};
use crate::baselines::crm::{closest_to_target, crm_next_dose, crm_posterior_means, crm_prob_overdose_lowest, CrmModel, DoseCounts};
use crate::error::{invalid, Error, Result};
use crate::gp::{infer, posterior_prob_sublevel, DoseGrid, McmcConfig, McmcDiagnostics, Observation, PosteriorSamples, PosteriorSummary};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Lse,
    Crm,
    Boin,
    Bo,
}

impl DesignKind {
    pub const ALL: [DesignKind; 4] = [DesignKind::Lse, DesignKind::Crm, DesignKind::Boin, DesignKind::Bo];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Lse => "lse",
            Self::Crm => "crm",
            Self::Boin => "boin",
            Self::Bo => "bo",
        }
    }

    fn two_stage(&self) -> bool {
        matches!(self, Self::Lse | Self::Bo)
    }
}

impl std::fmt::Display for DesignKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DesignKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lse" => Ok(Self::Lse),
            "crm" => Ok(Self::Crm),
            "boin" => Ok(Self::Boin),
            "bo" => Ok(Self::Bo),
            other => Err(Error::Parse(format!("unknown design '{other}' (expected lse|crm|boin|bo)"))),
        }
    }
}

/// Trial stage. The single-stage comparators (CRM, BOIN) stay in `First`
/// until they stop or finalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    First,
    Second,
    Stopped,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The lowest dose is judged too toxic.
    Safety,
}

/// Everything decided after one cohort's outcomes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_dose: Option<usize>,
    pub transition: bool,
    pub nu: Option<usize>,
    /// `Pr(pi <= theta)` at the candidate doses.
    pub p_sub: Option<Vec<f64>>,
    /// `Pr(pi >= theta)` at the candidate doses.
    pub p_super: Option<Vec<f64>>,
    pub posterior_mean: Option<Vec<f64>>,
    pub acquisition: Option<Vec<f64>>,
    pub admissible: Option<Vec<usize>>,
    /// CRM probability that the lowest dose exceeds the target.
    pub p_overdose_lowest: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub budget_exhausted: bool,
    pub diagnostics: Option<McmcDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    /// 1-based cohort sequence number.
    pub seq: usize,
    pub dose_level: usize,
    pub outcomes: Vec<bool>,
    pub dlt_count: usize,
    /// Stage in which the cohort was dosed.
    pub stage: Stage,
    /// Dosed away from the pending recommendation.
    pub overridden: bool,
    pub stage_after: Stage,
    pub decision: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub design: DesignKind,
    pub recommendation: Recommendation,
    pub partition: Option<LevelSetPartition>,
    /// `Pr(pi <= theta)` at the candidate doses under the final posterior.
    pub p_sub: Option<Vec<f64>>,
    pub mtd_candidate: Option<MtdEstimate>,
    pub mtd_grid: Option<MtdEstimate>,
    pub stop_reason: Option<StopReason>,
    pub enrolled: usize,
    pub first_stage_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub design: DesignKind,
    pub stage: Stage,
    /// Level given to the most recent cohort (level 1 before any cohort).
    pub current_dose_level: usize,
    /// Pending recommendation; `None` once stopped or out of patients.
    pub next_dose: Option<usize>,
    pub enrolled: usize,
    pub observations: Vec<Observation>,
    pub cohort_log: Vec<CohortRecord>,
    /// Prior MTD location fixed at the end of the first stage.
    pub nu: Option<usize>,
    pub stop_reason: Option<StopReason>,
    pub counts: BoinTracker,
    pub final_report: Option<FinalReport>,
}

/// Posterior of the latest cohort, laid out for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorView {
    pub seq: usize,
    pub grid: Vec<f64>,
    pub candidate_positions: Vec<usize>,
    pub summary: PosteriorSummary,
    pub p_sub_grid: Vec<f64>,
    pub p_sub: Vec<f64>,
}

pub struct TrialSession {
    config: TrialConfig,
    grid: DoseGrid,
    budget: McmcConfig,
    bounds: BoinBoundaries,
    crm: Option<CrmModel>,
    state: TrialState,
    posterior: Option<PosteriorSamples>,
    posterior_seq: usize,
}

impl TrialSession {
    /// New trial with the simulation MCMC budget as default.
    pub fn new(kind: DesignKind, config: TrialConfig) -> Result<Self> {
        Self::with_budget(kind, config, McmcConfig::simulation())
    }

    /// New trial; `budget` applies where the config leaves the MCMC budget unset.
    pub fn with_budget(kind: DesignKind, config: TrialConfig, budget: McmcConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let bounds = boin_boundaries(config.theta)?;
        let crm = if kind == DesignKind::Crm { Some(config.crm_model()?) } else { None };
        config.mcmc(&budget).validate()?;
        let state = TrialState {
            design: kind,
            stage: Stage::First,
            current_dose_level: 1,
            next_dose: Some(1),
            enrolled: 0,
            observations: Vec::new(),
            cohort_log: Vec::new(),
            nu: None,
            stop_reason: None,
            counts: BoinTracker::new(config.levels()),
            final_report: None,
        };
        Ok(Self { config, grid, budget, bounds, crm, state, posterior: None, posterior_seq: 0 })
    }

    pub fn kind(&self) -> DesignKind {
        self.state.design
    }

    pub fn config(&self) -> &TrialConfig {
        &self.config
    }

    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    pub fn state(&self) -> &TrialState {
        &self.state
    }

    pub fn posterior(&self) -> Option<&PosteriorSamples> {
        self.posterior.as_ref()
    }

    pub fn pending_dose(&self) -> Option<usize> {
        match self.state.stage {
            Stage::Stopped | Stage::Finalized => None,
            _ => self.state.next_dose,
        }
    }

    pub fn posterior_view(&self) -> Option<PosteriorView> {
        let samples = self.posterior.as_ref()?;
        let seq = self.posterior_seq;
        let p_sub_grid = posterior_prob_sublevel(samples, self.config.theta);
        Some(PosteriorView {
            seq,
            grid: self.grid.points().to_vec(),
            candidate_positions: self.grid.candidate_positions().to_vec(),
            summary: samples.summary(),
            p_sub: self.grid.at_candidates(&p_sub_grid),
            p_sub_grid,
        })
    }

    /// Record one cohort at `dose_level` and decide what comes next.
    pub fn submit_cohort(&mut self, dose_level: usize, outcomes: &[bool], allow_override: bool) -> Result<&CohortRecord> {
        let pending = match self.state.stage {
            Stage::Stopped => return Err(Error::State("trial has stopped".into())),
            Stage::Finalized => return Err(Error::State("trial is finalized".into())),
            _ => self.state.next_dose.ok_or_else(|| Error::State("sample size exhausted; finalize the trial".into()))?,
        };
        if outcomes.len() != self.config.cohort_size {
            return Err(invalid(format!(
                "cohort must have {} outcomes, got {}",
                self.config.cohort_size,
                outcomes.len()
            )));
        }
        let levels = self.config.levels();
        if dose_level == 0 || dose_level > levels {
            return Err(invalid(format!("dose level must lie in 1..={levels}, got {dose_level}")));
        }
        if dose_level != pending && !allow_override {
            return Err(Error::State(format!(
                "dose level {dose_level} differs from the recommended level {pending}; an override is required"
            )));
        }

        let mut st = self.state.clone();
        let seq = st.cohort_log.len() + 1;
        let dlts = outcomes.iter().filter(|&&o| o).count();
        let stage = st.stage;
        st.observations.extend(outcomes.iter().map(|&o| Observation::new(dose_level, o)));
        st.counts.record(dose_level, dlts as u32, outcomes.len() as u32);
        st.enrolled += outcomes.len();
        st.current_dose_level = dose_level;
        let exhausted = st.enrolled >= self.config.n_max;

        let (decision, posterior) = match st.design {
            DesignKind::Lse | DesignKind::Bo => self.two_stage_step(&mut st, dose_level, seq, exhausted)?,
            DesignKind::Crm => (self.crm_step(&mut st, dose_level, exhausted)?, None),
            DesignKind::Boin => (self.boin_step(&mut st, dose_level, exhausted), None),
        };
        st.next_dose = decision.next_dose;
        if let Some(reason) = decision.stop_reason {
            st.stage = Stage::Stopped;
            st.stop_reason = Some(reason);
        }
        st.cohort_log.push(CohortRecord {
            seq,
            dose_level,
            outcomes: outcomes.to_vec(),
            dlt_count: dlts,
            stage,
            overridden: dose_level != pending,
            stage_after: st.stage,
            decision,
        });
        self.state = st;
        if posterior.is_some() {
            self.posterior = posterior;
            self.posterior_seq = seq;
        }
        Ok(self.state.cohort_log.last().expect("just pushed"))
    }

    fn two_stage_step(
        &self,
        st: &mut TrialState,
        dose_level: usize,
        seq: usize,
        exhausted: bool,
    ) -> Result<(StepOutcome, Option<PosteriorSamples>)> {
        if st.stage == Stage::Second {
            return self.second_stage_step(st, dose_level, seq, exhausted).map(|(o, p)| (o, Some(p)));
        }
        let step = st.counts.step(dose_level, self.config.theta, &self.bounds, false);
        let total_dlts: u32 = st.counts.y.iter().sum();
        if total_dlts as usize >= self.config.n1 || dose_level == self.config.levels() {
            let nu = match step {
                BoinStep::Next(n) => n,
                BoinStep::Stop => 1,
            };
            st.nu = Some(nu);
            st.stage = Stage::Second;
            let (mut out, post) = self.second_stage_step(st, dose_level, seq, exhausted)?;
            out.transition = true;
            out.nu = Some(nu);
            return Ok((out, Some(post)));
        }
        let out = match step {
            BoinStep::Stop => StepOutcome { stop_reason: Some(StopReason::Safety), ..Default::default() },
            BoinStep::Next(_) if exhausted => StepOutcome { budget_exhausted: true, ..Default::default() },
            BoinStep::Next(n) => StepOutcome { next_dose: Some(n), ..Default::default() },
        };
        Ok((out, None))
    }

    fn second_stage_step(
        &self,
        st: &TrialState,
        current: usize,
        seq: usize,
        exhausted: bool,
    ) -> Result<(StepOutcome, PosteriorSamples)> {
        let cfg = &self.config;
        let prior = cfg.gp_prior(&self.grid, st.nu)?;
        let mcmc = cfg.mcmc(&self.budget);
        let mut rng = stream(derive_seed(&[cfg.seed, seq as u64]));
        let samples = infer(&prior, &st.observations, &self.grid, cfg.sigma_prior()?, &mcmc, &mut rng)?;
        let positions = self.grid.candidate_positions();
        let p_super = self.grid.at_candidates(&samples.prob_superlevel(cfg.theta));
        let p_sub = self.grid.at_candidates(&posterior_prob_sublevel(&samples, cfg.theta));
        let mean = self.grid.at_candidates(&samples.posterior_mean());
        let mut out = StepOutcome {
            p_super: Some(p_super.clone()),
            p_sub: Some(p_sub.clone()),
            posterior_mean: Some(mean),
            diagnostics: Some(samples.diagnostics.clone()),
            ..Default::default()
        };
        if safety_stop(p_super[0], cfg.safety_threshold) {
            out.stop_reason = Some(StopReason::Safety);
        } else if exhausted {
            out.budget_exhausted = true;
        } else {
            let admissible = admissible_set(current, &p_super, cfg.c1, cfg.c2);
            let acq = match st.design {
                DesignKind::Bo => bo_ei_acquisition(&samples, positions, cfg.theta),
                _ => acquisition_values(&samples, positions, &p_sub, cfg.theta, cfg.r, cfg.acquisition, cfg.credible_level),
            };
            out.next_dose = Some(next_dose(&acq, &admissible).ok_or_else(|| Error::State("no admissible dose".into()))?);
            out.acquisition = Some(acq);
            out.admissible = Some(admissible);
        }
        Ok((out, samples))
    }

    fn crm_counts(st: &TrialState) -> DoseCounts {
        DoseCounts { y: st.counts.y.clone(), n: st.counts.n.clone() }
    }

    fn crm_step(&self, st: &mut TrialState, current: usize, exhausted: bool) -> Result<StepOutcome> {
        let model = self.crm.as_ref().expect("crm model built for crm design");
        let counts = Self::crm_counts(st);
        let p_od = crm_prob_overdose_lowest(model, &counts, self.config.theta)?;
        let means = crm_posterior_means(model, &counts)?;
        let mut out = StepOutcome { p_overdose_lowest: Some(p_od), posterior_mean: Some(means.clone()), ..Default::default() };
        if safety_stop(p_od, self.config.safety_threshold) {
            out.stop_reason = Some(StopReason::Safety);
        } else if exhausted {
            out.budget_exhausted = true;
        } else {
            out.next_dose = Some(crm_next_dose(&means, current, self.config.theta));
        }
        Ok(out)
    }

    fn boin_step(&self, st: &mut TrialState, current: usize, exhausted: bool) -> StepOutcome {
        match st.counts.step(current, self.config.theta, &self.bounds, true) {
            BoinStep::Stop => StepOutcome { stop_reason: Some(StopReason::Safety), ..Default::default() },
            BoinStep::Next(_) if exhausted => StepOutcome { budget_exhausted: true, ..Default::default() },
            BoinStep::Next(n) => StepOutcome { next_dose: Some(n), ..Default::default() },
        }
    }

    /// Final recommendation. Repeated calls return the stored report.
    pub fn finalize(&mut self) -> Result<FinalReport> {
        if let Some(r) = &self.state.final_report {
            return Ok(r.clone());
        }
        if self.state.cohort_log.is_empty() {
            return Err(Error::State("no cohort has been enrolled; nothing to finalize".into()));
        }
        let cfg = &self.config;
        let st = &self.state;
        let mut report = FinalReport {
            design: st.design,
            recommendation: Recommendation::plain(None, Rationale::SafetyStop),
            partition: None,
            p_sub: None,
            mtd_candidate: None,
            mtd_grid: None,
            stop_reason: st.stop_reason,
            enrolled: st.enrolled,
            first_stage_only: false,
        };
        if st.stage != Stage::Stopped {
            match st.design {
                d if d.two_stage() && st.stage == Stage::First => {
                    report.first_stage_only = true;
                    report.recommendation = boin_selection(&st.counts, cfg.theta, Rationale::FirstStageOnly);
                }
                DesignKind::Lse | DesignKind::Bo => {
                    let samples = self.posterior.as_ref().ok_or_else(|| Error::State("posterior unavailable".into()))?;
                    let p_grid = posterior_prob_sublevel(samples, cfg.theta);
                    let p = self.grid.at_candidates(&p_grid);
                    let u = self.grid.at_candidates(&samples.prob_in_interval(cfg.theta - cfg.delta1, cfg.theta + cfg.delta1));
                    let mean = self.grid.at_candidates(&samples.posterior_mean());
                    if st.design == DesignKind::Lse {
                        let partition = classify_levels(&p);
                        report.recommendation = recommend_dose(&partition, &u, &mean, cfg.theta, cfg.delta2);
                        report.partition = Some(partition);
                        report.mtd_grid = Some(mtd_estimate(&p_grid, self.grid.points()));
                        report.mtd_candidate = Some(mtd_estimate(&p, &self.grid.candidate_doses()));
                    } else {
                        let level = bo_recommend(&u, &mean, cfg.theta, cfg.delta2);
                        report.recommendation = Recommendation::plain(Some(level), Rationale::BoInterval);
                    }
                    report.p_sub = Some(p);
                }
                DesignKind::Crm => {
                    let model = self.crm.as_ref().expect("crm model built for crm design");
                    let means = crm_posterior_means(model, &Self::crm_counts(st))?;
                    report.recommendation =
                        Recommendation::plain(Some(closest_to_target(&means, cfg.theta)), Rationale::CrmClosest);
                }
                DesignKind::Boin => {
                    report.recommendation = boin_selection(&st.counts, cfg.theta, Rationale::BoinIsotonic);
                }
            }
        }
        self.state.stage = Stage::Finalized;
        self.state.next_dose = None;
        self.state.final_report = Some(report.clone());
        Ok(report)
    }
}

fn boin_selection(counts: &BoinTracker, theta: f64, rationale: Rationale) -> Recommendation {
    match counts.select_mtd(theta) {
        Some(level) => Recommendation::plain(Some(level), rationale),
        None => Recommendation::plain(None, Rationale::NoEligibleDose),
    }
}
