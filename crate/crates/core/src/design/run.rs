use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TrialConfig;
use super::session::{DesignKind, FinalReport, StopReason, TrialSession};
use crate::error::{invalid, Result};

/// Summary of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub design: DesignKind,
    /// `(dose level, DLT count)` per cohort in order.
    pub cohorts: Vec<(usize, usize)>,
    /// Patients treated at each level.
    pub allocation: Vec<usize>,
    pub dlts: usize,
    pub enrolled: usize,
    pub recommendation: Option<usize>,
    pub stop_reason: Option<StopReason>,
    pub report: FinalReport,
}

/// Simulate one trial against true toxicity probabilities `true_pi`, drawing
/// outcomes from `rng` and inference randomness from `config.seed`.
pub fn run_trial<R: Rng + ?Sized>(kind: DesignKind, true_pi: &[f64], config: &TrialConfig, rng: &mut R) -> Result<TrialRecord> {
    if true_pi.len() != config.levels() {
        return Err(invalid(format!("{} true probabilities for {} dose levels", true_pi.len(), config.levels())));
    }
    if true_pi.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("true toxicity probabilities must lie in [0,1]"));
    }
    let mut session = TrialSession::new(kind, config.clone())?;
    let mut outcomes = vec![false; config.cohort_size];
    while let Some(level) = session.pending_dose() {
        for o in outcomes.iter_mut() {
            *o = rng.random::<f64>() < true_pi[level - 1];
        }
        session.submit_cohort(level, &outcomes, false)?;
    }
    let report = session.finalize()?;
    let state = session.state();
    let mut allocation = vec![0; config.levels()];
    let mut cohorts = Vec::with_capacity(state.cohort_log.len());
    for c in &state.cohort_log {
        allocation[c.dose_level - 1] += c.outcomes.len();
        cohorts.push((c.dose_level, c.dlt_count));
    }
    Ok(TrialRecord {
        design: kind,
        dlts: cohorts.iter().map(|c| c.1).sum(),
        cohorts,
        allocation,
        enrolled: state.enrolled,
        recommendation: report.recommendation.dose_level,
        stop_reason: report.stop_reason,
        report,
    })
}
