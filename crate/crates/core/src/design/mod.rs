//! The two-stage LSE trial design and the shared trial engine.

pub mod config;
pub mod rules;
pub mod run;
pub mod session;

pub use config::{Acquisition, CrmSettings, TrialConfig};
pub use rules::{
    acquisition_ambiguity, acquisition_misclass, admissible_set, classify_levels, mtd_estimate, next_dose,
    recommend_dose, safety_stop, LevelSetPartition, MtdEstimate, MtdRange, Rationale, Recommendation,
};
pub use run::{run_trial, TrialRecord};
pub use session::{
    CohortRecord, DesignKind, FinalReport, PosteriorView, Stage, StepOutcome, StopReason, TrialSession, TrialState,
};
