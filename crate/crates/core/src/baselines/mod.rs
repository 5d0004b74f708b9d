//! Comparator designs: CRM, BOIN and GP-based Bayesian optimization.

pub mod bo;
pub mod boin;
pub mod crm;

pub use bo::{bo_ei_acquisition, bo_recommend};
pub use boin::{boin_boundaries, boin_next_dose, BoinBoundaries, BoinStep, BoinTracker};
pub use crm::{crm_next_dose, crm_posterior_means, crm_prob_overdose_lowest, crm_skeleton, CrmModel, DoseCounts};
