//! Dose finding for phase I trials via level set estimation on a latent
//! Gaussian-process toxicity model, with CRM, BOIN and BO comparators, a
//! simulation harness and numerical checks of the LSE convergence bounds.

// NaN must fail these parameter checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod design;
pub mod error;
pub mod gp;
pub mod math;
pub mod prior_spec;
pub mod rng;
pub mod sim;
pub mod theory;

pub use error::{Error, Result};
pub use gp::{DoseGrid, GaussianPrior, KernelHyper, McmcConfig, Observation, PosteriorSamples};
pub use design::{DesignKind, TrialConfig, TrialSession};
pub use prior_spec::{QuantileSpec, SigmaBand, SigmaPrior};
