//! Latent Gaussian-process model of the dose-toxicity curve.

pub mod grid;
pub mod kernel;
pub mod laplace;
pub mod posterior;
pub mod prior;
pub mod sampler;

pub use grid::{equally_spaced_doses, DoseGrid};
pub use kernel::{kernel_eval, kernel_matrix, KernelHyper};
pub use laplace::{laplace_approximation, laplace_posterior, LaplaceApproximation};
pub use posterior::{posterior_prob_sublevel, McmcDiagnostics, Observation, PosteriorSamples, PosteriorSummary};
pub use prior::{build_prior, cholesky_with_jitter, prior_draws, GaussianPrior};
pub use sampler::{effective_sample_size, infer, sample_posterior, InferenceMode, McmcConfig};
