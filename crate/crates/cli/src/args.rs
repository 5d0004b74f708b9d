use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lse_dose::design::{Acquisition, DesignKind, TrialConfig};
use lse_dose::gp::InferenceMode;
use lse_dose::sim::{EarlyStopDenominator, Parallelism};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "lse-dose", version, about = "Level-set-estimation dose finding for phase I trials", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Operating characteristics over replicated simulated trials.
    Simulate(SimulateArgs),
    /// Step through one trial from scripted or typed cohort outcomes.
    Conduct(ConductArgs),
    /// Run the HTTP trial service.
    Serve(ServeArgs),
    /// Run the LSE algorithm against a known curve and report the bound check.
    TheoryCheck(TheoryArgs),
    /// Prior median, bands and sample paths over the dose grid.
    PriorPreview(PriorArgs),
    /// Choose the overdose exponent r by a composite index.
    CalibrateR(CalibrateArgs),
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Flags named after the `TrialConfig` JSON fields; unset flags keep the
/// value from `--config` or the default.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON file with a TrialConfig; individual flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated dose labels (one per level).
    #[arg(long, value_delimiter = ',')]
    pub doses: Option<Vec<f64>>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub delta1: Option<f64>,
    #[arg(long)]
    pub delta2: Option<f64>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub cohort_size: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long, value_parser = |s: &str| s.parse::<Acquisition>().map_err(|e| e.to_string()))]
    pub acquisition: Option<Acquisition>,
    #[arg(long, value_parser = |s: &str| s.parse::<InferenceMode>().map_err(|e| e.to_string()))]
    pub inference: Option<InferenceMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub q1: Option<f64>,
    #[arg(long)]
    pub qj: Option<f64>,
    #[arg(long)]
    pub sigma_f1: Option<f64>,
    #[arg(long)]
    pub sigma_f2: Option<f64>,
    #[arg(long)]
    pub sigma_f_tilde: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub initial_guess: Option<Vec<f64>>,
    #[arg(long)]
    pub ell: Option<f64>,
    #[arg(long)]
    pub refinement: Option<usize>,
    #[arg(long)]
    pub credible_level: Option<f64>,
    #[arg(long)]
    pub safety_threshold: Option<f64>,
    #[arg(long)]
    pub mcmc_iterations: Option<usize>,
    #[arg(long)]
    pub mcmc_burn_in: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrialConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => TrialConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(doses, theta, delta1, delta2, c1, c2, r, cohort_size, n_max, n1, acquisition, inference, seed, q1, qj, ell, refinement, credible_level, safety_threshold);
        if let Some(v) = self.sigma_f1 {
            c.sigma_band.sigma_f1 = v;
        }
        if let Some(v) = self.sigma_f2 {
            c.sigma_band.sigma_f2 = v;
        }
        if self.sigma_f_tilde.is_some() {
            c.sigma_f_tilde = self.sigma_f_tilde;
        }
        if self.initial_guess.is_some() {
            c.initial_guess = self.initial_guess.clone();
        }
        if self.mcmc_iterations.is_some() {
            c.mcmc_iterations = self.mcmc_iterations;
        }
        if self.mcmc_burn_in.is_some() {
            c.mcmc_burn_in = self.mcmc_burn_in;
        }
        Ok(c)
    }
}

fn parse_design(s: &str) -> Result<DesignKind, String> {
    s.parse().map_err(|e: lse_dose::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub trial: ConfigArgs,
    /// `builtin` or a JSON scenario file.
    #[arg(long, default_value = "builtin")]
    pub scenarios: String,
    /// Restrict to these scenario ids.
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<u32>>,
    #[arg(long, default_value = "lse", value_delimiter = ',', value_parser = parse_design)]
    pub designs: Vec<DesignKind>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value = "auto", value_parser = |s: &str| s.parse::<Parallelism>().map_err(|e| e.to_string()))]
    pub parallel: Parallelism,
    #[arg(long, default_value = "include", value_parser = |s: &str| s.parse::<EarlyStopDenominator>().map_err(|e| e.to_string()))]
    pub early_stop_denominator: EarlyStopDenominator,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct ConductArgs {
    #[command(flatten)]
    pub trial: ConfigArgs,
    #[arg(long, default_value = "lse", value_parser = parse_design)]
    pub design: DesignKind,
    /// Scripted outcomes: one cohort per line, e.g. `0 1 0`, optionally
    /// prefixed by `LEVEL:` to dose a level other than the recommendation.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    /// MCMC budget as `iterations/burn_in` where the config leaves it unset.
    #[arg(long, default_value = "4000/1000")]
    pub inference_budget: String,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// 0 binds an OS-assigned port, which is printed.
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    #[arg(long, env = "INFERENCE_BUDGET", default_value = "4000/1000")]
    pub inference_budget: String,
}

#[derive(Args, Debug)]
pub struct TheoryArgs {
    #[arg(long, default_value_t = 0.05)]
    pub xi: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// RKHS norm bound.
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.3)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub ell: f64,
    /// Points of the uniform grid on [0, 1].
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
    /// Where the logistic truth crosses theta.
    #[arg(long, default_value_t = 0.525)]
    pub crossing: f64,
    #[arg(long, default_value_t = 4.0)]
    pub slope: f64,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 200_000)]
    pub budget: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct PriorArgs {
    #[command(flatten)]
    pub trial: ConfigArgs,
    /// Prior MTD level; omitted means a straight line between the edge means.
    #[arg(long)]
    pub nu: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub draws: usize,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub trial: ConfigArgs,
    #[arg(long, default_value = "builtin")]
    pub scenarios: String,
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<u32>>,
    #[arg(long, default_value = "0,0.25,0.5,0.75,1,1.25", value_delimiter = ',')]
    pub r_grid: Vec<f64>,
    /// w1..w4 in `w1 PCS + w2 PCA - w3 POS - w4 POA`.
    #[arg(long, default_value = "1,1,1,1", value_delimiter = ',')]
    pub weights: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value = "auto", value_parser = |s: &str| s.parse::<Parallelism>().map_err(|e| e.to_string()))]
    pub parallel: Parallelism,
    #[arg(long, default_value = "include", value_parser = |s: &str| s.parse::<EarlyStopDenominator>().map_err(|e| e.to_string()))]
    pub early_stop_denominator: EarlyStopDenominator,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}
