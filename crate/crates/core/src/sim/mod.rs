//! Operating characteristics by simulation: benchmark scenarios, replicated
//! trials, metrics, result files and calibration of the overdose exponent.

mod metrics;
mod scenarios;

use std::num::NonZeroUsize;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{compute_metrics, EarlyStopDenominator, Metrics, MetricsRow, MetricsTable, HEADER};
pub use scenarios::{builtin_scenario, builtin_scenarios, load_scenarios, parse_scenarios, Scenario};

use crate::design::{run_trial, DesignKind, TrialConfig, TrialRecord};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, derived_stream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Parallelism {
    #[default]
    Auto,
    Threads(NonZeroUsize),
}

impl std::str::FromStr for Parallelism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        s.parse::<NonZeroUsize>()
            .map(Self::Threads)
            .map_err(|_| Error::Parse(format!("parallelism must be 'auto' or a positive integer, got '{s}'")))
    }
}

impl Parallelism {
    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Self::Threads(n) = self {
            b = b.num_threads(n.get());
        }
        b.build().map_err(|e| invalid(format!("thread pool: {e}")))
    }
}

/// What to simulate. Every replication draws its randomness from a seed
/// derived from `(seed, scenario, design, rep)` alone.
#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub designs: Vec<DesignKind>,
    pub scenarios: Vec<Scenario>,
    pub reps: usize,
    /// Base trial configuration; `theta` is taken from each scenario and the
    /// seed from `seed` below.
    pub config: TrialConfig,
    pub seed: u64,
    pub denominator: EarlyStopDenominator,
}

fn design_tag(kind: DesignKind) -> u64 {
    match kind {
        DesignKind::Lse => 0,
        DesignKind::Crm => 1,
        DesignKind::Boin => 2,
        DesignKind::Bo => 3,
    }
}

pub fn replication_seed(seed: u64, scenario: u32, design: DesignKind, rep: usize) -> u64 {
    derive_seed(&[seed, scenario as u64, design_tag(design), rep as u64])
}

/// One replication: the trial configuration is seeded from `(s, 1)` and the
/// outcome stream from `(s, 2)`.
pub fn run_replication(kind: DesignKind, scenario: &Scenario, config: &TrialConfig, seed: u64, rep: usize) -> Result<TrialRecord> {
    let s = replication_seed(seed, scenario.id, kind, rep);
    let fail = |message: String| Error::Replication { scenario: scenario.id, design: kind.to_string(), rep, seed: s, message };
    let mut cfg = config.clone();
    cfg.theta = scenario.theta;
    cfg.seed = derive_seed(&[s, 1]);
    let result = catch_unwind(AssertUnwindSafe(|| {
        let mut rng = derived_stream(&[s, 2]);
        run_trial(kind, &scenario.true_pi, &cfg, &mut rng)
    }));
    match result {
        Ok(Ok(record)) => Ok(record),
        Ok(Err(e)) => Err(fail(e.to_string())),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            Err(fail(format!("panicked: {msg}")))
        }
    }
}

fn row_r(kind: DesignKind, config: &TrialConfig) -> f64 {
    if kind == DesignKind::Lse { config.r } else { 0.0 }
}

pub fn simulate(plan: &SimulationPlan, parallelism: Parallelism) -> Result<MetricsTable> {
    if plan.reps == 0 {
        return Err(invalid("reps must be at least 1"));
    }
    if plan.designs.is_empty() || plan.scenarios.is_empty() {
        return Err(invalid("nothing to simulate"));
    }
    for s in &plan.scenarios {
        s.validate()?;
        if s.levels() != plan.config.levels() {
            return Err(invalid(format!("scenario {} has {} doses, configuration has {}", s.id, s.levels(), plan.config.levels())));
        }
        let mut cfg = plan.config.clone();
        cfg.theta = s.theta;
        cfg.validate()?;
    }
    let groups: Vec<(usize, DesignKind)> =
        (0..plan.scenarios.len()).flat_map(|i| plan.designs.iter().map(move |&d| (i, d))).collect();
    let jobs: Vec<(usize, usize)> = (0..groups.len()).flat_map(|g| (0..plan.reps).map(move |r| (g, r))).collect();
    let records: Vec<TrialRecord> = parallelism.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(g, rep)| {
                let (si, kind) = groups[g];
                run_replication(kind, &plan.scenarios[si], &plan.config, plan.seed, rep)
            })
            .collect::<Result<_>>()
    })?;
    let mut table = MetricsTable::default();
    for (g, chunk) in records.chunks(plan.reps).enumerate() {
        let (si, kind) = groups[g];
        let scenario = &plan.scenarios[si];
        table.rows.push(MetricsRow {
            scenario: scenario.id,
            design: kind.to_string(),
            r: row_r(kind, &plan.config),
            reps: plan.reps,
            seed: plan.seed,
            metrics: compute_metrics(chunk, scenario, plan.denominator),
        });
    }
    table.sort();
    Ok(table)
}

/// Weights of the composite index `w1 PCS + w2 PCA - w3 POS - w4 POA`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeWeights(pub [f64; 4]);

impl CompositeWeights {
    pub fn score(&self, m: &Metrics) -> f64 {
        let [w1, w2, w3, w4] = self.0;
        w1 * m.pcs + w2 * m.pca - w3 * m.pos - w4 * m.poa
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RScore {
    pub r: f64,
    pub score: f64,
    pub table: MetricsTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub best_r: f64,
    pub scores: Vec<RScore>,
}

/// Score each `r` by the composite index averaged over scenarios for the
/// LSE design. Ties go to the larger `r`.
pub fn calibrate_r(plan: &SimulationPlan, r_grid: &[f64], weights: CompositeWeights, parallelism: Parallelism) -> Result<Calibration> {
    if r_grid.is_empty() {
        return Err(invalid("r grid is empty"));
    }
    if weights.0.iter().any(|w| !(*w >= 0.0)) {
        return Err(invalid("composite weights must be nonnegative"));
    }
    if r_grid.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(invalid("r values must be finite and nonnegative"));
    }
    let mut scores = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let mut p = plan.clone();
        p.designs = vec![DesignKind::Lse];
        p.config.r = r;
        let table = simulate(&p, parallelism)?;
        let score = table.rows.iter().map(|row| weights.score(&row.metrics)).sum::<f64>() / table.rows.len() as f64;
        scores.push(RScore { r, score, table });
    }
    let best = scores
        .iter()
        .fold(None::<&RScore>, |best, s| match best {
            Some(b) if b.score > s.score || (b.score == s.score && b.r >= s.r) => Some(b),
            _ => Some(s),
        })
        .expect("nonempty grid");
    Ok(Calibration { best_r: best.r, scores })
}
