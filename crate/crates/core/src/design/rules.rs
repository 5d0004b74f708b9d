//! Decision rules of the LSE design: acquisition, admissible set, next dose,
//! safety stop, classification and recommendation.

use serde::{Deserialize, Serialize};

use crate::math::sorted_quantile;
use crate::gp::PosteriorSamples;

/// `p^r min(p, 1 - p)` with `0^0 = 1`.
pub fn acquisition_misclass(p: f64, r: f64) -> f64 {
    p.powf(r) * p.min(1.0 - p)
}

/// `p^r min(upper - theta, theta - lower)` for a credible interval
/// `[lower, upper]`.
pub fn acquisition_ambiguity(p: f64, lower: f64, upper: f64, theta: f64, r: f64) -> f64 {
    p.powf(r) * (upper - theta).min(theta - lower)
}

/// Doses eligible for the next cohort. If the lowest dose is likely too
/// toxic (`p_super[0] >= c1`) only level 1 is admissible; otherwise levels up
/// to one above `current` whose superlevel probability is at most `c2`.
pub fn admissible_set(current: usize, p_super: &[f64], c1: f64, c2: f64) -> Vec<usize> {
    if p_super[0] >= c1 {
        return vec![1];
    }
    (1..=p_super.len().min(current + 1)).filter(|&j| p_super[j - 1] <= c2).collect()
}

/// Admissible level with the largest acquisition value, ties to the lowest.
pub fn next_dose(acq: &[f64], admissible: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &j in admissible {
        if best.is_none_or(|b| acq[j - 1] > acq[b - 1]) {
            best = Some(j);
        }
    }
    best
}

pub fn safety_stop(p_super_lowest: f64, threshold: f64) -> bool {
    p_super_lowest >= threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetPartition {
    pub sublevel: Vec<usize>,
    pub superlevel: Vec<usize>,
}

/// Level `j` is sublevel iff `p[j] >= 0.5`.
pub fn classify_levels(p: &[f64]) -> LevelSetPartition {
    let (sublevel, superlevel) = (1..=p.len()).partition(|&j| p[j - 1] >= 0.5);
    LevelSetPartition { sublevel, superlevel }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtdRange {
    Interior,
    /// No point is classified sublevel.
    BelowRange,
    /// Every point is classified sublevel.
    AboveRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtdEstimate {
    /// Largest point classified sublevel; `None` below range.
    pub value: Option<f64>,
    pub range: MtdRange,
}

/// Largest point `x` with `p(x) >= 0.5`.
pub fn mtd_estimate(p: &[f64], points: &[f64]) -> MtdEstimate {
    let last = (0..p.len()).rev().find(|&i| p[i] >= 0.5);
    match last {
        None => MtdEstimate { value: None, range: MtdRange::BelowRange },
        Some(i) if p.iter().all(|&v| v >= 0.5) => MtdEstimate { value: Some(points[i]), range: MtdRange::AboveRange },
        Some(i) => MtdEstimate { value: Some(points[i]), range: MtdRange::Interior },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rationale {
    AllSuperlevel,
    AllSublevel,
    /// Highest sublevel dose kept.
    IntervalLower,
    /// Lowest superlevel dose preferred.
    IntervalUpper,
    FirstStageOnly,
    CrmClosest,
    BoinIsotonic,
    BoInterval,
    SafetyStop,
    NoEligibleDose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub dose_level: Option<usize>,
    pub rationale: Rationale,
    pub u_minus: Option<f64>,
    pub u_plus: Option<f64>,
}

impl Recommendation {
    pub fn plain(dose_level: Option<usize>, rationale: Rationale) -> Self {
        Self { dose_level, rationale, u_minus: None, u_plus: None }
    }
}

/// Final recommendation from the partition. `u` holds
/// `Pr(theta - delta1 <= pi <= theta + delta1)` and `mean` the posterior mean
/// at each candidate level.
pub fn recommend_dose(partition: &LevelSetPartition, u: &[f64], mean: &[f64], theta: f64, delta2: f64) -> Recommendation {
    let levels = u.len();
    if partition.sublevel.is_empty() {
        return Recommendation::plain(Some(1), Rationale::AllSuperlevel);
    }
    if partition.superlevel.is_empty() {
        return Recommendation::plain(Some(levels), Rationale::AllSublevel);
    }
    let minus = *partition.sublevel.iter().max().unwrap();
    let plus = *partition.superlevel.iter().min().unwrap();
    let (um, up) = (u[minus - 1], u[plus - 1]);
    let (dose, rationale) = if um < up && mean[plus - 1] <= theta + delta2 {
        (plus, Rationale::IntervalUpper)
    } else {
        (minus, Rationale::IntervalLower)
    };
    Recommendation { dose_level: Some(dose), rationale, u_minus: Some(um), u_plus: Some(up) }
}

/// Acquisition values at the given grid positions.
pub fn acquisition_values(
    samples: &PosteriorSamples,
    positions: &[usize],
    p_sub: &[f64],
    theta: f64,
    r: f64,
    kind: super::Acquisition,
    credible_level: f64,
) -> Vec<f64> {
    match kind {
        super::Acquisition::Misclass => p_sub.iter().map(|&p| acquisition_misclass(p, r)).collect(),
        super::Acquisition::Ambiguity => {
            let tail = 0.5 * (1.0 - credible_level);
            positions
                .iter()
                .zip(p_sub)
                .map(|(&g, &p)| {
                    let col = samples.sorted_column(g);
                    acquisition_ambiguity(p, sorted_quantile(&col, tail), sorted_quantile(&col, 1.0 - tail), theta, r)
                })
                .collect()
        }
    }
}
