use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const DEDUP_TOL: f64 = 1e-9;

/// Points on the unit dose interval at which the latent field is represented:
/// the candidate doses plus an optional uniform refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseGrid {
    points: Vec<f64>,
    /// Grid position of candidate dose level `j` (stored at index `j - 1`).
    candidate_index: Vec<usize>,
}

impl DoseGrid {
    /// Union of `doses` and a `refinement`-point uniform grid on `[0, 1]`
    /// (pass 0 for candidates only).
    pub fn new(doses: &[f64], refinement: usize) -> Result<Self> {
        if doses.is_empty() {
            return Err(invalid("dose grid needs at least one candidate dose"));
        }
        for w in doses.windows(2) {
            if w[1] <= w[0] {
                return Err(invalid("candidate doses must be strictly increasing"));
            }
        }
        if doses.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(invalid("candidate doses must lie in [0, 1]"));
        }
        let mut points: Vec<f64> = doses.to_vec();
        if refinement >= 2 {
            let step = 1.0 / (refinement - 1) as f64;
            points.extend((0..refinement).map(|i| i as f64 * step));
        } else if refinement == 1 {
            return Err(invalid("refinement must be 0 or at least 2 points"));
        }
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup_by(|a, b| (*a - *b).abs() < DEDUP_TOL);
        let candidate_index = doses
            .iter()
            .map(|d| points.iter().position(|p| (p - d).abs() < DEDUP_TOL).unwrap())
            .collect();
        Ok(Self { points, candidate_index })
    }

    pub fn candidates_only(doses: &[f64]) -> Result<Self> {
        Self::new(doses, 0)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_candidates(&self) -> usize {
        self.candidate_index.len()
    }

    /// Grid positions of the candidate doses, in level order.
    pub fn candidate_positions(&self) -> &[usize] {
        &self.candidate_index
    }

    /// Grid position of 1-based dose `level`.
    pub fn position_of_level(&self, level: usize) -> Option<usize> {
        level.checked_sub(1).and_then(|i| self.candidate_index.get(i).copied())
    }

    pub fn candidate_doses(&self) -> Vec<f64> {
        self.candidate_index.iter().map(|&i| self.points[i]).collect()
    }

    /// Restrict a grid-aligned vector to the candidate doses.
    pub fn at_candidates(&self, values: &[f64]) -> Vec<f64> {
        self.candidate_index.iter().map(|&i| values[i]).collect()
    }
}

/// `J` doses scaled equally on `[0, 1]`.
pub fn equally_spaced_doses(levels: usize) -> Vec<f64> {
    match levels {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..levels).map(|j| j as f64 / (levels - 1) as f64).collect(),
    }
}
