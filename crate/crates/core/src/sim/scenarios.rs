use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// True toxicity probabilities for one simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u32,
    pub theta: f64,
    #[serde(rename = "pi")]
    pub true_pi: Vec<f64>,
    /// 1-based index of the true MTD.
    #[serde(rename = "mtd")]
    pub mtd_index: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.true_pi.is_empty() {
            return Err(invalid(format!("scenario {}: empty probability vector", self.id)));
        }
        if self.true_pi.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid(format!("scenario {}: probabilities must lie in [0,1]", self.id)));
        }
        if self.true_pi.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid(format!("scenario {}: probabilities must be nondecreasing", self.id)));
        }
        if self.mtd_index == 0 || self.mtd_index > self.true_pi.len() {
            return Err(invalid(format!("scenario {}: mtd {} outside 1..={}", self.id, self.mtd_index, self.true_pi.len())));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(invalid(format!("scenario {}: theta must lie in (0,1)", self.id)));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.true_pi.len()
    }
}

const TABLE: [(f64, [f64; 5], usize); 20] = [
    (0.2, [0.20, 0.26, 0.40, 0.45, 0.46], 1),
    (0.2, [0.20, 0.29, 0.35, 0.35, 0.58], 1),
    (0.2, [0.10, 0.20, 0.25, 0.35, 0.40], 2),
    (0.2, [0.08, 0.20, 0.30, 0.45, 0.65], 2),
    (0.2, [0.04, 0.06, 0.20, 0.32, 0.50], 3),
    (0.2, [0.01, 0.10, 0.20, 0.26, 0.35], 3),
    (0.2, [0.05, 0.06, 0.07, 0.20, 0.31], 4),
    (0.2, [0.02, 0.04, 0.10, 0.20, 0.25], 4),
    (0.2, [0.01, 0.02, 0.07, 0.08, 0.20], 5),
    (0.2, [0.01, 0.02, 0.03, 0.04, 0.20], 5),
    (0.3, [0.30, 0.36, 0.42, 0.45, 0.46], 1),
    (0.3, [0.30, 0.40, 0.55, 0.60, 0.70], 1),
    (0.3, [0.08, 0.30, 0.38, 0.42, 0.52], 2),
    (0.3, [0.13, 0.30, 0.42, 0.50, 0.80], 2),
    (0.3, [0.04, 0.07, 0.30, 0.35, 0.42], 3),
    (0.3, [0.01, 0.12, 0.30, 0.41, 0.55], 3),
    (0.3, [0.06, 0.07, 0.12, 0.30, 0.40], 4),
    (0.3, [0.02, 0.05, 0.16, 0.30, 0.36], 4),
    (0.3, [0.01, 0.02, 0.04, 0.06, 0.30], 5),
    (0.3, [0.06, 0.07, 0.08, 0.12, 0.30], 5),
];

/// The twenty five-dose benchmark scenarios: 1 to 10 target 0.2, 11 to 20
/// target 0.3.
pub fn builtin_scenarios() -> Vec<Scenario> {
    TABLE
        .iter()
        .enumerate()
        .map(|(i, (theta, pi, mtd))| Scenario { id: i as u32 + 1, theta: *theta, true_pi: pi.to_vec(), mtd_index: *mtd })
        .collect()
}

pub fn builtin_scenario(id: u32) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.id == id)
}

/// Parse a JSON array of `{id, theta, pi, mtd}` objects.
pub fn parse_scenarios(json: &str) -> Result<Vec<Scenario>> {
    let list: Vec<Scenario> = serde_json::from_str(json).map_err(|e| Error::Parse(format!("scenario file: {e}")))?;
    if list.is_empty() {
        return Err(invalid("scenario file lists no scenarios"));
    }
    for s in &list {
        s.validate()?;
    }
    let mut ids: Vec<u32> = list.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("scenario ids must be unique"));
    }
    Ok(list)
}

pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    parse_scenarios(&std::fs::read_to_string(path)?)
}
