//! Bayesian optimal interval (BOIN) design: boundaries, escalation,
//! elimination and the isotonic final selection.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{invalid, Result};

/// Posterior cut for eliminating a dose and everything above it.
pub const ELIMINATION_CUTOFF: f64 = 0.95;
/// Minimum patients at a dose before elimination is considered.
pub const ELIMINATION_MIN_N: u32 = 3;
/// Additional stop when `Pr(pi(d_1) >= theta)` reaches this value.
pub const SAFETY_CUTOFF: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoinBoundaries {
    pub lambda_e: f64,
    pub lambda_d: f64,
    pub theta1: f64,
    pub theta2: f64,
}

/// Escalation and de-escalation boundaries with `theta1 = 0.6 theta` and
/// `theta2 = 1.4 theta`.
pub fn boin_boundaries(theta: f64) -> Result<BoinBoundaries> {
    if !(theta > 0.0 && theta < 1.0 / 1.4) {
        return Err(invalid(format!("BOIN needs theta in (0, 1/1.4), got {theta}")));
    }
    let (t1, t2) = (0.6 * theta, 1.4 * theta);
    let lambda_e = ((1.0 - t1) / (1.0 - theta)).ln() / (theta * (1.0 - t1) / (t1 * (1.0 - theta))).ln();
    let lambda_d = ((1.0 - theta) / (1.0 - t2)).ln() / (t2 * (1.0 - theta) / (theta * (1.0 - t2))).ln();
    Ok(BoinBoundaries { lambda_e, lambda_d, theta1: t1, theta2: t2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoinMove {
    Escalate,
    Stay,
    DeEscalate,
}

/// Interval decision from the observed rate at the current dose.
pub fn boin_decision(y: u32, n: u32, bounds: &BoinBoundaries) -> BoinMove {
    let rate = y as f64 / n as f64;
    if rate <= bounds.lambda_e {
        BoinMove::Escalate
    } else if rate >= bounds.lambda_d {
        BoinMove::DeEscalate
    } else {
        BoinMove::Stay
    }
}

/// Next level after observing `y` DLTs among `n` patients at `current`.
/// `admissible_top` is the highest non-eliminated level.
pub fn boin_next_dose(current: usize, y: u32, n: u32, bounds: &BoinBoundaries, admissible_top: usize) -> usize {
    debug_assert!(n >= 1 && current >= 1);
    let next = match boin_decision(y, n, bounds) {
        BoinMove::Escalate => current + 1,
        BoinMove::Stay => current,
        BoinMove::DeEscalate => current.saturating_sub(1).max(1),
    };
    next.min(admissible_top).max(1)
}

/// `Pr(pi > theta)` under the Beta(1 + y, 1 + n - y) posterior.
pub fn beta_tail(y: u32, n: u32, theta: f64) -> f64 {
    let b = Beta::new(1.0 + y as f64, 1.0 + (n - y) as f64).expect("positive shape parameters");
    1.0 - b.cdf(theta)
}

pub fn should_eliminate(y: u32, n: u32, theta: f64) -> bool {
    n >= ELIMINATION_MIN_N && beta_tail(y, n, theta) > ELIMINATION_CUTOFF
}

/// Cumulative per-dose counts with the elimination state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoinTracker {
    pub n: Vec<u32>,
    pub y: Vec<u32>,
    /// Lowest eliminated level (1-based); levels at or above are closed.
    pub eliminated_from: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoinStep {
    Next(usize),
    /// The lowest dose is too toxic.
    Stop,
}

impl BoinTracker {
    pub fn new(levels: usize) -> Self {
        Self { n: vec![0; levels], y: vec![0; levels], eliminated_from: None }
    }

    pub fn levels(&self) -> usize {
        self.n.len()
    }

    pub fn record(&mut self, level: usize, dlts: u32, patients: u32) {
        self.n[level - 1] += patients;
        self.y[level - 1] += dlts;
    }

    pub fn admissible_top(&self) -> usize {
        self.eliminated_from.map_or(self.levels(), |e| e - 1)
    }

    /// Apply elimination at `level` and choose the next dose.
    pub fn step(&mut self, level: usize, theta: f64, bounds: &BoinBoundaries, safety_rule: bool) -> BoinStep {
        let (y, n) = (self.y[level - 1], self.n[level - 1]);
        if should_eliminate(y, n, theta) {
            self.eliminated_from = Some(self.eliminated_from.map_or(level, |e| e.min(level)));
        }
        if self.eliminated_from == Some(1) {
            return BoinStep::Stop;
        }
        if safety_rule && self.n[0] > 0 && beta_tail(self.y[0], self.n[0], theta) >= SAFETY_CUTOFF {
            return BoinStep::Stop;
        }
        BoinStep::Next(boin_next_dose(level, y, n, bounds, self.admissible_top()))
    }

    /// Isotonic selection: weighted PAVA on `(y + 0.05) / (n + 0.1)` over
    /// tried, non-eliminated doses; closest to `theta`, ties to the lower
    /// dose above the target and the higher dose below it.
    pub fn select_mtd(&self, theta: f64) -> Option<usize> {
        let mut top = self.admissible_top();
        for j in 1..=top {
            if should_eliminate(self.y[j - 1], self.n[j - 1], theta) {
                top = j - 1;
                break;
            }
        }
        let tried: Vec<usize> = (1..=top).filter(|&j| self.n[j - 1] > 0).collect();
        if tried.is_empty() {
            return None;
        }
        let (rates, weights): (Vec<f64>, Vec<f64>) = tried
            .iter()
            .map(|&j| {
                let (y, n) = (self.y[j - 1] as f64, self.n[j - 1] as f64);
                let p = (y + 0.05) / (n + 0.1);
                let var = (y + 0.05) * (n - y + 0.05) / ((n + 0.1).powi(2) * (n + 0.1 + 1.0));
                (p, 1.0 / var)
            })
            .unzip();
        let fitted = pava(&rates, &weights);
        let best = fitted
            .iter()
            .enumerate()
            .map(|(i, &p)| (i, (p + (i + 1) as f64 * 1e-10 - theta).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)?;
        Some(tried[best])
    }
}

/// Weighted pool-adjacent-violators fit of a nondecreasing sequence.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (v2, w2, c2) = blocks[blocks.len() - 1];
            let (v1, w1, c1) = blocks[blocks.len() - 2];
            if v1 <= v2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, c1 + c2));
        }
    }
    blocks.iter().flat_map(|&(v, _, c)| std::iter::repeat_n(v, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Root of the Bernoulli log-likelihood ratio between `a` and `b` at a
    /// fractional outcome, located by bracketing search.
    fn equal_likelihood_rate(a: f64, b: f64) -> f64 {
        let llr = |x: f64| x * (a / b).ln() + (1.0 - x) * ((1.0 - a) / (1.0 - b)).ln();
        let (mut lo, mut hi) = (a.min(b), a.max(b));
        let mut best = (f64::INFINITY, lo);
        let steps = 10_000;
        for i in 0..=steps {
            let x = lo + (hi - lo) * i as f64 / steps as f64;
            let v = llr(x).abs();
            if v < best.0 {
                best = (v, x);
            }
        }
        let w = (hi - lo) / steps as f64;
        lo = best.1 - w;
        hi = best.1 + w;
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if llr(m1).abs() < llr(m2).abs() {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn boundaries_match_search() {
        for theta in [0.1, 0.2, 0.25, 0.3] {
            let b = boin_boundaries(theta).unwrap();
            assert!((b.lambda_e - equal_likelihood_rate(theta, 0.6 * theta)).abs() < 1e-6);
            assert!((b.lambda_d - equal_likelihood_rate(theta, 1.4 * theta)).abs() < 1e-6);
        }
        let b = boin_boundaries(0.3).unwrap();
        assert!((b.lambda_e - 0.23650).abs() < 5e-5 && (b.lambda_d - 0.35851).abs() < 5e-5);
        let b = boin_boundaries(0.2).unwrap();
        assert!((b.lambda_e - 0.15725).abs() < 5e-5 && (b.lambda_d - 0.23846).abs() < 5e-5);
    }

    #[test]
    fn decisions_at_three_patients() {
        let b = boin_boundaries(0.3).unwrap();
        assert_eq!(boin_next_dose(2, 0, 3, &b, 5), 3);
        assert_eq!(boin_next_dose(2, 2, 3, &b, 5), 1);
        assert_eq!(boin_next_dose(2, 1, 3, &b, 5), 2);
        assert_eq!(boin_next_dose(1, 3, 3, &b, 5), 1);
        assert_eq!(boin_next_dose(5, 0, 3, &b, 5), 5);
        assert_eq!(boin_next_dose(3, 0, 3, &b, 3), 3);
    }

    #[test]
    fn decision_table_matches_closed_form() {
        let b = boin_boundaries(0.3).unwrap();
        for n in [3u32, 6, 9] {
            let esc = (n as f64 * b.lambda_e).floor() as u32;
            let de = (n as f64 * b.lambda_d).ceil() as u32;
            for y in 0..=n {
                let expected = if y <= esc {
                    BoinMove::Escalate
                } else if y >= de {
                    BoinMove::DeEscalate
                } else {
                    BoinMove::Stay
                };
                assert_eq!(boin_decision(y, n, &b), expected, "n={n} y={y}");
            }
        }
    }

    #[test]
    fn elimination_and_stop() {
        let b = boin_boundaries(0.3).unwrap();
        let mut t = BoinTracker::new(5);
        t.record(1, 0, 3);
        assert_eq!(t.step(1, 0.3, &b, true), BoinStep::Next(2));
        t.record(2, 3, 3);
        assert_eq!(t.step(2, 0.3, &b, true), BoinStep::Next(1));
        assert_eq!(t.eliminated_from, Some(2));
        t.record(1, 0, 3);
        assert_eq!(t.step(1, 0.3, &b, true), BoinStep::Next(1));
        let mut t = BoinTracker::new(5);
        t.record(1, 3, 3);
        assert_eq!(t.step(1, 0.3, &b, false), BoinStep::Stop);
    }

    #[test]
    fn additional_safety_rule() {
        // 2/3 at d1 with theta = 0.3: Pr(pi >= 0.3) = 0.9163.
        assert!((beta_tail(2, 3, 0.3) - 0.9163).abs() < 1e-4);
        let b = boin_boundaries(0.3).unwrap();
        let mut t = BoinTracker::new(5);
        t.record(1, 2, 3);
        assert!(!should_eliminate(2, 3, 0.3));
        assert_eq!(t.step(1, 0.3, &b, true), BoinStep::Stop);
        let mut t = BoinTracker::new(5);
        t.record(1, 2, 3);
        assert_eq!(t.step(1, 0.3, &b, false), BoinStep::Next(1));
    }

    #[test]
    fn isotonic_selection() {
        let mut t = BoinTracker::new(5);
        t.record(1, 0, 3);
        t.record(2, 1, 6);
        t.record(3, 1, 9);
        t.record(4, 2, 3);
        // rates (0.016, 0.17, 0.12, 0.66) -> pooled levels 2,3 = 0.135
        assert_eq!(t.select_mtd(0.2), Some(3));
        let fresh = BoinTracker::new(5);
        assert_eq!(fresh.select_mtd(0.3), None);
    }

    #[test]
    fn pava_pools_violators() {
        let f = pava(&[0.1, 0.3, 0.2, 0.4], &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(f, vec![0.1, 0.25, 0.25, 0.4]);
        let f = pava(&[0.5, 0.1], &[3.0, 1.0]);
        assert!((f[0] - 0.4).abs() < 1e-12 && f[0] == f[1]);
    }

    proptest! {
        #[test]
        fn boundaries_bracket_target(theta in 0.01..0.7f64) {
            let b = boin_boundaries(theta).unwrap();
            prop_assert!(0.0 < b.lambda_e && b.lambda_e < theta && theta < b.lambda_d && b.lambda_d < 1.0);
        }

        #[test]
        fn never_escalates_into_eliminated(current in 1usize..6, y in 0u32..4, top in 1usize..6) {
            let b = boin_boundaries(0.3).unwrap();
            let cur = current.min(top);
            prop_assert!(boin_next_dose(cur, y.min(3), 3, &b, top) <= top);
        }

        #[test]
        fn pava_is_monotone(v in proptest::collection::vec(0.0..1.0f64, 1..8)) {
            let w = vec![1.0; v.len()];
            let f = pava(&v, &w);
            prop_assert!(f.windows(2).all(|p| p[0] <= p[1] + 1e-15));
            let s: f64 = v.iter().sum();
            let t: f64 = f.iter().sum();
            prop_assert!((s - t).abs() < 1e-9);
        }
    }
}
