//! Numerical companions to the LSE convergence analysis: the surrogate
//! Gaussian-process confidence bands on `pi - 1/2`, maximum information
//! gain, the ambiguity acquisition, margin classification, the
//! misclassification loss, and a harness running the LSE algorithm against
//! a known toxicity curve.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gp::{cholesky_with_jitter, kernel_matrix, KernelHyper};
use crate::rng::derived_stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    /// Bound on the RKHS norm of the centred toxicity curve.
    pub b: f64,
    pub lambda: f64,
    pub delta: f64,
    pub xi: f64,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.lambda > 0.0 && self.delta > 0.0 && self.delta < 1.0 && self.xi > 0.0) {
            return Err(invalid(format!("theory parameters out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Default RKHS bound when none is known: twice the largest absolute prior
/// mean on the logit scale.
pub fn default_rkhs_bound(logit_prior_mean: &[f64]) -> f64 {
    2.0 * logit_prior_mean.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    /// Surrogate posterior mean on the probability scale.
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub beta_sqrt: f64,
}

impl ConfidenceBand {
    pub fn ucb(&self) -> Vec<f64> {
        self.mu.iter().zip(&self.sigma).map(|(m, s)| m + self.beta_sqrt * s).collect()
    }

    pub fn lcb(&self) -> Vec<f64> {
        self.mu.iter().zip(&self.sigma).map(|(m, s)| m - self.beta_sqrt * s).collect()
    }
}

/// Observation counts and sums of `y - 1/2` per grid position. Repeated
/// observations at a point enter as one observation of their mean with
/// noise `lambda / m`, which gives the same posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateData {
    pub count: Vec<f64>,
    pub sum: Vec<f64>,
}

impl SurrogateData {
    pub fn new(grid_len: usize) -> Self {
        Self { count: vec![0.0; grid_len], sum: vec![0.0; grid_len] }
    }

    pub fn from_pairs(grid_len: usize, data: &[(usize, f64)]) -> Result<Self> {
        let mut d = Self::new(grid_len);
        for &(pos, y) in data {
            if pos >= grid_len {
                return Err(Error::Misaligned(format!("position {pos} outside a grid of {grid_len} points")));
            }
            d.push(pos, y);
        }
        Ok(d)
    }

    pub fn push(&mut self, pos: usize, y_tilde: f64) {
        self.count[pos] += 1.0;
        self.sum[pos] += y_tilde;
    }

    pub fn total(&self) -> usize {
        self.count.iter().sum::<f64>() as usize
    }
}

/// Surrogate posterior mean (reported as `mu + 1/2`) and standard deviation
/// at every grid point.
pub fn surrogate_posterior(k: &DMatrix<f64>, data: &SurrogateData, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(lambda > 0.0) {
        return Err(invalid("lambda must be positive"));
    }
    let g = k.nrows();
    let obs: Vec<usize> = (0..g).filter(|&i| data.count[i] > 0.0).collect();
    if obs.is_empty() {
        return Ok((vec![0.5; g], (0..g).map(|i| k[(i, i)].max(0.0).sqrt()).collect()));
    }
    let p = obs.len();
    let a = DMatrix::from_fn(p, p, |i, j| {
        k[(obs[i], obs[j])] + if i == j { lambda / data.count[obs[i]] } else { 0.0 }
    });
    let (l, _) = cholesky_with_jitter(&a, 0.0)?;
    let ybar = DVector::from_fn(p, |i, _| data.sum[obs[i]] / data.count[obs[i]]);
    let kpx = DMatrix::from_fn(p, g, |i, x| k[(obs[i], x)]);
    let v = l.solve_lower_triangular(&kpx).ok_or(Error::Factorization { jitter: 0.0 })?;
    let w = l.solve_lower_triangular(&ybar).ok_or(Error::Factorization { jitter: 0.0 })?;
    let mu = (0..g).map(|x| 0.5 + v.column(x).dot(&w)).collect();
    let sigma = (0..g).map(|x| (k[(x, x)] - v.column(x).norm_squared()).max(0.0).sqrt()).collect();
    Ok((mu, sigma))
}

/// Greedy approximation of the maximum information gain over subsets of
/// distinct grid points: `1/2 ln det(I + K_S / lambda)` for the greedily
/// chosen `S` of size `min(n, grid size)`.
pub fn max_info_gain(k: &DMatrix<f64>, lambda: f64, n: usize) -> Result<f64> {
    Ok(info_gain_curve(k, lambda, n.min(k.nrows()), false)?.last().copied().unwrap_or(0.0))
}

/// Greedy information gain after each of `n` selections. With `repeats`
/// a point may be chosen again, matching the definition over sequences of
/// observations.
pub fn info_gain_curve(k: &DMatrix<f64>, lambda: f64, n: usize, repeats: bool) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let mut greedy = GreedyGain::new(k, lambda, repeats)?;
    let n = if repeats { n } else { n.min(k.nrows()) };
    Ok((0..n).map(|_| greedy.advance()).collect())
}

/// Incremental greedy information gain: each call to `advance` adds the
/// point of largest posterior variance and returns the running total.
#[derive(Debug, Clone)]
pub struct GreedyGain {
    cov: DMatrix<f64>,
    lambda: f64,
    used: Vec<bool>,
    repeats: bool,
    gain: f64,
}

impl GreedyGain {
    pub fn new(k: &DMatrix<f64>, lambda: f64, repeats: bool) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(invalid("lambda must be positive"));
        }
        if k.nrows() == 0 {
            return Err(invalid("empty grid"));
        }
        Ok(Self { cov: k.clone(), lambda, used: vec![false; k.nrows()], repeats, gain: 0.0 })
    }

    pub fn advance(&mut self) -> f64 {
        let g = self.cov.nrows();
        let mut best: Option<usize> = None;
        for i in 0..g {
            if (!self.repeats && self.used[i]) || best.is_some_and(|b| self.cov[(i, i)] <= self.cov[(b, b)]) {
                continue;
            }
            best = Some(i);
        }
        let Some(x) = best else { return self.gain };
        self.used[x] = true;
        let var = self.cov[(x, x)].max(0.0);
        self.gain += 0.5 * (1.0 + var / self.lambda).ln();
        let col = self.cov.column(x).clone_owned();
        self.cov.ger(-1.0 / (var + self.lambda), &col, &col, 1.0);
        self.gain
    }
}

/// `B + 0.5 lambda^{-1/2} sqrt(2 (gamma + ln(1/delta)))`.
pub fn beta_coefficient(params: &TheoryParams, gamma_prev: f64) -> f64 {
    params.b + 0.5 / params.lambda.sqrt() * (2.0 * (gamma_prev + (1.0 / params.delta).ln())).sqrt()
}

/// Classification ambiguity `min(ucb - theta, theta - lcb)`, evaluated as the
/// algebraically equal `beta sigma - |mu - theta|`.
pub fn ambiguity_acquisition(mu: &[f64], sigma: &[f64], beta_sqrt: f64, theta: f64) -> Vec<f64> {
    mu.iter().zip(sigma).map(|(m, s)| beta_sqrt * s - (m - theta).abs()).collect()
}

pub use crate::design::rules::acquisition_ambiguity as weighted_ambiguity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Class {
    /// Sublevel: toxicity at most the target.
    L,
    /// Superlevel.
    H,
    /// Undetermined.
    U,
}

/// `ucb < theta + xi` gives L, `lcb > theta - xi` gives H (L wins when both
/// hold), otherwise U.
pub fn classify_with_margin(mu: &[f64], sigma: &[f64], beta_sqrt: f64, theta: f64, xi: f64) -> Vec<Class> {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| {
            if m + beta_sqrt * s < theta + xi {
                Class::L
            } else if m - beta_sqrt * s > theta - xi {
                Class::H
            } else {
                Class::U
            }
        })
        .collect()
}

/// Largest per-point loss: `max(0, pi - theta)` on L and `max(0, theta - pi)`
/// on H.
pub fn misclassification_loss(pi_true: &[f64], classes: &[Class], theta: f64) -> Result<f64> {
    if pi_true.len() != classes.len() {
        return Err(Error::Misaligned("classes and curve lengths differ".into()));
    }
    let mut worst = 0.0f64;
    for (i, (&p, &c)) in pi_true.iter().zip(classes).enumerate() {
        let loss = match c {
            Class::L => (p - theta).max(0.0),
            Class::H => (theta - p).max(0.0),
            Class::U => return Err(invalid(format!("grid point {i} is unclassified"))),
        };
        worst = worst.max(loss);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LseRun {
    pub classes: Vec<Class>,
    pub terminated: bool,
    /// Observations taken before every point was classified.
    pub stop_step: usize,
    /// Loss with any still-undetermined point assigned by its posterior mean.
    pub loss: f64,
}

/// Run the LSE algorithm against `pi_true` with binary observations:
/// classify (decisions are kept once made), sample the most ambiguous
/// undetermined point, observe a Bernoulli outcome, update.
pub fn run_lse_algorithm<R: Rng + ?Sized>(
    pi_true: &[f64],
    params: &TheoryParams,
    hyper: &KernelHyper,
    points: &[f64],
    theta: f64,
    max_budget: usize,
    rng: &mut R,
) -> Result<LseRun> {
    params.validate()?;
    if pi_true.len() != points.len() || points.is_empty() {
        return Err(Error::Misaligned("curve and grid lengths differ".into()));
    }
    let k = kernel_matrix(points, hyper);
    let g = points.len();
    let mut greedy = GreedyGain::new(&k, params.lambda, true)?;
    let mut gamma_prev = 0.0;
    let mut data = SurrogateData::new(g);
    let mut classes = vec![Class::U; g];
    let mut step = 0;
    loop {
        let (mu, sigma) = surrogate_posterior(&k, &data, params.lambda)?;
        let beta = beta_coefficient(params, gamma_prev);
        let fresh = classify_with_margin(&mu, &sigma, beta, theta, params.xi);
        for i in 0..g {
            if classes[i] == Class::U {
                classes[i] = fresh[i];
            }
        }
        let open: Vec<usize> = (0..g).filter(|&i| classes[i] == Class::U).collect();
        if open.is_empty() || step >= max_budget {
            let terminated = open.is_empty();
            let final_classes: Vec<Class> = classes
                .iter()
                .zip(&mu)
                .map(|(&c, &m)| match c {
                    Class::U if m <= theta => Class::L,
                    Class::U => Class::H,
                    other => other,
                })
                .collect();
            let loss = misclassification_loss(pi_true, &final_classes, theta)?;
            return Ok(LseRun { classes, terminated, stop_step: step, loss });
        }
        let acq = ambiguity_acquisition(&mu, &sigma, beta, theta);
        let x = open.iter().copied().fold(open[0], |b, i| if acq[i] > acq[b] { i } else { b });
        let y = (rng.random::<f64>() < pi_true[x]) as u8 as f64;
        data.push(x, y - 0.5);
        step += 1;
        gamma_prev = greedy.advance();
    }
}

/// Logistic curve on `[0, 1]` crossing `theta` at `crossing`.
pub fn logistic_curve(points: &[f64], theta: f64, crossing: f64, slope: f64) -> Vec<f64> {
    let base = crate::math::logit(theta);
    points.iter().map(|&x| crate::math::inv_logit(base + slope * (x - crossing))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub repetitions: usize,
    pub terminated_all: bool,
    pub bound_holds_fraction: f64,
    pub termination_steps: Vec<usize>,
    pub losses: Vec<f64>,
    pub gamma_curve: Vec<f64>,
}

/// Repeated runs of [`run_lse_algorithm`] with per-repetition streams derived
/// from `seed`; results do not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn theorem_harness(
    pi_true: &[f64],
    params: &TheoryParams,
    hyper: &KernelHyper,
    points: &[f64],
    theta: f64,
    max_budget: usize,
    repetitions: usize,
    seed: u64,
) -> Result<HarnessReport> {
    let runs: Vec<LseRun> = (0..repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = derived_stream(&[seed, rep as u64]);
            run_lse_algorithm(pi_true, params, hyper, points, theta, max_budget, &mut rng)
        })
        .collect::<Result<_>>()?;
    let k = kernel_matrix(points, hyper);
    let curve_len = runs.iter().map(|r| r.stop_step).max().unwrap_or(1).max(1);
    let full = info_gain_curve(&k, params.lambda, curve_len, true)?;
    let stride = (curve_len / 50).max(1);
    let gamma_curve = full.iter().copied().step_by(stride).collect();
    let holds = runs.iter().filter(|r| r.loss <= params.xi).count();
    Ok(HarnessReport {
        repetitions,
        terminated_all: runs.iter().all(|r| r.terminated),
        bound_holds_fraction: holds as f64 / repetitions.max(1) as f64,
        termination_steps: runs.iter().map(|r| r.stop_step).collect(),
        losses: runs.iter().map(|r| r.loss).collect(),
        gamma_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid21() -> Vec<f64> {
        (0..21).map(|i| i as f64 / 20.0).collect()
    }

    fn se(ell: f64) -> KernelHyper {
        KernelHyper::new(1.0, ell).unwrap()
    }

    #[test]
    fn empty_data_is_prior() {
        let k = kernel_matrix(&grid21(), &se(0.2));
        let (mu, sigma) = surrogate_posterior(&k, &SurrogateData::new(21), 1.0).unwrap();
        assert!(mu.iter().all(|&m| m == 0.5));
        assert!(sigma.iter().all(|&s| (s - 1.0).abs() < 1e-15));
    }

    #[test]
    fn one_point_closed_form() {
        let k = DMatrix::from_element(1, 1, 2.0);
        let d = SurrogateData::from_pairs(1, &[(0, 0.5)]).unwrap();
        let (mu, sigma) = surrogate_posterior(&k, &d, 0.5).unwrap();
        assert!((mu[0] - 0.5 - 2.0 / 2.5 * 0.5).abs() < 1e-15);
        assert!((sigma[0].powi(2) - (2.0 - 4.0 / 2.5)).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_inversion() {
        let pts = grid21();
        let k = kernel_matrix(&pts, &se(0.3));
        let data = [(2usize, 0.5), (7, -0.5), (7, 0.5), (15, -0.5), (20, -0.5)];
        let lambda = 0.7;
        let (mu, sigma) = surrogate_posterior(&k, &SurrogateData::from_pairs(21, &data).unwrap(), lambda).unwrap();
        let n = data.len();
        let kn = DMatrix::from_fn(n, n, |i, j| k[(data[i].0, data[j].0)] + if i == j { lambda } else { 0.0 });
        let inv = kn.try_inverse().unwrap();
        let y = DVector::from_iterator(n, data.iter().map(|d| d.1));
        for x in 0..21 {
            let kx = DVector::from_fn(n, |i, _| k[(data[i].0, x)]);
            let m = 0.5 + (kx.transpose() * &inv * &y)[(0, 0)];
            let v = k[(x, x)] - (kx.transpose() * &inv * &kx)[(0, 0)];
            assert!((mu[x] - m).abs() < 1e-10);
            assert!((sigma[x] - v.max(0.0).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn info_gain_examples() {
        let k = DMatrix::from_element(1, 1, 1.0);
        assert!((max_info_gain(&k, 1.0, 1).unwrap() - 0.5 * 2f64.ln()).abs() < 1e-15);
        let dup = kernel_matrix(&[0.5, 0.5], &se(1.0));
        let g1 = max_info_gain(&dup, 1.0, 1).unwrap();
        let g2 = max_info_gain(&dup, 1.0, 2).unwrap();
        assert!(g2 < 2.0 * g1);
        assert!((g2 - 0.5 * 3f64.ln()).abs() < 1e-9);
        assert!(max_info_gain(&dup, 1.0, 0).is_err());
        assert_eq!(max_info_gain(&dup, 1.0, 10).unwrap(), g2);
    }

    fn log_det_gain(k: &DMatrix<f64>, subset: &[usize], lambda: f64) -> f64 {
        let m = DMatrix::from_fn(subset.len(), subset.len(), |i, j| {
            k[(subset[i], subset[j])] / lambda + if i == j { 1.0 } else { 0.0 }
        });
        0.5 * m.determinant().ln()
    }

    #[test]
    fn greedy_within_submodular_factor_of_exhaustive() {
        let k = kernel_matrix(&grid21(), &se(0.2));
        let greedy = max_info_gain(&k, 1.0, 5).unwrap();
        let mut best = 0.0f64;
        let mut count = 0;
        for a in 0..21 {
            for b in a + 1..21 {
                for c in b + 1..21 {
                    for d in c + 1..21 {
                        for e in d + 1..21 {
                            best = best.max(log_det_gain(&k, &[a, b, c, d, e], 1.0));
                            count += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(count, 20349);
        assert!(greedy >= (1.0 - (-1.0f64).exp()) * best);
        assert!(greedy <= best + 1e-12);
    }

    #[test]
    fn beta_examples() {
        let p = TheoryParams { b: 1.0, lambda: 1.0, delta: (-1.0f64).exp(), xi: 0.1 };
        assert!((beta_coefficient(&p, 0.0) - (1.0 + 0.5 * 2f64.sqrt())).abs() < 1e-12);
        let p = TheoryParams { b: 2.0, lambda: 0.25, delta: 0.05, xi: 0.1 };
        assert!((beta_coefficient(&p, 3.0) - 5.4629).abs() < 1e-4);
        let p = TheoryParams { b: 1.5, lambda: 1.0, delta: 1.0 - 1e-15, xi: 0.1 };
        assert!((beta_coefficient(&p, 0.0) - 1.5).abs() < 1e-6);
    }

    #[test]
    fn ambiguity_examples() {
        assert!((ambiguity_acquisition(&[0.3], &[0.1], 2.0, 0.3)[0] - 0.2).abs() < 1e-15);
        assert!((ambiguity_acquisition(&[0.4], &[0.0], 2.0, 0.3)[0] + 0.1).abs() < 1e-15);
        assert!((ambiguity_acquisition(&[0.35], &[0.05], 1.96, 0.3)[0] - 0.048).abs() < 1e-12);
    }

    #[test]
    fn margin_classification() {
        let c = classify_with_margin(&[0.1, 0.5, 0.3], &[100.0; 3], 2.0, 0.3, 0.05);
        assert!(c.iter().all(|&x| x == Class::U));
        let c = classify_with_margin(&[0.1, 0.5, 0.32], &[0.0; 3], 2.0, 0.3, 0.05);
        assert_eq!(c, vec![Class::L, Class::H, Class::L]);
        let mut rng = stream(4);
        for _ in 0..1000 {
            let mu: f64 = rng.random();
            let xi = 1.0 + rng.random::<f64>();
            let s = rng.random::<f64>() * (xi - 1.0) / 2.0;
            let c = classify_with_margin(&[mu], &[s], 2.0, 0.3, xi);
            assert_ne!(c[0], Class::U);
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(misclassification_loss(&[0.1, 0.5], &[Class::L, Class::H], 0.3).unwrap(), 0.0);
        assert!((misclassification_loss(&[0.4, 0.5], &[Class::L, Class::H], 0.3).unwrap() - 0.1).abs() < 1e-15);
        assert!(misclassification_loss(&[0.4], &[Class::U], 0.3).is_err());
        let mut rng = stream(8);
        for _ in 0..100 {
            let pi: Vec<f64> = (0..21).map(|_| rng.random()).collect();
            let cls: Vec<Class> = (0..21).map(|_| if rng.random::<bool>() { Class::L } else { Class::H }).collect();
            let mut brute = 0.0f64;
            for i in 0..21 {
                let l = if cls[i] == Class::L { pi[i] - 0.3 } else { 0.3 - pi[i] };
                if l > brute {
                    brute = l;
                }
            }
            assert_eq!(misclassification_loss(&pi, &cls, 0.3).unwrap(), brute);
        }
    }

    #[test]
    fn constant_low_curve_is_all_sublevel() {
        let pts = grid21();
        let params = TheoryParams { b: 1.0, lambda: 1.0, delta: 0.1, xi: 0.1 };
        let run = run_lse_algorithm(&[0.0; 21], &params, &se(0.2), &pts, 0.3, 100_000, &mut stream(1)).unwrap();
        assert!(run.terminated);
        assert!(run.classes.iter().all(|&c| c == Class::L));
        assert_eq!(run.loss, 0.0);
    }

    proptest! {
        #[test]
        fn sampled_ambiguity_bounded_by_band(mu in -1.0..2.0f64, s in 0.0..3.0f64, beta in 0.0..10.0f64, theta in 0.01..0.99f64) {
            let a = ambiguity_acquisition(&[mu], &[s], beta, theta)[0];
            prop_assert!(a <= beta * s);
        }

        #[test]
        fn sigma_shrinks_with_data(obs in proptest::collection::vec((0usize..21, prop::bool::ANY), 1..15)) {
            let k = kernel_matrix(&grid21(), &se(0.2));
            let mut d = SurrogateData::new(21);
            let (_, mut prev) = surrogate_posterior(&k, &d, 1.0).unwrap();
            for (pos, y) in obs {
                d.push(pos, if y { 0.5 } else { -0.5 });
                let (_, s) = surrogate_posterior(&k, &d, 1.0).unwrap();
                for x in 0..21 {
                    prop_assert!(s[x] <= prev[x] + 1e-9);
                    prop_assert!(s[x] >= 0.0 && s[x] <= 1.0 + 1e-12);
                }
                prev = s;
            }
        }

        #[test]
        fn gain_monotone(n in 1usize..21, lambda in 0.1..5.0f64) {
            let k = kernel_matrix(&grid21(), &se(0.2));
            prop_assert!(max_info_gain(&k, lambda, n + 1).unwrap() >= max_info_gain(&k, lambda, n).unwrap());
            prop_assert!(max_info_gain(&k, lambda * 0.5, n).unwrap() >= max_info_gain(&k, lambda, n).unwrap());
        }

        #[test]
        fn beta_monotone(g in 0.0..50.0f64, dg in 0.0..5.0f64, delta in 0.01..0.99f64) {
            let p = TheoryParams { b: 1.0, lambda: 1.0, delta, xi: 0.1 };
            let q = TheoryParams { delta: delta * 0.5, ..p };
            prop_assert!(beta_coefficient(&p, g + dg) >= beta_coefficient(&p, g));
            prop_assert!(beta_coefficient(&q, g) >= beta_coefficient(&p, g));
        }

        #[test]
        fn margin_partition_total(mu in proptest::collection::vec(0.0..1.0f64, 21), s in 0.0..0.5f64) {
            let c = classify_with_margin(&mu, &[s; 21], 2.0, 0.3, 0.05);
            prop_assert_eq!(c.len(), 21);
        }
    }
}
