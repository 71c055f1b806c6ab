//! Problem data of the quadratic benchmark game.
//!
//! Players on the finite state space `{0, .., d-1}` pick transition rates
//! from a compact interval `[a_lo, a_hi]`. The running cost is
//!
//! ```text
//! f(x, a) = delta * 1{x = 0} + b * sum_{y != x} (a_y - 2)^2,
//! ```
//!
//! the mean-field cost is the coordinate read `F(x, eta) = eta_x`, and the
//! Hamiltonian is the minimum of `f(x, a) + a . p` over admissible rate
//! vectors. Because the cost is separable across coordinates, the minimizer
//! is the clamped linear map `gamma*_y(x, p) = clamp(2 - p_y / (2b))` and the
//! Hamiltonian has a closed form on the interior region `|p_y| <= 2b`.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};

/// Parameters of the benchmark game. Single source of problem data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Number of states, at least 2.
    pub d: usize,
    /// Lower rate bound, strictly positive.
    pub a_lo: f64,
    /// Upper rate bound, strictly greater than `a_lo`.
    pub a_hi: f64,
    /// Rate-cost scale, strictly positive.
    pub b: f64,
    /// Bias against occupying state 0, nonnegative.
    pub delta: f64,
}

impl ModelParams {
    /// Benchmark parameters: `A = [1, 3]`, quadratic rate cost around the free rate 2.
    pub fn benchmark(d: usize, b: f64, delta: f64) -> Self {
        ModelParams { d, a_lo: 1.0, a_hi: 3.0, b, delta }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(MfgError::InvalidInput(format!("d = {} must be >= 2", self.d)));
        }
        if !(self.a_lo > 0.0 && self.a_lo < self.a_hi) {
            return Err(MfgError::InvalidInput(format!(
                "rate bounds must satisfy 0 < a_lo < a_hi, got [{}, {}]",
                self.a_lo, self.a_hi
            )));
        }
        if !(self.b > 0.0) {
            return Err(MfgError::InvalidInput(format!("b = {} must be > 0", self.b)));
        }
        if self.delta < 0.0 {
            return Err(MfgError::InvalidInput(format!("delta = {} must be >= 0", self.delta)));
        }
        Ok(())
    }
}

/// A probability vector over the `d` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexPoint {
    weights: Vec<f64>,
}

impl SimplexPoint {
    const SUM_TOL: f64 = 1e-12;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MfgError::InvalidInput(format!(
                "simplex entries must be finite and nonnegative: {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(MfgError::InvalidInput(format!(
                "simplex entries must sum to 1, got {sum}"
            )));
        }
        Ok(SimplexPoint { weights })
    }

    /// Uniform distribution on `d` states.
    pub fn uniform(d: usize) -> Self {
        SimplexPoint { weights: vec![1.0 / d as f64; d] }
    }

    /// Point mass at `x`.
    pub fn delta(d: usize, x: usize) -> Self {
        let mut w = vec![0.0; d];
        w[x] = 1.0;
        SimplexPoint { weights: w }
    }

    /// Builds from nonnegative weights, rescaling to unit mass.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(MfgError::Numeric(format!("cannot normalize weights {weights:?}")));
        }
        for w in &mut weights {
            *w /= sum;
        }
        SimplexPoint::new(weights)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, x: usize) -> f64 {
        self.weights[x]
    }

    /// Euclidean distance to another simplex point.
    pub fn distance(&self, other: &SimplexPoint) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Rate vector leaving state `origin`: off-diagonal entries are transition
/// rates in `[a_lo, a_hi]`, the `origin` entry is minus their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector {
    rates: Vec<f64>,
    origin: usize,
}

impl RateVector {
    /// Builds from off-diagonal rates, filling in the negative-sum diagonal.
    /// `rates[origin]` is ignored.
    pub fn from_off_diagonal(mut rates: Vec<f64>, origin: usize, params: &ModelParams) -> Result<Self> {
        if origin >= rates.len() {
            return Err(MfgError::InvalidInput(format!(
                "origin {} out of range for d = {}",
                origin,
                rates.len()
            )));
        }
        for (y, r) in rates.iter().enumerate() {
            if y != origin && (*r < params.a_lo - 1e-12 || *r > params.a_hi + 1e-12) {
                return Err(MfgError::InvalidInput(format!(
                    "rate {r} at coordinate {y} outside [{}, {}]",
                    params.a_lo, params.a_hi
                )));
            }
        }
        let off_sum: f64 = rates
            .iter()
            .enumerate()
            .filter(|(y, _)| *y != origin)
            .map(|(_, r)| r)
            .sum();
        rates[origin] = -off_sum;
        Ok(RateVector { rates, origin })
    }

    /// Constant off-diagonal rate.
    pub fn constant(rate: f64, origin: usize, d: usize) -> Self {
        let mut rates = vec![rate; d];
        rates[origin] = -(rate * (d - 1) as f64);
        RateVector { rates, origin }
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate_to(&self, y: usize) -> f64 {
        self.rates[y]
    }

    /// Total rate of leaving the origin state.
    pub fn total_rate(&self) -> f64 {
        -self.rates[self.origin]
    }

    pub fn dot(&self, p: &[f64]) -> f64 {
        self.rates.iter().zip(p).map(|(a, b)| a * b).sum()
    }
}

/// Potential vector over states. Only differences are meaningful: adding a
/// constant to every entry leaves all downstream quantities unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PotentialVector {
    values: Vec<f64>,
}

impl PotentialVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MfgError::InvalidInput(format!("non-finite potential {values:?}")));
        }
        Ok(PotentialVector { values })
    }

    pub fn zeros(d: usize) -> Self {
        PotentialVector { values: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Recenter so the entries sum to zero.
    pub fn centered(&self) -> PotentialVector {
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        PotentialVector { values: self.values.iter().map(|v| v - mean).collect() }
    }
}

/// Finite difference `(u_y - u_x)_y` of a potential at state `x`. Entry `x` is 0.
pub fn finite_difference(u: &PotentialVector, x: usize) -> Vec<f64> {
    let ux = u.values[x];
    u.values.iter().map(|uy| uy - ux).collect()
}

/// Running cost `delta * 1{x=0} + b * sum_{y != x} (a_y - 2)^2`.
///
/// Independent of the diagonal entry of `a` by construction.
pub fn running_cost(x: usize, a: &RateVector, params: &ModelParams) -> f64 {
    let bias = if x == 0 { params.delta } else { 0.0 };
    let quad: f64 = a
        .rates()
        .iter()
        .enumerate()
        .filter(|(y, _)| *y != x)
        .map(|(_, r)| (r - 2.0) * (r - 2.0))
        .sum();
    bias + params.b * quad
}

/// Mean-field cost `F(x, eta) = eta_x`.
pub fn mean_field_cost(x: usize, eta: &SimplexPoint) -> f64 {
    eta.get(x)
}

fn clamp_rate(a: f64, params: &ModelParams) -> f64 {
    a.clamp(params.a_lo, params.a_hi)
}

/// Optimal rate selector: off-diagonal entries `clamp(2 - p_y / (2b))`,
/// diagonal the negative sum. Realizes the minimum defining the Hamiltonian.
pub fn optimal_selector(x: usize, p: &[f64], params: &ModelParams) -> RateVector {
    let mut rates: Vec<f64> = p
        .iter()
        .map(|py| clamp_rate(2.0 - py / (2.0 * params.b), params))
        .collect();
    let off_sum: f64 = rates
        .iter()
        .enumerate()
        .filter(|(y, _)| *y != x)
        .map(|(_, r)| r)
        .sum();
    rates[x] = -off_sum;
    RateVector { rates, origin: x }
}

/// Hamiltonian `H(x, p) = min_a { f(x, a) + a . p }`.
///
/// The cost separates across coordinates, so each one-dimensional quadratic
/// `b (a - 2)^2 + a p_y` is minimized at the clamped point `2 - p_y / (2b)`
/// and evaluated there exactly. `p[x]` is ignored; the diagonal contribution
/// is `-(sum of off-diagonal rates) * p_x` with `p_x = 0` in the finite
/// difference convention.
pub fn hamiltonian(x: usize, p: &[f64], params: &ModelParams) -> Result<f64> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(MfgError::InvalidInput(format!("non-finite gradient {p:?}")));
    }
    let bias = if x == 0 { params.delta } else { 0.0 };
    let mut total = bias;
    for (y, &py) in p.iter().enumerate() {
        if y == x {
            continue;
        }
        let a = clamp_rate(2.0 - py / (2.0 * params.b), params);
        total += params.b * (a - 2.0) * (a - 2.0) + a * py;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p4(delta: f64) -> ModelParams {
        ModelParams::benchmark(2, 4.0, delta)
    }

    #[test]
    fn finite_difference_basics() {
        let u = PotentialVector::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(finite_difference(&u, 0), vec![0.0, 0.0]);

        // The delta = 1, b = 4 benchmark has u_2 - u_1 = 16/65.
        let u = PotentialVector::new(vec![0.0, 16.0 / 65.0]).unwrap();
        assert_eq!(finite_difference(&u, 0), vec![0.0, 16.0 / 65.0]);

        let u = PotentialVector::new(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(finite_difference(&u, 1), vec![2.0, 0.0, 1.0]);
    }

    #[test]
    fn running_cost_examples() {
        let params = ModelParams::benchmark(3, 4.0, 0.0);
        let a = RateVector::constant(2.0, 1, 3);
        assert_eq!(running_cost(1, &a, &params), 0.0);

        let params = ModelParams::benchmark(3, 4.0, 1.0);
        let a = RateVector::constant(2.0, 0, 3);
        assert_eq!(running_cost(0, &a, &params), 1.0);

        let params = p4(0.0);
        let a = RateVector::from_off_diagonal(vec![1.0, 0.0], 1, &params).unwrap();
        assert_eq!(running_cost(1, &a, &params), 4.0);
    }

    #[test]
    fn mean_field_cost_is_coordinate_read() {
        let eta = SimplexPoint::uniform(2);
        assert_eq!(mean_field_cost(0, &eta), 0.5);
        let eta = SimplexPoint::delta(2, 0);
        assert_eq!(mean_field_cost(1, &eta), 0.0);
        let eta = SimplexPoint::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(mean_field_cost(2, &eta), 0.5);
    }

    #[test]
    fn hamiltonian_examples() {
        let params = p4(0.0);
        assert_eq!(hamiltonian(1, &[0.0, 0.0], &params).unwrap(), 0.0);

        let params = p4(1.0);
        assert_eq!(hamiltonian(0, &[0.0, 0.0], &params).unwrap(), 1.0);

        // Clamped regime: min over a in [1,3] of 4(a-2)^2 + 8a is at a = 1.
        let params = p4(0.0);
        let h = hamiltonian(1, &[8.0, 0.0], &params).unwrap();
        assert!((h - 12.0).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_rejects_non_finite() {
        let params = p4(0.0);
        assert!(hamiltonian(0, &[f64::NAN, 0.0], &params).is_err());
    }

    #[test]
    fn selector_examples() {
        let params = p4(0.0);
        let g = optimal_selector(0, &[0.0, 0.0], &params);
        assert_eq!(g.rate_to(1), 2.0);

        let g = optimal_selector(1, &[8.0, 0.0], &params);
        assert_eq!(g.rate_to(0), 1.0);

        let g = optimal_selector(1, &[-20.0, 0.0], &params);
        assert_eq!(g.rate_to(0), 3.0);
    }

    /// Brute-force grid search over the rate box must agree with the closed form.
    #[test]
    fn hamiltonian_matches_grid_search() {
        let params = ModelParams::benchmark(3, 4.0, 1.0);
        let mut state: u64 = 0x9e3779b97f4a7c15;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 40.0 - 20.0
        };
        for _ in 0..100 {
            let p: Vec<f64> = (0..3).map(|_| next()).collect();
            for x in 0..3 {
                let h = hamiltonian(x, &p, &params).unwrap();
                // Coordinates separate, so a per-coordinate scan is the full grid search.
                let mut brute = if x == 0 { params.delta } else { 0.0 };
                for (y, &py) in p.iter().enumerate() {
                    if y == x {
                        continue;
                    }
                    let mut best = f64::INFINITY;
                    let mut a = 1.0;
                    while a <= 3.0 + 1e-9 {
                        let v = params.b * (a - 2.0) * (a - 2.0) + a * py;
                        best = best.min(v);
                        a += 0.01;
                    }
                    brute += best;
                }
                assert!((h - brute).abs() < 1e-3, "H = {h}, brute = {brute}");
            }
        }
    }

    proptest! {
        /// The selector realizes the Hamiltonian minimum:
        /// H(x, p) = f(x, gamma*) + gamma* . p.
        #[test]
        fn selector_realizes_minimum(
            p in proptest::collection::vec(-20.0f64..20.0, 3),
            delta in 0.0f64..2.0,
        ) {
            let params = ModelParams::benchmark(3, 4.0, delta);
            for x in 0..3 {
                let mut q = p.clone();
                q[x] = 0.0;
                let g = optimal_selector(x, &q, &params);
                let h = hamiltonian(x, &q, &params).unwrap();
                let direct = running_cost(x, &g, &params) + g.dot(&q);
                prop_assert!((h - direct).abs() < 1e-12);
            }
        }

        /// Additive-constant invariance of the finite difference operator.
        #[test]
        fn finite_difference_constant_invariance(
            u in proptest::collection::vec(-10.0f64..10.0, 4),
            k in -100.0f64..100.0,
        ) {
            let base = PotentialVector::new(u.clone()).unwrap();
            let shifted = PotentialVector::new(u.iter().map(|v| v + k).collect()).unwrap();
            for x in 0..4 {
                let a = finite_difference(&base, x);
                let b = finite_difference(&shifted, x);
                for (ai, bi) in a.iter().zip(&b) {
                    prop_assert!((ai - bi).abs() < 1e-9);
                }
            }
        }

        /// gamma* is 1/(2b)-Lipschitz in p, coordinate-wise.
        #[test]
        fn selector_is_lipschitz(
            p in proptest::collection::vec(-30.0f64..30.0, 3),
            q in proptest::collection::vec(-30.0f64..30.0, 3),
        ) {
            let params = ModelParams::benchmark(3, 4.0, 0.0);
            for x in 0..3 {
                let gp = optimal_selector(x, &p, &params);
                let gq = optimal_selector(x, &q, &params);
                for y in 0..3 {
                    if y == x { continue; }
                    let lhs = (gp.rate_to(y) - gq.rate_to(y)).abs();
                    let rhs = (p[y] - q[y]).abs() / (2.0 * params.b);
                    prop_assert!(lhs <= rhs + 1e-12);
                }
            }
        }
    }

    /// In the interior region the selector is the p-gradient of H
    /// (central finite differences, step 1e-5).
    #[test]
    fn selector_is_hamiltonian_gradient() {
        let params = p4(0.5);
        let h_step = 1e-5;
        let mut state: u64 = 42;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 12.0 - 6.0 // |p| < 2b = 8
        };
        for _ in 0..50 {
            let p: Vec<f64> = (0..2).map(|_| next()).collect();
            for x in 0..2 {
                let mut q = p.clone();
                q[x] = 0.0;
                let g = optimal_selector(x, &q, &params);
                for y in 0..2 {
                    if y == x {
                        continue;
                    }
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[y] += h_step;
                    qm[y] -= h_step;
                    let fd = (hamiltonian(x, &qp, &params).unwrap()
                        - hamiltonian(x, &qm, &params).unwrap())
                        / (2.0 * h_step);
                    assert!((fd - g.rate_to(y)).abs() < 1e-6);
                }
            }
        }
    }
}
