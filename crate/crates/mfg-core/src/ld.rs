//! Large-deviation machinery for the empirical measure.
//!
//! The exponential cost of forcing the empirical measure along a path is
//! measured by the action functional built from the Legendre pair
//! `tau(a) = e^a - a - 1` and `tau*(a) = (a+1)log(a+1) - a`. For d = 2 the
//! stationary rate function collapses to a one-dimensional integral
//! `s~(eta_1) = int_0^{eta_1} log r`, where `r(lambda)` is the
//! death-to-birth ratio of the count chain; subtracting its minimum gives
//! the good rate function s. The `lambda/(1-lambda)` factor of r has an
//! integrable log-singularity at both endpoints, which is substituted
//! analytically; only the bounded rate-ratio factor is quadratured.

use serde::{Deserialize, Serialize};

use crate::birth_death::{bd_log_stationary, bd_rates, log_sum_exp, BdStrategy};
use crate::dgm::PotentialNetwork;
use crate::error::{MfgError, Result};
use crate::linalg::solve_dense;
use crate::model::{
    finite_difference, optimal_selector, ModelParams, PotentialVector, RateVector, SimplexPoint,
};

/// Measure-to-rates rule used by the large-deviation quantities.
#[derive(Debug, Clone)]
pub enum LdStrategy {
    Stationary(PotentialVector),
    MasterEquation(PotentialNetwork),
}

impl LdStrategy {
    /// Rate vector of a player in state `x` when the measure is `eta`.
    pub fn rate_vector(&self, x: usize, eta: &SimplexPoint, params: &ModelParams) -> RateVector {
        let u = match self {
            LdStrategy::Stationary(u) => u.clone(),
            LdStrategy::MasterEquation(net) => net.potential_at(eta),
        };
        optimal_selector(x, &finite_difference(&u, x), params)
    }

    /// d = 2 rate vector at the possibly off-simplex point `(eta1, 1-eta1)`;
    /// the network extrapolates, matching the count-chain conventions.
    fn rate_vector_raw(&self, x: usize, eta1: f64, params: &ModelParams) -> RateVector {
        let u = match self {
            LdStrategy::Stationary(u) => u.clone(),
            LdStrategy::MasterEquation(net) => {
                let input = [eta1, 1.0 - eta1];
                PotentialVector::new((0..2).map(|y| net.eval_raw(y, &input)).collect())
                    .expect("network output is finite")
            }
        };
        optimal_selector(x, &finite_difference(&u, x), params)
    }

    fn to_bd(&self) -> BdStrategy {
        match self {
            LdStrategy::Stationary(u) => BdStrategy::Stationary(u.clone()),
            LdStrategy::MasterEquation(net) => BdStrategy::MasterEquation(net.clone()),
        }
    }

    /// Full rate matrix (row x = rates out of x) at a measure.
    pub fn rate_matrix(&self, eta: &SimplexPoint, params: &ModelParams) -> Vec<Vec<f64>> {
        (0..params.d)
            .map(|x| self.rate_vector(x, eta, params).rates().to_vec())
            .collect()
    }
}

/// `tau(a) = e^a - a - 1`.
pub fn tau(a: f64) -> f64 {
    a.exp() - a - 1.0
}

/// Legendre transform of tau: `(a+1)log(a+1) - a` for a > -1, 1 at a = -1,
/// +inf below.
pub fn tau_star(a: f64) -> f64 {
    if a > -1.0 {
        (a + 1.0) * (a + 1.0).ln() - a
    } else if a == -1.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// A controlled measure path: measures and driving rate matrices on a grid,
/// consistent with the forward equation.
#[derive(Debug, Clone)]
pub struct ControlledPath {
    pub times: Vec<f64>,
    pub measures: Vec<SimplexPoint>,
    /// `rate_matrices[t][from][to]`; off-diagonals >= 0, rows sum to 0.
    pub rate_matrices: Vec<Vec<Vec<f64>>>,
}

impl ControlledPath {
    pub fn new(
        times: Vec<f64>,
        measures: Vec<SimplexPoint>,
        rate_matrices: Vec<Vec<Vec<f64>>>,
        consistency_tol: f64,
    ) -> Result<Self> {
        if times.len() < 2 || measures.len() != times.len() || rate_matrices.len() != times.len()
        {
            return Err(MfgError::InvalidInput(
                "path needs matching times/measures/rate matrices with >= 2 samples".into(),
            ));
        }
        let d = measures[0].dim();
        for l in &rate_matrices {
            for (x, row) in l.iter().enumerate() {
                if row.len() != d {
                    return Err(MfgError::InvalidInput("rate matrix has wrong shape".into()));
                }
                if row.iter().enumerate().any(|(y, v)| y != x && *v < 0.0) {
                    return Err(MfgError::InfeasiblePath(
                        "negative off-diagonal transition rate".into(),
                    ));
                }
                if row.iter().sum::<f64>().abs() > 1e-9 {
                    return Err(MfgError::InvalidInput("rate matrix rows must sum to 0".into()));
                }
            }
        }
        let path = ControlledPath { times, measures, rate_matrices };
        let defect = path.consistency_defect();
        if defect > consistency_tol {
            return Err(MfgError::InfeasiblePath(format!(
                "forward-equation defect {defect:.3e} exceeds tolerance {consistency_tol:.3e}"
            )));
        }
        Ok(path)
    }

    /// Integrates the forward equation under a rate-matrix control, producing
    /// a consistent path (RK4 with renormalization).
    pub fn integrate<L>(eta0: &SimplexPoint, control: L, horizon: f64, dt: f64) -> Result<Self>
    where
        L: Fn(f64, &SimplexPoint) -> Vec<Vec<f64>>,
    {
        if !(horizon > 0.0) || !(dt > 0.0) {
            return Err(MfgError::InvalidInput("horizon and dt must be > 0".into()));
        }
        let d = eta0.dim();
        let drift = |t: f64, w: &[f64]| -> Vec<f64> {
            let clipped: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
            let total: f64 = clipped.iter().sum();
            let point = SimplexPoint::new(clipped.iter().map(|v| v / total).collect())
                .expect("renormalized weights are a simplex point");
            let l = control(t, &point);
            (0..d)
                .map(|y| (0..d).map(|x| l[x][y] * point.get(x)).sum::<f64>())
                .collect()
        };
        let steps = (horizon / dt).ceil() as usize;
        let mut times = Vec::with_capacity(steps + 1);
        let mut measures = Vec::with_capacity(steps + 1);
        let mut w: Vec<f64> = eta0.weights().to_vec();
        let mut t = 0.0;
        times.push(t);
        measures.push(eta0.clone());
        for _ in 0..steps {
            let h = dt.min(horizon - t);
            let k1 = drift(t, &w);
            let w2: Vec<f64> = w.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
            let k2 = drift(t + 0.5 * h, &w2);
            let w3: Vec<f64> = w.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
            let k3 = drift(t + 0.5 * h, &w3);
            let w4: Vec<f64> = w.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
            let k4 = drift(t + h, &w4);
            for i in 0..d {
                w[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                w[i] = w[i].max(0.0);
            }
            let total: f64 = w.iter().sum();
            for v in &mut w {
                *v /= total;
            }
            t += h;
            times.push(t);
            measures.push(SimplexPoint::new(w.clone())?);
        }
        let rate_matrices = times
            .iter()
            .zip(&measures)
            .map(|(s, m)| control(*s, m))
            .collect();
        ControlledPath::new(times, measures, rate_matrices, f64::INFINITY)
    }

    /// Max over interior grid points of `|mu_dot - L^T mu|` (central
    /// differences), normalized per unit rate.
    pub fn consistency_defect(&self) -> f64 {
        let d = self.measures[0].dim();
        let mut worst = 0.0f64;
        for i in 1..self.times.len() - 1 {
            let dt = self.times[i + 1] - self.times[i - 1];
            for y in 0..d {
                let dot = (self.measures[i + 1].get(y) - self.measures[i - 1].get(y)) / dt;
                let flow: f64 = (0..d)
                    .map(|x| self.rate_matrices[i][x][y] * self.measures[i].get(x))
                    .sum();
                worst = worst.max((dot - flow).abs());
            }
        }
        worst
    }
}

/// Action functional of a controlled path: trapezoidal quadrature of
/// `sum_{x != y} mu(t, x) a_{x,y}(mu) tau*(L_{x,y}/a_{x,y} - 1)`.
pub fn action_functional(
    path: &ControlledPath,
    strategy: &LdStrategy,
    params: &ModelParams,
) -> Result<f64> {
    let d = params.d;
    let integrand = |i: usize| -> Result<f64> {
        let mu = &path.measures[i];
        let l = &path.rate_matrices[i];
        let mut total = 0.0;
        for x in 0..d {
            let a = strategy.rate_vector(x, mu, params);
            for y in 0..d {
                if y == x {
                    continue;
                }
                if l[x][y] < 0.0 {
                    return Err(MfgError::InfeasiblePath(format!(
                        "negative rate L[{x}][{y}] = {}",
                        l[x][y]
                    )));
                }
                let base = a.rate_to(y);
                total += mu.get(x) * base * tau_star(l[x][y] / base - 1.0);
            }
        }
        Ok(total)
    };
    let mut action = 0.0;
    let mut prev = integrand(0)?;
    for i in 1..path.times.len() {
        let cur = integrand(i)?;
        action += 0.5 * (path.times[i] - path.times[i - 1]) * (prev + cur);
        prev = cur;
    }
    Ok(action)
}

/// Variational norm `|||R|||_xi`: the supremum over potentials phi of
/// `sum_x R_x phi_x - sum_{x != y} tau(phi_y - phi_x) xi_x a_{x,y}(xi)`.
///
/// The objective is invariant under constant shifts of phi (R is tangent),
/// so phi at state 0 is pinned to zero and the strictly concave reduced
/// problem is solved by damped Newton.
pub fn variational_norm(
    r: &[f64],
    xi: &SimplexPoint,
    strategy: &LdStrategy,
    params: &ModelParams,
) -> Result<f64> {
    let d = params.d;
    if r.len() != d {
        return Err(MfgError::InvalidInput(format!("R has length {}, expected {d}", r.len())));
    }
    if r.iter().sum::<f64>().abs() > 1e-9 {
        return Err(MfgError::InvalidInput("R must sum to 0 (tangent to the simplex)".into()));
    }
    if (0..d).any(|x| xi.get(x) <= 0.0) {
        return Err(MfgError::InvalidInput("xi must be interior".into()));
    }
    let a: Vec<RateVector> = (0..d).map(|x| strategy.rate_vector(x, xi, params)).collect();

    let objective = |phi: &[f64]| -> f64 {
        let mut val = 0.0;
        for x in 0..d {
            val += r[x] * phi[x];
            for y in 0..d {
                if y != x {
                    val -= tau(phi[y] - phi[x]) * xi.get(x) * a[x].rate_to(y);
                }
            }
        }
        val
    };

    // free coordinates: phi[1..d]
    let mut phi = vec![0.0f64; d];
    for iter in 0..200 {
        // gradient and Hessian of the reduced objective
        let mut grad = vec![0.0f64; d - 1];
        let mut hess = vec![vec![0.0f64; d - 1]; d - 1];
        for w in 1..d {
            let mut g = r[w];
            for x in 0..d {
                for y in 0..d {
                    if y == x {
                        continue;
                    }
                    let weight = xi.get(x) * a[x].rate_to(y);
                    let tp = (phi[y] - phi[x]).exp() - 1.0;
                    if y == w {
                        g -= tp * weight;
                    }
                    if x == w {
                        g += tp * weight;
                    }
                }
            }
            grad[w - 1] = g;
        }
        for x in 0..d {
            for y in 0..d {
                if y == x {
                    continue;
                }
                let weight = xi.get(x) * a[x].rate_to(y) * (phi[y] - phi[x]).exp();
                if y > 0 {
                    hess[y - 1][y - 1] -= weight;
                }
                if x > 0 {
                    hess[x - 1][x - 1] -= weight;
                }
                if x > 0 && y > 0 {
                    hess[y - 1][x - 1] += weight;
                    hess[x - 1][y - 1] += weight;
                }
            }
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < 1e-12 {
            return Ok(objective(&phi));
        }
        let mut h = hess.clone();
        let mut neg = grad.clone();
        let step = solve_dense(&mut h, &mut neg)?; // solves H s = grad; use -s
        let base = objective(&phi);
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let mut trial = phi.clone();
            for w in 1..d {
                trial[w] -= scale * step[w - 1];
            }
            if objective(&trial) > base {
                phi = trial;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            // gradient ascent fallback near machine precision
            let mut trial = phi.clone();
            for w in 1..d {
                trial[w] += 1e-8 * grad[w - 1];
            }
            if objective(&trial) <= base {
                return Ok(base);
            }
            phi = trial;
        }
        if iter == 199 {
            return Err(MfgError::IterationLimit { iterations: 200, residual: grad_norm });
        }
    }
    unreachable!()
}

/// Death-to-birth ratio `r(lambda)` of the count chain at the measure
/// `(lambda, 1 - lambda)`; constant-in-lambda rate ratio for the stationary
/// strategy.
pub fn r_function(lambda: f64, strategy: &LdStrategy, params: &ModelParams) -> Result<f64> {
    if params.d != 2 {
        return Err(MfgError::InvalidInput("r is defined for d = 2".into()));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(MfgError::InvalidInput(format!("lambda = {lambda} must be in (0, 1)")));
    }
    Ok(rate_ratio(lambda, strategy, params) * lambda / (1.0 - lambda))
}

/// The bounded factor of r: (rate out of state 0) / (rate into state 0).
fn rate_ratio(lambda: f64, strategy: &LdStrategy, params: &ModelParams) -> f64 {
    let out = strategy.rate_vector_raw(0, lambda, params).rate_to(1);
    let into = strategy.rate_vector_raw(1, lambda, params).rate_to(0);
    out / into
}

/// Nodes and weights of n-point Gauss-Legendre quadrature on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            // Legendre polynomial and derivative by recurrence
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            pp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / pp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `int_0^a log(rate_ratio(lambda)) dlambda` by composite Gauss-Legendre.
fn integrate_log_ratio(
    a: f64,
    strategy: &LdStrategy,
    params: &ModelParams,
    quad_points: usize,
) -> f64 {
    match strategy {
        LdStrategy::Stationary(_) => a * rate_ratio(0.5, strategy, params).ln(),
        LdStrategy::MasterEquation(_) => {
            let (nodes, weights) = gauss_legendre(quad_points.max(2));
            let panels = 8;
            let mut total = 0.0;
            for p in 0..panels {
                let lo = a * p as f64 / panels as f64;
                let hi = a * (p + 1) as f64 / panels as f64;
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                for (x, w) in nodes.iter().zip(&weights) {
                    total += half * w * rate_ratio(mid + half * x, strategy, params).ln();
                }
            }
            total
        }
    }
}

/// `int_0^a log(lambda / (1 - lambda)) dlambda`, evaluated analytically to
/// absorb the endpoint log-singularity exactly.
fn analytic_odds_integral(a: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    if a >= 1.0 {
        return 0.0; // int_0^1 log(odds) = 0 by symmetry
    }
    (1.0 - a).ln() + a * (a / (1.0 - a)).ln()
}

/// `s~(a) = int_0^a log r(lambda) dlambda`.
fn s_tilde(a: f64, strategy: &LdStrategy, params: &ModelParams, quad_points: usize) -> f64 {
    integrate_log_ratio(a, strategy, params, quad_points) + analytic_odds_integral(a)
}

/// Monte Carlo cross-check for the bounded rate-ratio integral.
pub fn integrate_log_ratio_mc(
    a: f64,
    strategy: &LdStrategy,
    params: &ModelParams,
    samples: usize,
    seed: u64,
) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mean: f64 = (0..samples)
        .map(|_| rate_ratio(rng.gen::<f64>() * a, strategy, params).ln())
        .sum::<f64>()
        / samples as f64;
    a * mean
}

/// Tabulated d = 2 good rate function on an interior grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFunctionTable {
    /// eta_1 values in (0, 1).
    pub grid: Vec<f64>,
    /// s(eta) per grid point; >= 0 with minimum ~ 0.
    pub values: Vec<f64>,
    pub strategy_tag: String,
}

impl RateFunctionTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta1,s\n");
        for (g, v) in self.grid.iter().zip(&self.values) {
            out.push_str(&format!("{g},{v}\n"));
        }
        out
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Good rate function s on a uniform interior grid: `s = s~ - min s~`, with
/// the closed form for the stationary strategy and quadrature plus
/// golden-section minimum refinement for the network strategy.
pub fn rate_function_d2(
    strategy: &LdStrategy,
    params: &ModelParams,
    grid_size: usize,
    quad_points: usize,
) -> Result<RateFunctionTable> {
    if params.d != 2 {
        return Err(MfgError::InvalidInput("rate function is computed for d = 2".into()));
    }
    if grid_size < 3 {
        return Err(MfgError::InvalidInput("grid_size must be >= 3".into()));
    }
    let grid: Vec<f64> =
        (1..=grid_size).map(|i| i as f64 / (grid_size + 1) as f64).collect();
    let st: Vec<f64> =
        grid.iter().map(|a| s_tilde(*a, strategy, params, quad_points)).collect();

    let s_min = match strategy {
        LdStrategy::Stationary(_) => {
            let ratio = rate_ratio(0.5, strategy, params);
            ratio.ln() - (ratio + 1.0).ln()
        }
        LdStrategy::MasterEquation(_) => {
            // bracket the minimum on a fine grid, then golden-section refine
            let fine = 257;
            let eval = |a: f64| s_tilde(a, strategy, params, quad_points);
            let mut best = (1, f64::INFINITY);
            for i in 1..fine - 1 {
                let a = i as f64 / (fine - 1) as f64;
                let v = eval(a);
                if v < best.1 {
                    best = (i, v);
                }
            }
            let mut lo = (best.0 - 1) as f64 / (fine - 1) as f64;
            let mut hi = (best.0 + 1) as f64 / (fine - 1) as f64;
            let inv_phi = 0.618_033_988_749_894_9;
            let (mut x1, mut x2) = (hi - inv_phi * (hi - lo), lo + inv_phi * (hi - lo));
            let (mut f1, mut f2) = (eval(x1), eval(x2));
            for _ in 0..80 {
                if f1 < f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - inv_phi * (hi - lo);
                    f1 = eval(x1);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + inv_phi * (hi - lo);
                    f2 = eval(x2);
                }
            }
            f1.min(f2)
        }
    };

    let values: Vec<f64> = st.iter().map(|v| v - s_min).collect();
    let tag = match strategy {
        LdStrategy::Stationary(_) => "stationary",
        LdStrategy::MasterEquation(_) => "master-equation",
    };
    Ok(RateFunctionTable { grid, values, strategy_tag: tag.to_string() })
}

/// Finite-n telescoping sums of Lemma-style consistency between the count
/// chain and log r: `(1/n) sum_k [log d((k+1)/n) - log b(k/n) - log r(k/n)]`.
/// For the stationary strategy this equals `log(n+1)/n` exactly.
pub fn lemma_telescoping_check(
    strategy: &LdStrategy,
    params: &ModelParams,
    n_list: &[usize],
) -> Result<Vec<f64>> {
    if params.d != 2 {
        return Err(MfgError::InvalidInput("d = 2 only".into()));
    }
    let death = |x: f64| {
        let n_rate = strategy.rate_vector_raw(0, x, params).rate_to(1);
        x * n_rate
    };
    let birth = |x: f64| {
        let rate = strategy.rate_vector_raw(1, x, params).rate_to(0);
        (1.0 - x) * rate
    };
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        if n < 2 {
            return Err(MfgError::InvalidInput(format!("n = {n} must be >= 2")));
        }
        let nf = n as f64;
        let mut sum = 0.0;
        for k in 1..n {
            let x = k as f64 / nf;
            sum += death((k as f64 + 1.0) / nf).ln()
                - birth(x).ln()
                - r_function(x, strategy, params)?.ln();
        }
        // the k = n term: birth and r are individually degenerate at x = 1,
        // but their product equals death(1), so the term collapses
        sum += death((nf + 1.0) / nf).ln() - death(1.0).ln();
        out.push(sum / nf);
    }
    Ok(out)
}

/// One-sided threshold events for the state-0 mass.
#[derive(Debug, Clone, Copy)]
pub enum ThresholdSet {
    /// `{eta_1 >= c}`.
    AtLeast(f64),
    /// `{eta_1 <= c}`.
    AtMost(f64),
    /// The whole simplex.
    All,
}

impl ThresholdSet {
    fn contains(&self, eta1: f64) -> bool {
        match self {
            ThresholdSet::AtLeast(c) => eta1 >= *c - 1e-12,
            ThresholdSet::AtMost(c) => eta1 <= *c + 1e-12,
            ThresholdSet::All => true,
        }
    }
}

/// Compares the exact finite-n tail exponent `-(1/n) log pi(E)` of the count
/// chain with the rate-function prediction `inf_E s`.
pub fn ld_consistency_check(
    strategy: &LdStrategy,
    params: &ModelParams,
    n: usize,
    set: ThresholdSet,
) -> Result<(f64, f64)> {
    let chain = bd_rates(n, &strategy.to_bd(), params)?;
    let log_pi = bd_log_stationary(&chain)?;
    let selected: Vec<f64> = log_pi
        .iter()
        .enumerate()
        .filter(|(k, _)| set.contains(*k as f64 / n as f64))
        .map(|(_, l)| *l)
        .collect();
    if selected.is_empty() {
        return Err(MfgError::InvalidInput("threshold set contains no count states".into()));
    }
    let exponent = -log_sum_exp(&selected) / n as f64;

    let table = rate_function_d2(strategy, params, 999, 16)?;
    let inf_s = table
        .grid
        .iter()
        .zip(&table.values)
        .filter(|(g, _)| set.contains(**g))
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    Ok((exponent, inf_s))
}

/// Coarse finite-time rate `S_T(xi | eta)` for d = 2: optimizes over
/// piecewise-linear state-0-mass paths between the endpoints, with the
/// instantaneous flow split chosen optimally at each quadrature node. The
/// tolerance is dominated by the path discretization; this is a screening
/// tool, not a converged variational solver.
pub fn finite_time_rate(
    strategy: &LdStrategy,
    params: &ModelParams,
    start: &SimplexPoint,
    end: &SimplexPoint,
    horizon: f64,
    segments: usize,
    sweeps: usize,
) -> Result<f64> {
    if params.d != 2 {
        return Err(MfgError::InvalidInput("finite-time rate is d = 2 only".into()));
    }
    if segments < 2 || !(horizon > 0.0) {
        return Err(MfgError::InvalidInput("need segments >= 2 and horizon > 0".into()));
    }
    // instantaneous cost of moving mass at velocity v (toward state 0) at eta
    let instant = |eta1: f64, v: f64| -> f64 {
        let eta = SimplexPoint::new(vec![eta1, 1.0 - eta1]).unwrap();
        let a01 = strategy.rate_vector(0, &eta, params).rate_to(1);
        let a10 = strategy.rate_vector(1, &eta, params).rate_to(0);
        let base_out = eta1 * a01;
        let base_in = (1.0 - eta1) * a10;
        // flows: into = out + v, both >= 0; minimize over out-flow f
        let cost = |f: f64| -> f64 {
            base_out * tau_star(f / base_out - 1.0) + base_in * tau_star((f + v) / base_in - 1.0)
        };
        let mut lo = (-v).max(0.0);
        let mut hi = lo + base_out + base_in + v.abs() + 1.0;
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if cost(m1) < cost(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        cost(0.5 * (lo + hi))
    };
    let dt = horizon / segments as f64;
    let path_cost = |knots: &[f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..segments {
            let (a, b) = (knots[i], knots[i + 1]);
            let v = (b - a) / dt;
            total += 0.5 * dt * (instant(a, v) + instant(b, v));
        }
        total
    };
    let mut knots: Vec<f64> = (0..=segments)
        .map(|i| {
            let t = i as f64 / segments as f64;
            (start.get(0) * (1.0 - t) + end.get(0) * t).clamp(1e-4, 1.0 - 1e-4)
        })
        .collect();
    for _ in 0..sweeps {
        for i in 1..segments {
            let mut lo = 1e-4;
            let mut hi = 1.0 - 1e-4;
            for _ in 0..60 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                let mut k1 = knots.clone();
                k1[i] = m1;
                let mut k2 = knots.clone();
                k2[i] = m2;
                if path_cost(&k1) < path_cost(&k2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            knots[i] = 0.5 * (lo + hi);
        }
    }
    Ok(path_cost(&knots))
}
