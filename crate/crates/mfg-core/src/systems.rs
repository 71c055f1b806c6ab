//! Solvers for the stationary ergodic MFG system and the forward Kolmogorov
//! flow of the mean-field dynamics.
//!
//! The stationary system couples an ergodic control problem with a
//! stationarity condition on the measure:
//!
//! ```text
//! rho = H(x, Delta_x u) + F(x, mu)          for every x,
//! 0   = sum_y mu_y gamma*_x(y, Delta_y u)   for every x.
//! ```
//!
//! For `d = 2` the quadratic benchmark admits a closed-form solution; the
//! general solver alternates relative value iteration (with the measure
//! frozen) and a stationary-distribution update, with damping.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::linalg::solve_dense;
use crate::model::{
    finite_difference, hamiltonian, mean_field_cost, optimal_selector, ModelParams,
    PotentialVector, SimplexPoint,
};

/// Solution triple of the stationary system. The potential is normalized so
/// its entries sum to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarySolution {
    pub rho: f64,
    pub u: PotentialVector,
    pub mu: SimplexPoint,
}

impl StationarySolution {
    /// Max over states of `|H(x, Delta_x u) + F(x, mu) - rho|`.
    pub fn bellman_residual(&self, params: &ModelParams) -> f64 {
        (0..params.d)
            .map(|x| {
                let p = finite_difference(&self.u, x);
                let h = hamiltonian(x, &p, params).expect("finite potential");
                (h + mean_field_cost(x, &self.mu) - self.rho).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Max over states of the generator equation residual `|(Q^T mu)_x|`.
    pub fn stationarity_residual(&self, params: &ModelParams) -> f64 {
        let q = rate_matrix_from_potential(&self.u, params);
        (0..params.d)
            .map(|x| {
                (0..params.d)
                    .map(|y| self.mu.get(y) * q[y][x])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Closed-form solution of the `d = 2` benchmark.
///
/// With `A := u_2 - u_1 = -4 b delta / (16 b + 1)` the solution is
/// `mu = (1/2 (1 - delta/(16b+1)), 1/2 (1 + delta/(16b+1)))` and
/// `rho = -2A - A^2/(4b) + mu_2
///      = 1/2 + delta (128 b^2 + 16 b + 1/2 - 4 b delta) / (16 b + 1)^2`.
/// Valid while `|A| <= 2b`, the interior regime of the selector.
pub fn solve_stationary_closed_form(b: f64, delta: f64) -> Result<StationarySolution> {
    if !(b > 0.0) || delta < 0.0 {
        return Err(MfgError::InvalidInput(format!("need b > 0, delta >= 0; got b={b}, delta={delta}")));
    }
    let denom = 16.0 * b + 1.0;
    // Subtracting the two value equations gives 0 = 4A + mu_1 - mu_2 + delta
    // with A = u_2 - u_1 and mu_1 - mu_2 = A/(4b), hence A = -4b delta/(16b+1):
    // the penalized state carries the higher potential and players leave it
    // at the faster clamped rate.
    let a_gap = -4.0 * b * delta / denom;
    if a_gap.abs() > 2.0 * b {
        return Err(MfgError::OutOfRegime { gap: a_gap.abs(), bound: 2.0 * b });
    }
    let mu1 = 0.5 * (1.0 - delta / denom);
    let mu2 = 0.5 * (1.0 + delta / denom);
    // second value equation: rho = -2A - A^2/(4b) + mu_2
    let rho = -2.0 * a_gap - a_gap * a_gap / (4.0 * b) + mu2;
    Ok(StationarySolution {
        rho,
        u: PotentialVector::new(vec![-a_gap / 2.0, a_gap / 2.0])?,
        mu: SimplexPoint::new(vec![mu1, mu2])?,
    })
}

/// Rate matrix whose row `x` is the optimal selector at `Delta_x u`.
pub fn rate_matrix_from_potential(u: &PotentialVector, params: &ModelParams) -> Vec<Vec<f64>> {
    (0..params.d)
        .map(|x| {
            let p = finite_difference(u, x);
            optimal_selector(x, &p, params).rates().to_vec()
        })
        .collect()
}

/// Unique stationary distribution `pi` with `pi^T Q = 0`, `sum pi = 1`.
///
/// Dense solve of the transposed generator with the first equation replaced
/// by the normalization row. Irreducibility is guaranteed by rates bounded
/// below away from zero.
pub fn stationary_dist_of_rate_matrix(q: &[Vec<f64>]) -> Result<SimplexPoint> {
    let d = q.len();
    let mut a: Vec<Vec<f64>> = (0..d)
        .map(|row| (0..d).map(|col| q[col][row]).collect())
        .collect();
    a[0] = vec![1.0; d];
    let mut b = vec![0.0; d];
    b[0] = 1.0;
    let pi = solve_dense(&mut a, &mut b)?;
    SimplexPoint::normalized(pi.iter().map(|p| p.max(0.0)).collect())
}

/// Options for the fixed-point solver.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Damping weight on the new measure iterate.
    pub damping: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { tol: 1e-10, max_iter: 500, damping: 0.5 }
    }
}

/// Relative value iteration for the ergodic control problem with the measure
/// frozen. Anchors the potential at state 0 internally, then recenters.
fn solve_ergodic_control(params: &ModelParams, mu: &SimplexPoint, tol: f64) -> Result<(f64, PotentialVector)> {
    let d = params.d;
    // Explicit pseudo-time stepping of w' = H(x, Delta_x w) + F; the span
    // seminorm contracts when dt * (d-1) * a_hi <= 1.
    let dt = 0.9 / ((d - 1) as f64 * params.a_hi);
    let mut w = vec![0.0; d];
    let mut rho = 0.0;
    for _ in 0..200_000 {
        let pot = PotentialVector::new(w.clone())?;
        let t: Vec<f64> = (0..d)
            .map(|x| {
                let p = finite_difference(&pot, x);
                Ok(hamiltonian(x, &p, params)? + mean_field_cost(x, mu))
            })
            .collect::<Result<_>>()?;
        let anchor = t[0];
        let mut span = 0.0f64;
        for x in 0..d {
            let step = dt * (t[x] - anchor);
            span = span.max(step.abs());
            w[x] += step;
        }
        rho = anchor;
        if span < tol * dt {
            break;
        }
    }
    Ok((rho, PotentialVector::new(w)?.centered()))
}

/// Fixed-point solver for the stationary system: alternates the ergodic
/// control solve (frozen measure) with a stationary-distribution update of
/// the induced rate matrix, damped.
pub fn solve_stationary_fixed_point(
    params: &ModelParams,
    opts: &FixedPointOptions,
) -> Result<StationarySolution> {
    params.validate()?;
    if !(opts.tol > 0.0) {
        return Err(MfgError::InvalidInput(format!("tol = {} must be > 0", opts.tol)));
    }
    let mut mu = SimplexPoint::uniform(params.d);
    let mut last_residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let (rho, u) = solve_ergodic_control(params, &mu, opts.tol * 1e-2)?;
        let q = rate_matrix_from_potential(&u, params);
        let mu_new = stationary_dist_of_rate_matrix(&q)?;
        let mixed: Vec<f64> = mu
            .weights()
            .iter()
            .zip(mu_new.weights())
            .map(|(old, new)| (1.0 - opts.damping) * old + opts.damping * new)
            .collect();
        mu = SimplexPoint::normalized(mixed)?;

        let candidate = StationarySolution { rho, u, mu: mu.clone() };
        let residual = candidate
            .bellman_residual(params)
            .max(candidate.stationarity_residual(params));
        last_residual = residual;
        if residual < opts.tol {
            return Ok(candidate);
        }
    }
    Err(MfgError::IterationLimit { iterations: opts.max_iter, residual: last_residual })
}

/// A measure path on a strictly increasing time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurePath {
    pub times: Vec<f64>,
    pub points: Vec<SimplexPoint>,
}

impl MeasurePath {
    /// Linear interpolation in time, clamped to the grid range.
    pub fn at(&self, t: f64) -> SimplexPoint {
        if t <= self.times[0] {
            return self.points[0].clone();
        }
        if t >= *self.times.last().unwrap() {
            return self.points.last().unwrap().clone();
        }
        let idx = self.times.partition_point(|s| *s <= t);
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        let mixed: Vec<f64> = self.points[idx - 1]
            .weights()
            .iter()
            .zip(self.points[idx].weights())
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        SimplexPoint::normalized(mixed).expect("interpolated point stays on the simplex")
    }

    /// CSV with columns `t, mu_1, .., mu_d`.
    pub fn to_csv(&self) -> String {
        let d = self.points[0].dim();
        let mut out = String::from("t");
        for x in 1..=d {
            out.push_str(&format!(",mu_{x}"));
        }
        out.push('\n');
        for (t, p) in self.times.iter().zip(&self.points) {
            out.push_str(&format!("{t}"));
            for w in p.weights() {
                out.push_str(&format!(",{w}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Classical RK4 integration of the forward Kolmogorov equation
/// `d mu / dt = Q(mu)^T mu` where `Q(mu)` is the rate matrix induced by the
/// supplied potential map. Each step is renormalized; the projection error
/// must stay below 1e-10 per step.
pub fn kolmogorov_forward<F>(
    eta: &SimplexPoint,
    potential_of_measure: F,
    params: &ModelParams,
    horizon: f64,
    dt: f64,
) -> Result<MeasurePath>
where
    F: Fn(&SimplexPoint) -> PotentialVector,
{
    if !(dt > 0.0) || horizon < dt {
        return Err(MfgError::InvalidInput(format!("need dt > 0 and T >= dt, got T={horizon}, dt={dt}")));
    }
    let d = eta.dim();
    let drift = |state: &[f64]| -> Result<Vec<f64>> {
        let point = SimplexPoint::normalized(state.iter().map(|w| w.max(0.0)).collect())?;
        let q = rate_matrix_from_potential(&potential_of_measure(&point), params);
        Ok((0..d)
            .map(|x| (0..d).map(|y| state[y] * q[y][x]).sum())
            .collect())
    };

    let steps = (horizon / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    let mut state: Vec<f64> = eta.weights().to_vec();
    times.push(0.0);
    points.push(eta.clone());

    for step in 1..=steps {
        let k1 = drift(&state)?;
        let s2: Vec<f64> = state.iter().zip(&k1).map(|(s, k)| s + 0.5 * dt * k).collect();
        let k2 = drift(&s2)?;
        let s3: Vec<f64> = state.iter().zip(&k2).map(|(s, k)| s + 0.5 * dt * k).collect();
        let k3 = drift(&s3)?;
        let s4: Vec<f64> = state.iter().zip(&k3).map(|(s, k)| s + dt * k).collect();
        let k4 = drift(&s4)?;
        for x in 0..d {
            state[x] += dt / 6.0 * (k1[x] + 2.0 * k2[x] + 2.0 * k3[x] + k4[x]);
        }

        let negative_mass: f64 = state.iter().filter(|w| **w < 0.0).map(|w| -w).sum();
        let mass_defect = (state.iter().sum::<f64>() - 1.0).abs();
        if negative_mass > 1e-10 {
            return Err(MfgError::StepSize { defect: negative_mass, dt });
        }
        if mass_defect > 1e-10 {
            return Err(MfgError::StepSize { defect: mass_defect, dt });
        }
        let point = SimplexPoint::normalized(state.iter().map(|w| w.max(0.0)).collect())?;
        state = point.weights().to_vec();
        times.push(step as f64 * dt);
        points.push(point);
    }
    Ok(MeasurePath { times, points })
}
