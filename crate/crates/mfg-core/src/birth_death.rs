//! Exact d = 2 analysis via the empirical count process.
//!
//! With two states, the number k of players in state 0 is itself a Markov
//! chain on {0, ..., n} that moves by +-1: a birth-death process. Its
//! stationary law is available in closed form through the detailed-balance
//! product, which gives exact stationary count distributions and exact
//! realized per-player ergodic costs for both strategy profiles -- no Monte
//! Carlo error. Products are accumulated in log space so large n stays
//! stable.

use serde::{Deserialize, Serialize};

use crate::dgm::PotentialNetwork;
use crate::error::{MfgError, Result};
use crate::model::{
    finite_difference, mean_field_cost, optimal_selector, running_cost, ModelParams,
    PotentialVector, RateVector, SimplexPoint,
};

/// Per-player rate rule for the count chain.
#[derive(Debug, Clone)]
pub enum BdStrategy {
    /// Constant rates from the stationary potential.
    Stationary(PotentialVector),
    /// Rates from the network, evaluated at `(k/(n-1), 1-k/(n-1))` for both
    /// birth and death rates. At k = n this point leaves the simplex; the
    /// network extrapolates.
    MasterEquation(PotentialNetwork),
}

impl BdStrategy {
    /// Rate vector for a player in state `x` when `k` players occupy state 0.
    pub fn rates(&self, x: usize, k: usize, n: usize, params: &ModelParams) -> RateVector {
        let u = match self {
            BdStrategy::Stationary(u) => u.clone(),
            BdStrategy::MasterEquation(net) => {
                let frac = k as f64 / (n - 1) as f64;
                let eta = [frac, 1.0 - frac];
                PotentialVector::new((0..2).map(|y| net.eval_raw(y, &eta)).collect())
                    .expect("network output is finite")
            }
        };
        optimal_selector(x, &finite_difference(&u, x), params)
    }
}

/// Birth-death chain for the count of players in state 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BirthDeathChain {
    pub n: usize,
    /// Rate k -> k+1; `birth[n] = 0`.
    pub birth: Vec<f64>,
    /// Rate k -> k-1; `death[0] = 0`.
    pub death: Vec<f64>,
}

impl BirthDeathChain {
    pub fn new(n: usize, birth: Vec<f64>, death: Vec<f64>) -> Result<Self> {
        if birth.len() != n + 1 || death.len() != n + 1 {
            return Err(MfgError::InvalidInput(format!(
                "rate vectors must have length {}, got {} and {}",
                n + 1,
                birth.len(),
                death.len()
            )));
        }
        if birth[n] != 0.0 || death[0] != 0.0 {
            return Err(MfgError::InvalidInput(
                "boundary rates must vanish: birth[n] = death[0] = 0".into(),
            ));
        }
        if birth[..n].iter().any(|r| !(*r > 0.0)) || death[1..].iter().any(|r| !(*r > 0.0)) {
            return Err(MfgError::InvalidInput("interior rates must be positive".into()));
        }
        Ok(BirthDeathChain { n, birth, death })
    }
}

/// Stationary count distribution over k in {0, ..., n}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountDistribution {
    pub probs: Vec<f64>,
}

impl CountDistribution {
    pub fn n(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn mean_fraction(&self) -> f64 {
        let n = self.n() as f64;
        self.probs.iter().enumerate().map(|(k, p)| p * k as f64 / n).sum()
    }

    /// `P(|k/n - 1/2| > tol)`.
    pub fn tail_mass(&self, tol: f64) -> f64 {
        let n = self.n() as f64;
        self.probs
            .iter()
            .enumerate()
            .filter(|(k, _)| (*k as f64 / n - 0.5).abs() > tol)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn total_variation(&self, other: &CountDistribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,prob\n");
        for (k, p) in self.probs.iter().enumerate() {
            out.push_str(&format!("{k},{p}\n"));
        }
        out
    }
}

/// Birth-death rates of the empirical count process under a strategy.
///
/// With k players in state 0, births (k -> k+1) happen when one of the n-k
/// players in state 1 jumps to 0, deaths when one of the k players in state 0
/// jumps to 1.
pub fn bd_rates(n: usize, strategy: &BdStrategy, params: &ModelParams) -> Result<BirthDeathChain> {
    params.validate()?;
    if params.d != 2 {
        return Err(MfgError::InvalidInput(format!(
            "birth-death analysis needs d = 2, got d = {}",
            params.d
        )));
    }
    if n < 2 {
        return Err(MfgError::InvalidInput(format!("need n >= 2, got {n}")));
    }
    let mut birth = vec![0.0; n + 1];
    let mut death = vec![0.0; n + 1];
    for k in 0..n {
        birth[k] = (n - k) as f64 * strategy.rates(1, k, n, params).rate_to(0);
    }
    for k in 1..=n {
        death[k] = k as f64 * strategy.rates(0, k, n, params).rate_to(1);
    }
    BirthDeathChain::new(n, birth, death)
}

/// Normalized log-probabilities of the stationary law, from the
/// detailed-balance product. Stays in log space throughout so extreme tails
/// at large n keep full precision.
pub fn bd_log_stationary(chain: &BirthDeathChain) -> Result<Vec<f64>> {
    let n = chain.n;
    let mut log_pi = vec![0.0f64; n + 1];
    for k in 1..=n {
        if chain.death[k] <= 0.0 {
            return Err(MfgError::Numeric(format!("zero death rate at k = {k}")));
        }
        log_pi[k] = log_pi[k - 1] + chain.birth[k - 1].ln() - chain.death[k].ln();
    }
    let log_norm = log_sum_exp(&log_pi);
    for l in &mut log_pi {
        *l -= log_norm;
    }
    Ok(log_pi)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Stationary distribution via the detailed-balance product, in log space.
pub fn bd_stationary(chain: &BirthDeathChain) -> Result<CountDistribution> {
    let log_pi = bd_log_stationary(chain)?;
    let mut probs: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(CountDistribution { probs })
}

/// Exact per-player ergodic cost under the stationary count law.
///
/// A tagged player sees the self-excluded measure of the other n - 1 players:
/// with k players in state 0, a tagged player in state 0 pays
/// `f(0, rates) + (k-1)/(n-1)` and one in state 1 pays
/// `f(1, rates) + (n-k-1)/(n-1)`.
pub fn exact_cost(n: usize, strategy: &BdStrategy, params: &ModelParams) -> Result<f64> {
    let chain = bd_rates(n, strategy, params)?;
    let pi = bd_stationary(&chain)?;
    let nf = n as f64;
    let mut rho = 0.0;
    for (k, p) in pi.probs.iter().enumerate() {
        let kf = k as f64;
        if k > 0 {
            let rates = strategy.rates(0, k, n, params);
            let others = SimplexPoint::new(vec![
                (kf - 1.0) / (nf - 1.0),
                (nf - kf) / (nf - 1.0),
            ])
            .expect("self-excluded fractions are on the simplex");
            let cost0 = running_cost(0, &rates, params) + mean_field_cost(0, &others);
            rho += p * (kf / nf) * cost0;
        }
        if k < n {
            let rates = strategy.rates(1, k, n, params);
            let others = SimplexPoint::new(vec![
                kf / (nf - 1.0),
                (nf - kf - 1.0) / (nf - 1.0),
            ])
            .expect("self-excluded fractions are on the simplex");
            let cost1 = running_cost(1, &rates, params) + mean_field_cost(1, &others);
            rho += p * ((nf - kf) / nf) * cost1;
        }
    }
    Ok(rho)
}
