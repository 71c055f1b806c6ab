//! Exact stochastic simulation of the n-player jump game.
//!
//! Strategy profiles map a player's state (and, for the master-equation
//! profile, the empirical measure of the other players) to a transition-rate
//! vector. For time-homogeneous profiles the rates are constant between
//! jumps, so the event-driven Gillespie scheme samples the dynamics exactly:
//! exponential holding times at the total rate, proportional jump selection,
//! event-driven cost accumulation with no quadrature error. Time-dependent
//! profiles use Ogata thinning against the global bound `n (d-1) a_hi`.
//!
//! Rates and costs depend on a player only through its state and the state
//! counts, so per-jump work is `O(d)` rate evaluations plus `O(n)` cost
//! bookkeeping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgm::PotentialNetwork;
use crate::error::{MfgError, Result};
use crate::linalg::ols_slope;
use crate::model::{
    finite_difference, mean_field_cost, optimal_selector, running_cost, ModelParams,
    PotentialVector, RateVector, SimplexPoint,
};
use crate::systems::MeasurePath;

/// Rule assigning transition rates to every player.
#[derive(Debug, Clone)]
pub enum ProfileKind {
    /// Time-homogeneous rates from the stationary potential.
    Stationary { u: PotentialVector },
    /// Rates from the master-equation network at the self-excluded empirical
    /// measure of the other players. Requires `n >= 2`.
    MasterEquation { net: PotentialNetwork },
    /// Rates from the network along a precomputed mean-field flow; depends on
    /// time only.
    TimeDependent { net: PotentialNetwork, flow: MeasurePath },
    /// A single player overrides the base profile with a constant rate.
    Deviation { base: Box<ProfileKind>, player: usize, rate: f64 },
}

#[derive(Debug, Clone)]
pub struct StrategyProfile {
    pub kind: ProfileKind,
    pub params: ModelParams,
}

impl StrategyProfile {
    pub fn stationary(u: PotentialVector, params: ModelParams) -> Self {
        StrategyProfile { kind: ProfileKind::Stationary { u }, params }
    }

    pub fn master_equation(net: PotentialNetwork, params: ModelParams) -> Self {
        StrategyProfile { kind: ProfileKind::MasterEquation { net }, params }
    }

    pub fn time_dependent(net: PotentialNetwork, flow: MeasurePath, params: ModelParams) -> Self {
        StrategyProfile { kind: ProfileKind::TimeDependent { net, flow }, params }
    }

    pub fn with_deviation(self, player: usize, rate: f64) -> Self {
        StrategyProfile {
            kind: ProfileKind::Deviation { base: Box::new(self.kind), player, rate },
            params: self.params,
        }
    }

    fn is_time_dependent(&self) -> bool {
        matches!(self.kind, ProfileKind::TimeDependent { .. })
    }
}

/// Full player configuration: one state per player.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    pub states: Vec<usize>,
}

impl Configuration {
    pub fn new(states: Vec<usize>, d: usize) -> Result<Self> {
        if states.iter().any(|s| *s >= d) {
            return Err(MfgError::InvalidInput(format!("state out of range in {states:?}")));
        }
        Ok(Configuration { states })
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    fn counts(&self, d: usize) -> Vec<usize> {
        let mut c = vec![0usize; d];
        for s in &self.states {
            c[*s] += 1;
        }
        c
    }
}

/// Initial condition: a fixed configuration or an i.i.d. law.
#[derive(Debug, Clone)]
pub enum InitialCondition {
    Fixed(Configuration),
    Iid(SimplexPoint),
}

fn empirical(counts: &[usize], n: usize) -> SimplexPoint {
    SimplexPoint::new(counts.iter().map(|c| *c as f64 / n as f64).collect())
        .expect("state counts normalize to a simplex point")
}

/// Self-excluded empirical measure: the other `n - 1` players as seen by a
/// player in state `x`.
fn self_excluded(counts: &[usize], x: usize, n: usize) -> SimplexPoint {
    let mut w: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
    w[x] -= 1.0;
    for v in &mut w {
        *v /= (n - 1) as f64;
    }
    SimplexPoint::new(w).expect("self-excluded measure is on the simplex")
}

/// Rate vector for one player under a profile.
pub fn rates_for_player(
    profile: &StrategyProfile,
    t: f64,
    config: &Configuration,
    player: usize,
) -> Result<RateVector> {
    let params = &profile.params;
    let n = config.n();
    let x = config.states[player];
    rates_for_state(&profile.kind, params, t, &config.counts(params.d), n, x, Some(player))
}

/// Rate vector for a (generic or specific) player currently in state `x`.
/// `player` is only consulted by deviation profiles.
fn rates_for_state(
    kind: &ProfileKind,
    params: &ModelParams,
    t: f64,
    counts: &[usize],
    n: usize,
    x: usize,
    player: Option<usize>,
) -> Result<RateVector> {
    match kind {
        ProfileKind::Stationary { u } => {
            Ok(optimal_selector(x, &finite_difference(u, x), params))
        }
        ProfileKind::MasterEquation { net } => {
            if n < 2 {
                return Err(MfgError::InvalidInput(
                    "master-equation profile needs n >= 2 for the self-excluded measure".into(),
                ));
            }
            let mu = self_excluded(counts, x, n);
            let u = net.potential_at(&mu);
            Ok(optimal_selector(x, &finite_difference(&u, x), params))
        }
        ProfileKind::TimeDependent { net, flow } => {
            let mu = flow.at(t);
            let u = net.potential_at(&mu);
            Ok(optimal_selector(x, &finite_difference(&u, x), params))
        }
        ProfileKind::Deviation { base, player: dev, rate } => {
            if player == Some(*dev) {
                Ok(RateVector::constant(*rate, x, params.d))
            } else {
                rates_for_state(base, params, t, counts, n, x, player)
            }
        }
    }
}

/// Simulation options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon: f64,
    /// Costs are averaged over `[burn_in, horizon]`.
    pub burn_in: f64,
    /// Output grid spacing for the empirical path.
    pub grid_dt: f64,
    pub seed: u64,
    /// Record every jump time (determinism checks; large for long runs).
    pub record_jumps: bool,
    /// Track the d=2 count-occupation measure over the cost window.
    pub track_counts: bool,
}

impl SimOptions {
    pub fn new(horizon: f64, seed: u64) -> Self {
        SimOptions {
            horizon,
            burn_in: 0.0,
            grid_dt: horizon / 100.0,
            seed,
            record_jumps: false,
            track_counts: false,
        }
    }
}

/// Output of a single simulation run.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub jump_times: Vec<f64>,
    pub jump_count: usize,
    pub path: MeasurePath,
    /// Time-averaged per-player cost over the cost window.
    pub per_player_cost: Vec<f64>,
    pub horizon: f64,
    /// Fraction of window time with k players in state 0 (d = 2 only).
    pub count_occupation: Option<Vec<f64>>,
}

fn sample_exp(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -u.ln() / rate
}

fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Exact event-driven simulation of the n-player game.
pub fn simulate(
    n: usize,
    profile: &StrategyProfile,
    init: &InitialCondition,
    opts: &SimOptions,
) -> Result<SimResult> {
    let params = &profile.params;
    params.validate()?;
    if !(opts.horizon > 0.0) {
        return Err(MfgError::InvalidInput("horizon must be > 0".into()));
    }
    let mut rng = replication_rng(opts.seed, 0);
    simulate_with_rng(n, profile, init, opts, &mut rng)
}

fn simulate_with_rng(
    n: usize,
    profile: &StrategyProfile,
    init: &InitialCondition,
    opts: &SimOptions,
    rng: &mut ChaCha8Rng,
) -> Result<SimResult> {
    let params = &profile.params;
    let d = params.d;
    if matches!(profile.kind, ProfileKind::MasterEquation { .. }) && n < 2 {
        return Err(MfgError::InvalidInput("master-equation profile needs n >= 2".into()));
    }

    let mut states: Vec<usize> = match init {
        InitialCondition::Fixed(config) => {
            if config.n() != n {
                return Err(MfgError::InvalidInput(format!(
                    "configuration has {} players, expected {n}",
                    config.n()
                )));
            }
            config.states.clone()
        }
        InitialCondition::Iid(law) => (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for x in 0..d {
                    acc += law.get(x);
                    if u < acc {
                        return x;
                    }
                }
                d - 1
            })
            .collect(),
    };
    let mut counts = {
        let mut c = vec![0usize; d];
        for s in &states {
            c[*s] += 1;
        }
        c
    };

    let time_dependent = profile.is_time_dependent();
    let deviator: Option<(usize, f64)> = match &profile.kind {
        ProfileKind::Deviation { player, rate, .. } => Some((*player, *rate)),
        _ => None,
    };
    if let Some((dev, rate)) = deviator {
        if dev >= n {
            return Err(MfgError::InvalidInput(format!(
                "deviating player {dev} out of range for n = {n}"
            )));
        }
        if rate < params.a_lo || rate > params.a_hi {
            return Err(MfgError::InvalidInput(format!(
                "deviation rate {rate} outside [{}, {}]",
                params.a_lo, params.a_hi
            )));
        }
    }

    // Per-state rate vectors for a generic (non-deviating) player. For
    // master-equation profiles the self-excluded measure needs an occupant,
    // so unoccupied states get None (and rates are recomputed after every
    // jump); all other profiles are state-count independent and get rates
    // for every state.
    let needs_occupant =
        matches!(unwrap_deviation(&profile.kind), ProfileKind::MasterEquation { .. });
    let compute_state_rates = |t: f64, counts: &[usize]| -> Result<Vec<Option<RateVector>>> {
        (0..d)
            .map(|x| {
                if needs_occupant && counts[x] == 0 {
                    Ok(None)
                } else {
                    rates_for_state(&profile.kind, params, t, counts, n, x, None).map(Some)
                }
            })
            .collect()
    };

    let static_rates = !time_dependent && !matches!(
        unwrap_deviation(&profile.kind),
        ProfileKind::MasterEquation { .. }
    );

    let mut state_rates = compute_state_rates(0.0, &counts)?;
    let deviator_rates = |x: usize, rate: f64| RateVector::constant(rate, x, d);

    // cost integrand per state for a generic player, given current rates
    let state_cost = |x: usize, rates: &RateVector, counts: &[usize]| -> f64 {
        running_cost(x, rates, params) + mean_field_cost(x, &self_excluded(counts, x, n))
    };

    let thinning_bound = n as f64 * (d - 1) as f64 * params.a_hi;

    let mut t = 0.0f64;
    let mut jump_times = Vec::new();
    let mut jump_count = 0usize;
    let mut cost_integrals = vec![0.0f64; n];
    let mut count_occ = if opts.track_counts && d == 2 {
        Some(vec![0.0f64; n + 1])
    } else {
        None
    };

    let mut grid_times = Vec::new();
    let mut grid_points = Vec::new();
    grid_times.push(0.0);
    grid_points.push(empirical(&counts, n));
    let mut next_grid = opts.grid_dt;

    let window = opts.horizon - opts.burn_in;

    while t < opts.horizon {
        // total rate of the current configuration
        let mut total = 0.0;
        for x in 0..d {
            if counts[x] == 0 {
                continue;
            }
            let mut group = counts[x] as f64;
            if let Some((dev, _)) = deviator {
                if states[dev] == x {
                    group -= 1.0;
                }
            }
            if group > 0.0 {
                total += group * state_rates[x].as_ref().unwrap().total_rate();
            }
        }
        let dev_vec = deviator.map(|(dev, rate)| deviator_rates(states[dev], rate));
        if let Some(dv) = &dev_vec {
            total += dv.total_rate();
        }

        let (holding, jump_accepted) = if time_dependent {
            let dt = sample_exp(rng, thinning_bound);
            let proposal_t = t + dt;
            state_rates = compute_state_rates(proposal_t.min(opts.horizon), &counts)?;
            let mut proposal_total = 0.0;
            for x in 0..d {
                if counts[x] > 0 {
                    let mut group = counts[x] as f64;
                    if let Some((dev, _)) = deviator {
                        if states[dev] == x {
                            group -= 1.0;
                        }
                    }
                    proposal_total += group * state_rates[x].as_ref().unwrap().total_rate();
                }
            }
            if let Some(dv) = &dev_vec {
                proposal_total += dv.total_rate();
            }
            let accept = rng.gen::<f64>() < proposal_total / thinning_bound;
            (dt, accept)
        } else {
            (sample_exp(rng, total), true)
        };

        let t_next = (t + holding).min(opts.horizon);

        // accumulate costs and the count occupation over [t, t_next)
        let lo = t.max(opts.burn_in);
        if t_next > lo {
            let span = t_next - lo;
            for (i, &x) in states.iter().enumerate() {
                let integrand = match (&deviator, &dev_vec) {
                    (Some((dev, _)), Some(dv)) if *dev == i => state_cost(x, dv, &counts),
                    _ => state_cost(x, state_rates[x].as_ref().unwrap(), &counts),
                };
                cost_integrals[i] += span * integrand;
            }
            if let Some(occ) = &mut count_occ {
                occ[counts[0]] += span;
            }
        }

        // record grid samples inside the interval
        while next_grid <= t_next + 1e-15 && next_grid <= opts.horizon + 1e-15 {
            grid_times.push(next_grid);
            grid_points.push(empirical(&counts, n));
            next_grid += opts.grid_dt;
        }

        t = t + holding;
        if t >= opts.horizon {
            break;
        }
        if !jump_accepted {
            continue;
        }

        // select the jumping player and target proportionally
        let current_total = if time_dependent {
            let mut s = 0.0;
            for x in 0..d {
                if counts[x] > 0 {
                    let mut group = counts[x] as f64;
                    if let Some((dev, _)) = deviator {
                        if states[dev] == x {
                            group -= 1.0;
                        }
                    }
                    s += group * state_rates[x].as_ref().unwrap().total_rate();
                }
            }
            if let Some(dv) = &dev_vec {
                s += dv.total_rate();
            }
            s
        } else {
            total
        };

        let mut pick = rng.gen::<f64>() * current_total;
        let mut jumped: Option<(usize, usize)> = None; // (player, target)

        'outer: for x in 0..d {
            if counts[x] == 0 {
                continue;
            }
            let mut group = counts[x] as f64;
            if let Some((dev, _)) = deviator {
                if states[dev] == x {
                    group -= 1.0;
                }
            }
            if group <= 0.0 {
                continue;
            }
            let rv = state_rates[x].as_ref().unwrap();
            for z in 0..d {
                if z == x {
                    continue;
                }
                let mass = group * rv.rate_to(z);
                if pick < mass {
                    // uniform member of the group in state x (excluding the deviator)
                    let member =
                        ((pick / rv.rate_to(z)).floor() as usize).min(group as usize - 1);
                    let mut seen = 0usize;
                    for (i, &s) in states.iter().enumerate() {
                        if s != x {
                            continue;
                        }
                        if let Some((dev, _)) = deviator {
                            if i == dev {
                                continue;
                            }
                        }
                        if seen == member {
                            jumped = Some((i, z));
                            break 'outer;
                        }
                        seen += 1;
                    }
                }
                pick -= mass;
            }
        }
        if jumped.is_none() {
            if let (Some((dev, _)), Some(dv)) = (&deviator, &dev_vec) {
                let x = states[*dev];
                for z in 0..d {
                    if z == x {
                        continue;
                    }
                    if pick < dv.rate_to(z) {
                        jumped = Some((*dev, z));
                        break;
                    }
                    pick -= dv.rate_to(z);
                }
            }
        }
        let (player, target) = jumped.ok_or_else(|| {
            MfgError::Numeric("jump selection fell through the rate table".into())
        })?;

        let from = states[player];
        states[player] = target;
        counts[from] -= 1;
        counts[target] += 1;
        jump_count += 1;
        if opts.record_jumps {
            jump_times.push(t);
        }
        if !static_rates && !time_dependent {
            state_rates = compute_state_rates(t, &counts)?;
        }
    }

    // close the grid at the horizon
    if *grid_times.last().unwrap() < opts.horizon - 1e-12 {
        grid_times.push(opts.horizon);
        grid_points.push(empirical(&counts, n));
    }

    let per_player_cost = cost_integrals.iter().map(|c| c / window).collect();
    let count_occupation = count_occ.map(|occ| occ.iter().map(|v| v / window).collect());

    Ok(SimResult {
        jump_times,
        jump_count,
        path: MeasurePath { times: grid_times, points: grid_points },
        per_player_cost,
        horizon: opts.horizon,
        count_occupation,
    })
}

fn unwrap_deviation(kind: &ProfileKind) -> &ProfileKind {
    match kind {
        ProfileKind::Deviation { base, .. } => unwrap_deviation(base),
        other => other,
    }
}

/// Cost estimate across independent replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub per_rep: Vec<f64>,
}

impl CostEstimate {
    fn from_reps(per_rep: Vec<f64>) -> Self {
        let n = per_rep.len() as f64;
        let mean = per_rep.iter().sum::<f64>() / n;
        let var = if per_rep.len() > 1 {
            per_rep.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        CostEstimate { mean, std_error: (var / n).sqrt(), per_rep }
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.std_error, self.mean + 1.96 * self.std_error)
    }
}

/// Time-averaged ergodic cost over `[burn_in, T]`, averaged over `reps`
/// independent replications (parallel, one RNG stream per replication).
/// `player = None` averages over all players; `Some(i)` tracks player `i`.
pub fn estimate_cost(
    n: usize,
    profile: &StrategyProfile,
    init: &InitialCondition,
    horizon: f64,
    burn_in: f64,
    reps: usize,
    seed: u64,
    player: Option<usize>,
) -> Result<CostEstimate> {
    if !(horizon > burn_in) || burn_in < 0.0 || reps == 0 {
        return Err(MfgError::InvalidInput(format!(
            "need horizon > burn_in >= 0 and reps >= 1; got T={horizon}, burn_in={burn_in}, reps={reps}"
        )));
    }
    let per_rep: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(seed, rep as u64);
            let mut opts = SimOptions::new(horizon, seed);
            opts.burn_in = burn_in;
            opts.grid_dt = horizon; // path not needed
            let result = simulate_with_rng(n, profile, init, &opts, &mut rng)?;
            Ok(match player {
                Some(i) => result.per_player_cost[i],
                None => result.per_player_cost.iter().sum::<f64>() / n as f64,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CostEstimate::from_reps(per_rep))
}

/// Per-n propagation-of-chaos estimates and the fitted log-log slope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagationReport {
    pub ns: Vec<usize>,
    /// `sup_t E|mu_t - mu_bar|` per n.
    pub sup_errors: Vec<f64>,
    /// OLS slope of `log sup-error` against `log n`; `None` for a single n.
    pub slope: Option<f64>,
}

/// Monte Carlo estimate of `sup_t E|mu_t - mu_bar|` with players initialized
/// i.i.d. from `mu_bar`, for each n, plus the log-log slope across n.
pub fn propagation_error(
    ns: &[usize],
    profile: &StrategyProfile,
    mu_bar: &SimplexPoint,
    horizon: f64,
    grid_dt: f64,
    reps: usize,
    seed: u64,
) -> Result<PropagationReport> {
    if ns.iter().any(|n| *n < 2) {
        return Err(MfgError::InvalidInput("all n must be >= 2".into()));
    }
    let mut sup_errors = Vec::with_capacity(ns.len());
    for (ni, &n) in ns.iter().enumerate() {
        let grid_len = (horizon / grid_dt).round() as usize + 1;
        let sums: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = replication_rng(seed.wrapping_add(ni as u64), rep as u64);
                let mut opts = SimOptions::new(horizon, seed);
                opts.grid_dt = grid_dt;
                let result = simulate_with_rng(
                    n,
                    profile,
                    &InitialCondition::Iid(mu_bar.clone()),
                    &opts,
                    &mut rng,
                )?;
                let errs: Vec<f64> = result
                    .path
                    .points
                    .iter()
                    .take(grid_len)
                    .map(|p| p.distance(mu_bar))
                    .collect();
                Ok(errs)
            })
            .collect::<Result<Vec<Vec<f64>>>>()?
            .into_iter()
            .fold(vec![0.0; grid_len], |mut acc, errs| {
                for (a, e) in acc.iter_mut().zip(&errs) {
                    *a += e;
                }
                acc
            });
        let sup = sums.iter().map(|s| s / reps as f64).fold(0.0, f64::max);
        sup_errors.push(sup);
    }
    let slope = if ns.len() >= 2 {
        let xs: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
        let ys: Vec<f64> = sup_errors.iter().map(|e| e.ln()).collect();
        Some(ols_slope(&xs, &ys).0)
    } else {
        None
    };
    Ok(PropagationReport { ns: ns.to_vec(), sup_errors, slope })
}
