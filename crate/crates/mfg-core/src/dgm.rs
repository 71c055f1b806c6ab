//! Ergodic deep Galerkin solver for the master equation.
//!
//! Trains a feed-forward network `U(x, eta; theta)` so that, with the game
//! value `rho` known, the master-equation residual
//!
//! ```text
//! H(x, Delta_x U(., eta)) + eta_x
//!     + sum_{y,z} eta_y D^eta_{yz} U(x, eta) gamma*_z(y, Delta_y U(., eta)) - rho
//! ```
//!
//! vanishes on uniformly sampled points of `[d] x P([d])`. The loss is the
//! mean of the squared residual plus a centralization penalty
//! `|sum_y U(y, eta)|^2` that pins down the additive constant.
//!
//! The simplex derivative `D^eta` is a one-sided finite difference in the
//! direction `e_z - e_y`; the theta-gradient of the loss is exact, obtained
//! by backpropagation through every network evaluation in the residual,
//! including the h-shifted evaluations inside the difference quotient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::model::{hamiltonian, optimal_selector, ModelParams, PotentialVector, SimplexPoint};

/// Fully-connected network with ELU hidden activations and a linear head.
/// Input encoding: one-hot state concatenated with the measure (length 2d).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialNetwork {
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    /// Flat parameters: per layer, row-major weights then biases.
    pub theta: Vec<f64>,
    pub d: usize,
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp() - 1.0
    }
}

fn elu_prime(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

/// Cached forward pass: activations per layer (first entry is the input)
/// and pre-activations per layer.
struct ForwardCache {
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl PotentialNetwork {
    pub fn param_count(layer_sizes: &[usize]) -> usize {
        layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// He-style random init, deterministic given the RNG.
    pub fn init(d: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut layer_sizes = vec![2 * d];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        let count = Self::param_count(&layer_sizes);
        let mut theta = Vec::with_capacity(count);
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let scale = (2.0 / n_in as f64).sqrt();
            for _ in 0..n_in * n_out {
                // Box-Muller from two uniforms keeps the draw order fixed.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen::<f64>();
                let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                theta.push(scale * g);
            }
            for _ in 0..n_out {
                theta.push(0.0);
            }
        }
        PotentialNetwork { layer_sizes, activation: "elu".into(), theta, d }
    }

    /// Default architecture `[2d, 64, 64, 1]`.
    pub fn default_arch(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::init(d, &[64, 64], rng)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != Self::param_count(&self.layer_sizes) {
            return Err(MfgError::InvalidInput(format!(
                "parameter count {} does not match layer sizes {:?}",
                self.theta.len(),
                self.layer_sizes
            )));
        }
        if self.layer_sizes.first() != Some(&(2 * self.d)) || self.layer_sizes.last() != Some(&1) {
            return Err(MfgError::InvalidInput(format!(
                "layer sizes {:?} incompatible with d = {}",
                self.layer_sizes, self.d
            )));
        }
        Ok(())
    }

    fn encode(&self, x: usize, eta: &[f64]) -> Vec<f64> {
        let mut input = vec![0.0; 2 * self.d];
        input[x] = 1.0;
        input[self.d..].copy_from_slice(eta);
        input
    }

    fn forward_cached(&self, x: usize, eta: &[f64]) -> (f64, ForwardCache) {
        let mut activations = vec![self.encode(x, eta)];
        let mut pre_activations = Vec::new();
        let mut offset = 0;
        let n_layers = self.layer_sizes.len() - 1;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.theta[offset..offset + n_in * n_out];
            let biases = &self.theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let input = activations.last().unwrap();
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut acc = biases[o];
                for (wi, xi) in row.iter().zip(input) {
                    acc += wi * xi;
                }
                z[o] = acc;
            }
            let last = l + 1 == n_layers;
            let a: Vec<f64> = if last { z.clone() } else { z.iter().map(|v| elu(*v)).collect() };
            pre_activations.push(z);
            activations.push(a);
        }
        let out = activations.last().unwrap()[0];
        (out, ForwardCache { activations, pre_activations })
    }

    /// Network evaluation `U(x, eta; theta)`.
    pub fn eval(&self, x: usize, eta: &SimplexPoint) -> f64 {
        self.forward_cached(x, eta.weights()).0
    }

    pub(crate) fn eval_raw(&self, x: usize, eta: &[f64]) -> f64 {
        self.forward_cached(x, eta).0
    }

    /// The slice `(U(x, eta))_x` as a potential vector.
    pub fn potential_at(&self, eta: &SimplexPoint) -> PotentialVector {
        PotentialVector::new((0..self.d).map(|x| self.eval(x, eta)).collect())
            .expect("network output is finite")
    }

    /// Accumulates `out_grad * dU/dtheta` for a cached evaluation into `grad`.
    fn backprop(&self, cache: &ForwardCache, out_grad: f64, grad: &mut [f64]) {
        let n_layers = self.layer_sizes.len() - 1;
        let mut delta = vec![out_grad];
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let base = offsets[l];
            let input = &cache.activations[l];
            for o in 0..n_out {
                let g = delta[o];
                if g == 0.0 {
                    continue;
                }
                let row = base + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += g * input[i];
                }
                grad[base + n_in * n_out + o] += g;
            }
            if l > 0 {
                let weights = &self.theta[base..base + n_in * n_out];
                let z_prev = &cache.pre_activations[l - 1];
                let mut next = vec![0.0; n_in];
                for o in 0..n_out {
                    let g = delta[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        next[i] += g * row[i];
                    }
                }
                for i in 0..n_in {
                    next[i] *= elu_prime(z_prev[i]);
                }
                delta = next;
            }
        }
    }
}

/// Training hyperparameters. The defaults are conventional Adam settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgmConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Simplex-derivative step.
    pub fd_step: f64,
    /// Known game value, solved from the stationary system beforehand.
    pub rho: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for DgmConfig {
    fn default() -> Self {
        DgmConfig {
            batch_size: 256,
            iterations: 20_000,
            learning_rate: 1e-3,
            fd_step: 1e-3,
            rho: 0.5,
            seed: 7,
            hidden: vec![64, 64],
        }
    }
}

impl DgmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fd_step > 0.0 && self.fd_step < 0.1) {
            return Err(MfgError::InvalidInput(format!("fd_step = {} out of range", self.fd_step)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(MfgError::InvalidInput("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(MfgError::InvalidInput("batch_size and iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// A trained network with its recorded loss history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedNetwork {
    pub network: PotentialNetwork,
    pub final_loss: f64,
    pub residual_history: Vec<f64>,
    pub config: DgmConfig,
}

impl TrainedNetwork {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Loads and validates; rejects mismatched parameter counts.
    pub fn from_json(text: &str) -> Result<Self> {
        let trained: TrainedNetwork = serde_json::from_str(text)?;
        trained.network.validate()?;
        if trained.residual_history.is_empty() {
            return Err(MfgError::InvalidInput("empty residual history".into()));
        }
        Ok(trained)
    }
}

/// I.i.d. uniform samples on the simplex (Dirichlet(1, .., 1)) via
/// normalized standard-exponential draws. Deterministic given the seed.
pub fn sample_simplex(d: usize, count: usize, seed: u64) -> Vec<SimplexPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_simplex_with(d, count, &mut rng)
}

fn sample_simplex_with(d: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<SimplexPoint> {
    (0..count)
        .map(|_| {
            let draws: Vec<f64> = (0..d)
                .map(|_| {
                    let u: f64 = rng.gen_range(1e-300..1.0);
                    -u.ln()
                })
                .collect();
            SimplexPoint::normalized(draws).expect("exponential draws are positive")
        })
        .collect()
}

/// Squashes a simplex point away from the boundary so every coordinate is at
/// least `margin`; derivative stencils of step `h <= margin / 2` stay in-domain.
fn with_margin(eta: &SimplexPoint, margin: f64) -> SimplexPoint {
    let d = eta.dim() as f64;
    let scale = 1.0 - margin * d;
    SimplexPoint::normalized(eta.weights().iter().map(|w| scale * w + margin).collect())
        .expect("margin squash stays on the simplex")
}

/// One-sided simplex difference quotient
/// `D^eta_{yz} U(x, eta) = (U(x, eta + h (e_z - e_y)) - U(x, eta)) / h`.
///
/// `D^eta_{yy}` is zero exactly. Near the boundary the direction is flipped
/// to a backward difference; if both stencils leave the simplex the call fails.
pub fn simplex_derivative(
    net: &PotentialNetwork,
    x: usize,
    eta: &SimplexPoint,
    y: usize,
    z: usize,
    h: f64,
) -> Result<f64> {
    if y == z {
        return Ok(0.0);
    }
    let base = net.eval(x, eta);
    let (shifted, sign) = shift_point(eta, y, z, h)?;
    Ok(sign * (net.eval_raw(x, &shifted) - base) / h)
}

/// Shifted stencil point `eta + sign * h (e_z - e_y)`; `sign = 1` when the
/// forward point stays on the simplex, `-1` for the backward fallback.
fn shift_point(eta: &SimplexPoint, y: usize, z: usize, h: f64) -> Result<(Vec<f64>, f64)> {
    let mut forward = eta.weights().to_vec();
    forward[y] -= h;
    forward[z] += h;
    if forward[y] >= 0.0 && forward[z] <= 1.0 {
        return Ok((forward, 1.0));
    }
    let mut backward = eta.weights().to_vec();
    backward[y] += h;
    backward[z] -= h;
    if backward[z] >= 0.0 && backward[y] <= 1.0 {
        return Ok((backward, -1.0));
    }
    Err(MfgError::StepOutOfDomain { point: eta.weights().to_vec(), h, y, z })
}

/// Master-equation residual at a single `(x, eta)`.
pub fn master_residual(
    net: &PotentialNetwork,
    x: usize,
    eta: &SimplexPoint,
    rho: f64,
    params: &ModelParams,
    h: f64,
) -> Result<f64> {
    let d = params.d;
    let u: Vec<f64> = (0..d).map(|w| net.eval(w, eta)).collect();
    let ham = {
        let p: Vec<f64> = u.iter().map(|uw| uw - u[x]).collect();
        hamiltonian(x, &p, params)?
    };
    let mut drift = 0.0;
    for y in 0..d {
        let p_y: Vec<f64> = u.iter().map(|uw| uw - u[y]).collect();
        let gamma = optimal_selector(y, &p_y, params);
        for z in 0..d {
            if z == y {
                continue;
            }
            let (shifted, sign) = shift_point(eta, y, z, h)?;
            let dyz = sign * (net.eval_raw(x, &shifted) - u[x]) / h;
            drift += eta.get(y) * dyz * gamma.rate_to(z);
        }
    }
    Ok(ham + eta.get(x) + drift - rho)
}

/// Mean over samples of `residual^2 + (sum_y U(y, eta))^2`.
pub fn loss(
    net: &PotentialNetwork,
    samples: &[(usize, SimplexPoint)],
    rho: f64,
    params: &ModelParams,
    h: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(MfgError::InvalidInput("empty sample set".into()));
    }
    let mut total = 0.0;
    for (x, eta) in samples {
        let r = master_residual(net, *x, eta, rho, params, h)?;
        let c: f64 = (0..params.d).map(|y| net.eval(y, eta)).sum();
        total += r * r + c * c;
    }
    Ok(total / samples.len() as f64)
}

/// Loss and its exact theta-gradient over a batch.
///
/// The residual is a composition of network evaluations: the `d` base
/// evaluations `U(w, eta)` and the shifted evaluations `U(x, eta +- h(e_z - e_y))`.
/// Each evaluation is backpropagated once with the chain-rule weight it
/// carries in the squared loss. The Hamiltonian contributes through the
/// envelope identity `dH/dp = gamma*`; the selector contributes its clamped
/// slope `-1/(2b)` on interior coordinates.
pub fn loss_and_gradient(
    net: &PotentialNetwork,
    samples: &[(usize, SimplexPoint)],
    rho: f64,
    params: &ModelParams,
    h: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(MfgError::InvalidInput("empty sample set".into()));
    }
    let d = params.d;
    let inv_n = 1.0 / samples.len() as f64;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;

    for (x, eta) in samples {
        let x = *x;
        let caches: Vec<(f64, ForwardCache)> =
            (0..d).map(|w| net.forward_cached(w, eta.weights())).collect();
        let u: Vec<f64> = caches.iter().map(|(v, _)| *v).collect();

        // Hamiltonian and its u-gradient via the selector (diagonal convention
        // makes dH/du_w = gamma*_w(x, .) for every w).
        let p_x: Vec<f64> = u.iter().map(|uw| uw - u[x]).collect();
        let ham = hamiltonian(x, &p_x, params)?;
        let gamma_x = optimal_selector(x, &p_x, params);

        // Selectors at every source state, plus interior flags for their slopes.
        let selectors: Vec<crate::model::RateVector> = (0..d)
            .map(|y| {
                let p_y: Vec<f64> = u.iter().map(|uw| uw - u[y]).collect();
                optimal_selector(y, &p_y, params)
            })
            .collect();

        // Shifted evaluations and the drift term.
        let mut drift = 0.0;
        let mut du_drift = vec![0.0; d];
        struct Shifted {
            cache: ForwardCache,
            weight_factor: f64, // eta_y * gamma * sign / h
        }
        let mut shifted_evals: Vec<Shifted> = Vec::with_capacity(d * (d - 1));
        for y in 0..d {
            for z in 0..d {
                if z == y {
                    continue;
                }
                let (point, sign) = shift_point(eta, y, z, h)?;
                let (val, cache) = net.forward_cached(x, &point);
                let dyz = sign * (val - u[x]) / h;
                let rate = selectors[y].rate_to(z);
                drift += eta.get(y) * dyz * rate;

                // dD/du_x = -sign / h (base value inside the quotient)
                du_drift[x] += eta.get(y) * rate * (-sign / h);

                // d gamma*_z(y, .) / du_w on the interior of the clamp
                let raw = 2.0 - (u[z] - u[y]) / (2.0 * params.b);
                if raw > params.a_lo && raw < params.a_hi {
                    let slope = 1.0 / (2.0 * params.b);
                    du_drift[z] += eta.get(y) * dyz * (-slope);
                    du_drift[y] += eta.get(y) * dyz * slope;
                }

                shifted_evals.push(Shifted { cache, weight_factor: eta.get(y) * rate * sign / h });
            }
        }

        let residual = ham + eta.get(x) + drift - rho;
        let central: f64 = u.iter().sum();
        total += residual * residual + central * central;

        // Per-evaluation chain-rule weights, then one backprop each.
        let two_r = 2.0 * residual * inv_n;
        let two_c = 2.0 * central * inv_n;
        for w in 0..d {
            let dr_du = gamma_x.rate_to(w) + du_drift[w];
            let weight = two_r * dr_du + two_c;
            if weight != 0.0 {
                net.backprop(&caches[w].1, weight, grad);
            }
        }
        for s in &shifted_evals {
            let weight = two_r * s.weight_factor;
            if weight != 0.0 {
                net.backprop(&s.cache, weight, grad);
            }
        }
    }
    Ok(total * inv_n)
}

/// Adam minimization of the DGM loss over fresh simplex minibatches.
///
/// Per iteration, `batch_size / d` measures are sampled (squashed away from
/// the boundary by a `2h` margin) and every state of each measure enters the
/// batch. Loss is recorded every 100 iterations; the parameters with the best
/// recorded loss are returned.
pub fn train(config: &DgmConfig, params: &ModelParams) -> Result<TrainedNetwork> {
    config.validate()?;
    params.validate()?;
    let d = params.d;
    let h = config.fd_step;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = PotentialNetwork::init(d, &config.hidden, &mut rng);
    let n_params = net.theta.len();

    let mut grad = vec![0.0; n_params];
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);

    let etas_per_batch = (config.batch_size + d - 1) / d;
    let margin = 2.0 * h;

    let mut history = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_theta = net.theta.clone();

    for iter in 0..config.iterations {
        let etas = sample_simplex_with(d, etas_per_batch, &mut rng);
        let batch: Vec<(usize, SimplexPoint)> = etas
            .iter()
            .flat_map(|eta| {
                let squashed = with_margin(eta, margin);
                (0..d).map(move |x| (x, squashed.clone()))
            })
            .collect();

        let batch_loss = loss_and_gradient(&net, &batch, config.rho, params, h, &mut grad)?;
        if !batch_loss.is_finite() {
            return Err(MfgError::Divergence { iteration: iter });
        }

        let t = (iter + 1) as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        for i in 0..n_params {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            net.theta[i] -= config.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
        }

        if iter % 100 == 0 || iter + 1 == config.iterations {
            history.push(batch_loss);
            if batch_loss < best_loss {
                best_loss = batch_loss;
                best_theta.copy_from_slice(&net.theta);
            }
        }
    }

    let final_loss = *history.last().unwrap();
    net.theta = best_theta;
    Ok(TrainedNetwork { network: net, final_loss, residual_history: history, config: config.clone() })
}
