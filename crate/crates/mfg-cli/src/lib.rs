//! Experiment runner: JSON config in, CSV/JSON/SVG artifacts out.
//!
//! Every command is deterministic given its config (seeds included), writes
//! the fully resolved config and a machine-readable summary next to its data
//! files, and reports pass/fail against any thresholds declared in the
//! config.

pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mfg_core::birth_death::{bd_rates, bd_stationary, exact_cost, BdStrategy};
use mfg_core::dgm::{train, DgmConfig, TrainedNetwork};
use mfg_core::ld::{rate_function_d2, LdStrategy};
use mfg_core::model::{ModelParams, SimplexPoint};
use mfg_core::sim::{
    estimate_cost, propagation_error, simulate, InitialCondition, SimOptions, StrategyProfile,
};
use mfg_core::systems::{
    kolmogorov_forward, solve_stationary_closed_form, solve_stationary_fixed_point,
    FixedPointOptions, StationarySolution,
};
use mfg_core::MfgError;

use svg::{line_chart, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    SolveStationary,
    TrainDgm,
    Simulate,
    Compare,
    RateFunction,
    Chaos,
}

impl CommandKind {
    fn name(&self) -> &'static str {
        match self {
            CommandKind::SolveStationary => "solve-stationary",
            CommandKind::TrainDgm => "train-dgm",
            CommandKind::Simulate => "simulate",
            CommandKind::Compare => "compare",
            CommandKind::RateFunction => "rate-function",
            CommandKind::Chaos => "chaos",
        }
    }
}

/// Result of a command run: artifacts written, thresholds checked.
pub struct Outcome {
    pub pass: bool,
    pub violations: Vec<String>,
}

// ---------------------------------------------------------------- configs

fn default_d() -> usize {
    2
}
fn default_a_lo() -> f64 {
    1.0
}
fn default_a_hi() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default = "default_d")]
    pub d: usize,
    pub b: f64,
    pub delta: f64,
    #[serde(default = "default_a_lo")]
    pub a_lo: f64,
    #[serde(default = "default_a_hi")]
    pub a_hi: f64,
}

impl ModelBlock {
    fn params(&self) -> ModelParams {
        ModelParams { d: self.d, a_lo: self.a_lo, a_hi: self.a_hi, b: self.b, delta: self.delta }
    }

    fn is_benchmark_bounds(&self) -> bool {
        self.a_lo == 1.0 && self.a_hi == 3.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let opts = FixedPointOptions::default();
        SolverBlock { tol: opts.tol, max_iter: opts.max_iter, damping: opts.damping }
    }
}

impl SolverBlock {
    fn options(&self) -> FixedPointOptions {
        FixedPointOptions { tol: self.tol, max_iter: self.max_iter, damping: self.damping }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub solver: SolverBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainThresholds {
    pub max_final_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub dgm: DgmConfig,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub thresholds: TrainThresholds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationBlock {
    pub player: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileBlock {
    /// "stationary", "master-equation", or "time-dependent"
    pub kind: String,
    /// Path to a trained-network JSON; required for the network profiles.
    #[serde(default)]
    pub network: Option<String>,
    #[serde(default)]
    pub deviation: Option<DeviationBlock>,
}

fn default_reps() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelBlock,
    pub profile: ProfileBlock,
    pub n: usize,
    pub horizon: f64,
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid_dt: Option<f64>,
    /// Initial law over states; uniform when absent. Players are drawn
    /// i.i.d. from it.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
}

fn default_min_difference() -> f64 {
    -0.005
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub model: ModelBlock,
    pub network: String,
    pub ns: Vec<usize>,
    /// Pass iff rho_stationary - rho_master >= this for every n.
    #[serde(default = "default_min_difference")]
    pub min_difference: f64,
}

fn default_grid_size() -> usize {
    99
}
fn default_quad_points() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateFunctionConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub network: Option<String>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_quad_points")]
    pub quad_points: usize,
}

fn default_chaos_horizon() -> f64 {
    5.0
}
fn default_chaos_grid_dt() -> f64 {
    0.25
}
fn default_chaos_reps() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosConfig {
    pub model: ModelBlock,
    pub ns: Vec<usize>,
    #[serde(default = "default_chaos_horizon")]
    pub horizon: f64,
    #[serde(default = "default_chaos_grid_dt")]
    pub grid_dt: f64,
    #[serde(default = "default_chaos_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Pass iff the fitted log-log slope lies in [lo, hi] (needs >= 2 n's).
    #[serde(default)]
    pub slope_range: Option<[f64; 2]>,
}

// ---------------------------------------------------------------- plumbing

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(path)
}

fn write_summary(
    dir: &Path,
    command: CommandKind,
    config_text: &str,
    metrics: serde_json::Value,
    violations: &[String],
) -> Result<()> {
    let hash = hex_digest(config_text);
    let summary = serde_json::json!({
        "command": command.name(),
        "config_hash": hash,
        "metrics": metrics,
        "pass": violations.is_empty(),
        "violations": violations,
    });
    write_file(dir, "summary.json", &format!("{:#}\n", summary))?;
    Ok(())
}

fn hex_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_resolved_config<T: Serialize>(dir: &Path, config: &T) -> Result<()> {
    write_file(dir, "resolved_config.json", &format!("{:#}\n", serde_json::to_value(config)?))?;
    Ok(())
}

/// Stationary solve with the documented strategy: closed form for the d = 2
/// benchmark when in-regime, damped fixed point otherwise.
fn solve_model(model: &ModelBlock, solver: &SolverBlock) -> Result<(StationarySolution, String)> {
    let params = model.params();
    if model.d == 2 && model.is_benchmark_bounds() {
        match solve_stationary_closed_form(model.b, model.delta) {
            Ok(sol) => return Ok((sol, "closed-form".into())),
            Err(MfgError::OutOfRegime { gap, bound }) => {
                eprintln!(
                    "notice: closed form out of regime (|gap| {gap:.3} > {bound:.3}); \
                     falling back to the fixed-point solver"
                );
            }
            Err(e) => return Err(e.into()),
        }
    }
    let sol = solve_stationary_fixed_point(&params, &solver.options())?;
    Ok((sol, "fixed-point".into()))
}

fn load_network(path: &str) -> Result<TrainedNetwork> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading network file {path}"))?;
    Ok(TrainedNetwork::from_json(&text)?)
}

// ---------------------------------------------------------------- commands

pub fn run_command(
    kind: CommandKind,
    config_text: &str,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<Outcome> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    match kind {
        CommandKind::SolveStationary => cmd_solve_stationary(config_text, out_dir),
        CommandKind::TrainDgm => cmd_train_dgm(config_text, out_dir, seed_override),
        CommandKind::Simulate => cmd_simulate(config_text, out_dir, seed_override),
        CommandKind::Compare => cmd_compare(config_text, out_dir),
        CommandKind::RateFunction => cmd_rate_function(config_text, out_dir),
        CommandKind::Chaos => cmd_chaos(config_text, out_dir, seed_override),
    }
}

fn cmd_solve_stationary(config_text: &str, out: &Path) -> Result<Outcome> {
    let config: SolveConfig = serde_json::from_str(config_text)?;
    let (sol, method) = solve_model(&config.model, &config.solver)?;
    let params = config.model.params();
    let gap: Vec<f64> = sol.u.values().iter().map(|v| v - sol.u.values()[0]).collect();
    println!(
        "rho = {:.12}, potential gaps (vs state 1) = {:?}, mu = {:?}",
        sol.rho,
        &gap[1..],
        sol.mu.weights()
    );
    write_resolved_config(out, &config)?;
    write_file(out, "solution.json", &format!("{:#}\n", serde_json::to_value(&sol)?))?;
    let metrics = serde_json::json!({
        "method": method,
        "rho": sol.rho,
        "u": sol.u.values(),
        "mu": sol.mu.weights(),
        "bellman_residual": sol.bellman_residual(&params),
        "stationarity_residual": sol.stationarity_residual(&params),
    });
    write_summary(out, CommandKind::SolveStationary, config_text, metrics, &[])?;
    Ok(Outcome { pass: true, violations: vec![] })
}

fn cmd_train_dgm(config_text: &str, out: &Path, seed_override: Option<u64>) -> Result<Outcome> {
    let mut config: TrainConfig = serde_json::from_str(config_text)?;
    let params = config.model.params();
    let (sol, _) = solve_model(&config.model, &config.solver)?;
    config.dgm.rho = sol.rho;
    if let Some(seed) = seed_override {
        config.dgm.seed = seed;
    }
    let trained = train(&config.dgm, &params)?;
    write_resolved_config(out, &config)?;
    write_file(out, "network.json", &trained.to_json()?)?;
    let mut csv = String::from("record,loss\n");
    for (i, l) in trained.residual_history.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    write_file(out, "residual_history.csv", &csv)?;
    println!("final loss = {:.6e}", trained.final_loss);

    let mut violations = Vec::new();
    if let Some(max) = config.thresholds.max_final_loss {
        if !(trained.final_loss <= max) {
            violations.push(format!("final loss {} exceeds {max}", trained.final_loss));
        }
    }
    let metrics = serde_json::json!({
        "rho": sol.rho,
        "final_loss": trained.final_loss,
        "records": trained.residual_history.len(),
    });
    write_summary(out, CommandKind::TrainDgm, config_text, metrics, &violations)?;
    Ok(Outcome { pass: violations.is_empty(), violations })
}

fn build_profile(
    config: &SimulateConfig,
    params: ModelParams,
    init: &SimplexPoint,
    solver: &SolverBlock,
) -> Result<StrategyProfile> {
    let profile = match config.profile.kind.as_str() {
        "stationary" => {
            let (sol, _) = solve_model(&config.model, solver)?;
            StrategyProfile::stationary(sol.u, params)
        }
        "master-equation" => {
            let net = config
                .profile
                .network
                .as_deref()
                .ok_or_else(|| anyhow::anyhow!("master-equation profile needs a network file"))?;
            StrategyProfile::master_equation(load_network(net)?.network, params)
        }
        "time-dependent" => {
            let net = config
                .profile
                .network
                .as_deref()
                .ok_or_else(|| anyhow::anyhow!("time-dependent profile needs a network file"))?;
            let network = load_network(net)?.network;
            let flow = kolmogorov_forward(
                init,
                |eta| network.potential_at(eta),
                &params,
                config.horizon,
                1e-3,
            )?;
            StrategyProfile::time_dependent(network, flow, params)
        }
        other => bail!("unknown profile kind {other:?}"),
    };
    Ok(match &config.profile.deviation {
        Some(dev) => profile.with_deviation(dev.player, dev.rate),
        None => profile,
    })
}

fn cmd_simulate(config_text: &str, out: &Path, seed_override: Option<u64>) -> Result<Outcome> {
    let mut config: SimulateConfig = serde_json::from_str(config_text)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let params = config.model.params();
    let init_law = match &config.init {
        Some(w) => SimplexPoint::new(w.clone())?,
        None => SimplexPoint::uniform(params.d),
    };
    let profile = build_profile(&config, params, &init_law, &SolverBlock::default())?;

    let mut opts = SimOptions::new(config.horizon, config.seed);
    opts.burn_in = config.burn_in;
    opts.grid_dt = config.grid_dt.unwrap_or(config.horizon / 200.0);
    opts.track_counts = params.d == 2;
    let result = simulate(config.n, &profile, &InitialCondition::Iid(init_law.clone()), &opts)?;

    write_resolved_config(out, &config)?;
    write_file(out, "path.csv", &result.path.to_csv())?;
    if let Some(occ) = &result.count_occupation {
        let mut csv = String::from("k,occupation\n");
        for (k, p) in occ.iter().enumerate() {
            csv.push_str(&format!("{k},{p}\n"));
        }
        write_file(out, "count_occupation.csv", &csv)?;
    }

    let estimate = estimate_cost(
        config.n,
        &profile,
        &InitialCondition::Iid(init_law),
        config.horizon,
        config.burn_in,
        config.reps,
        config.seed,
        None,
    )?;
    let mut csv = String::from("rep,cost\n");
    for (i, c) in estimate.per_rep.iter().enumerate() {
        csv.push_str(&format!("{i},{c}\n"));
    }
    csv.push_str(&format!("mean,{}\n", estimate.mean));
    csv.push_str(&format!("stderr,{}\n", estimate.std_error));
    write_file(out, "costs.csv", &csv)?;
    println!("mean cost = {:.6} +- {:.6}", estimate.mean, estimate.std_error);

    let metrics = serde_json::json!({
        "n": config.n,
        "jumps": result.jump_count,
        "mean_cost": estimate.mean,
        "std_error": estimate.std_error,
    });
    write_summary(out, CommandKind::Simulate, config_text, metrics, &[])?;
    Ok(Outcome { pass: true, violations: vec![] })
}

fn cmd_compare(config_text: &str, out: &Path) -> Result<Outcome> {
    let config: CompareConfig = serde_json::from_str(config_text)?;
    if config.model.d != 2 {
        bail!("exact comparison is d = 2 only");
    }
    let params = config.model.params();
    let (sol, _) = solve_model(&config.model, &SolverBlock::default())?;
    let stationary = BdStrategy::Stationary(sol.u.clone());
    let master = BdStrategy::MasterEquation(load_network(&config.network)?.network);

    let mut csv = String::from("n,rho_stationary,rho_master,difference\n");
    let mut rows = Vec::new();
    for &n in &config.ns {
        let rho_st = exact_cost(n, &stationary, &params)?;
        let rho_me = exact_cost(n, &master, &params)?;
        csv.push_str(&format!("{n},{rho_st},{rho_me},{}\n", rho_st - rho_me));
        rows.push((n, rho_st, rho_me));
        for (tag, strategy) in [("stationary", &stationary), ("master", &master)] {
            let pi = bd_stationary(&bd_rates(n, strategy, &params)?)?;
            write_file(out, &format!("counts_{tag}_n{n}.csv"), &pi.to_csv())?;
        }
    }
    write_resolved_config(out, &config)?;
    write_file(out, "comparison.csv", &csv)?;
    let chart = line_chart(
        "Exact realized cost by player count",
        "n",
        "rho",
        &[
            Series {
                name: "stationary",
                points: rows.iter().map(|(n, a, _)| (*n as f64, *a)).collect(),
            },
            Series {
                name: "master-equation",
                points: rows.iter().map(|(n, _, b)| (*n as f64, *b)).collect(),
            },
        ],
    );
    write_file(out, "comparison.svg", &chart)?;

    let mut violations = Vec::new();
    for (n, a, b) in &rows {
        if !(a - b >= config.min_difference) {
            violations.push(format!(
                "difference {} at n = {n} below threshold {}",
                a - b,
                config.min_difference
            ));
        }
    }
    let metrics = serde_json::json!({
        "ns": config.ns,
        "rho_stationary": rows.iter().map(|(_, a, _)| *a).collect::<Vec<_>>(),
        "rho_master": rows.iter().map(|(_, _, b)| *b).collect::<Vec<_>>(),
    });
    write_summary(out, CommandKind::Compare, config_text, metrics, &violations)?;
    Ok(Outcome { pass: violations.is_empty(), violations })
}

fn cmd_rate_function(config_text: &str, out: &Path) -> Result<Outcome> {
    let config: RateFunctionConfig = serde_json::from_str(config_text)?;
    let params = config.model.params();
    let (sol, _) = solve_model(&config.model, &SolverBlock::default())?;
    let table_st = rate_function_d2(
        &LdStrategy::Stationary(sol.u.clone()),
        &params,
        config.grid_size,
        config.quad_points,
    )?;
    let table_me = match &config.network {
        Some(path) => Some(rate_function_d2(
            &LdStrategy::MasterEquation(load_network(path)?.network),
            &params,
            config.grid_size,
            config.quad_points,
        )?),
        None => None,
    };

    let mut csv = String::from(match table_me {
        Some(_) => "eta1,s_stationary,s_master,difference\n",
        None => "eta1,s_stationary\n",
    });
    for (i, g) in table_st.grid.iter().enumerate() {
        match &table_me {
            Some(me) => csv.push_str(&format!(
                "{g},{},{},{}\n",
                table_st.values[i],
                me.values[i],
                table_st.values[i] - me.values[i]
            )),
            None => csv.push_str(&format!("{g},{}\n", table_st.values[i])),
        }
    }
    write_resolved_config(out, &config)?;
    write_file(out, "rate_function.csv", &csv)?;
    let mut series = vec![Series {
        name: "stationary",
        points: table_st.grid.iter().zip(&table_st.values).map(|(g, v)| (*g, *v)).collect(),
    }];
    if let Some(me) = &table_me {
        series.push(Series {
            name: "master-equation",
            points: me.grid.iter().zip(&me.values).map(|(g, v)| (*g, *v)).collect(),
        });
    }
    write_file(out, "rate_function.svg", &line_chart("Good rate function", "eta_1", "s", &series))?;

    let mut violations = Vec::new();
    for table in std::iter::once(&table_st).chain(table_me.iter()) {
        // The tabulated minimum sits on a grid, not at the exact argmin, so
        // allow the O(grid spacing^2) offset of a smooth function near its
        // minimum.
        if table.min_value() > 1e-3 {
            violations.push(format!(
                "{} rate function minimum {} is not ~0",
                table.strategy_tag,
                table.min_value()
            ));
        }
    }
    let metrics = serde_json::json!({
        "grid_size": config.grid_size,
        "min_stationary": table_st.min_value(),
        "min_master": table_me.as_ref().map(|t| t.min_value()),
    });
    write_summary(out, CommandKind::RateFunction, config_text, metrics, &violations)?;
    Ok(Outcome { pass: violations.is_empty(), violations })
}

fn cmd_chaos(config_text: &str, out: &Path, seed_override: Option<u64>) -> Result<Outcome> {
    let mut config: ChaosConfig = serde_json::from_str(config_text)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let params = config.model.params();
    let (sol, _) = solve_model(&config.model, &SolverBlock::default())?;
    let mu_bar = sol.mu.clone();
    let profile = StrategyProfile::stationary(sol.u, params);
    let report = propagation_error(
        &config.ns,
        &profile,
        &mu_bar,
        config.horizon,
        config.grid_dt,
        config.reps,
        config.seed,
    )?;

    write_resolved_config(out, &config)?;
    let mut csv = String::from("n,sup_error\n");
    for (n, e) in report.ns.iter().zip(&report.sup_errors) {
        csv.push_str(&format!("{n},{e}\n"));
    }
    write_file(out, "chaos.csv", &csv)?;
    match report.slope {
        Some(s) => println!("fitted log-log slope = {s:.4}"),
        None => println!("single n: no slope fit"),
    }

    let mut violations = Vec::new();
    if let (Some([lo, hi]), Some(slope)) = (config.slope_range, report.slope) {
        if !(slope >= lo && slope <= hi) {
            violations.push(format!("slope {slope} outside [{lo}, {hi}]"));
        }
    }
    let metrics = serde_json::json!({
        "ns": report.ns,
        "sup_errors": report.sup_errors,
        "slope": report.slope,
    });
    write_summary(out, CommandKind::Chaos, config_text, metrics, &violations)?;
    Ok(Outcome { pass: violations.is_empty(), violations })
}
