//! Command-line front end: JSON model/config ingestion, subcommand dispatch,
//! CSV/JSON emission, seed management.
//!
//! Every subcommand is deterministic given its config (including the seed):
//! rerunning produces byte-identical CSV outputs. Exit codes: 0 success,
//! 2 configuration error, 3 runtime resource error.

use crate::error::{Error, Result};
use crate::estimate::estimate_from_trajectory;
use crate::laws::{model_a, model_c, model_d, FiniteLaw, GwiModel};
use crate::limit::{
    DegenerateNoiseForm, LimitConstants, MxiScaleFactor, SdeConfig, DEFAULT_DT,
};
use crate::mcharness::{
    compare, conditional_variance_check, model_diagnostics, quantile_table, run_estimator_mc,
    run_limit_mc, third_moment_check, EstimatorStatistic, LimitFunctional, McConfig,
    QUANTILE_LEVELS,
};
use crate::simulate::{simulate_gwi_with, SamplerKind, SimOptions, DEFAULT_POPULATION_CAP};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Simulation and CLS inference for 2-type branching processes with immigration.
#[derive(Debug, Parser)]
#[command(name = "gwi", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the config worker count.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one trajectory and write `k,x1,x2` CSV.
    Simulate(CommonArgs),
    /// CLS estimates over replications, one CSV row each.
    Estimate(CommonArgs),
    /// Sample a limit functional over SDE paths, one CSV row each.
    LimitSample(CommonArgs),
    /// Compare estimator-side and limit-side samples (report JSON).
    McCompare(CommonArgs),
    /// One-step conditional moment checks from a frozen state (report JSON).
    MomentsCheck(CommonArgs),
    /// Print model diagnostics (criticality, variance objects, degeneracy).
    ValidateLaws(CommonArgs),
}

/// Model selection: a named preset or three explicit laws.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(String),
    Laws {
        offspring1: FiniteLaw,
        offspring2: FiniteLaw,
        immigration: FiniteLaw,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<GwiModel> {
        match self {
            ModelSpec::Preset(name) => match name.as_str() {
                "modelA" => Ok(model_a()),
                "modelC" => Ok(model_c()),
                "modelD" => Ok(model_d()),
                other => Err(Error::Config(format!(
                    "unknown preset '{other}' in field 'model' (expected modelA, modelC or modelD)"
                ))),
            },
            ModelSpec::Laws {
                offspring1,
                offspring2,
                immigration,
            } => GwiModel::new(offspring1.clone(), offspring2.clone(), immigration.clone()),
        }
    }
}

/// JSON run configuration shared by all subcommands; each subcommand reads
/// the fields it needs and rejects configs with missing ones by field name.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub dt: Option<f64>,
    pub workers: Option<usize>,
    /// Estimator-side statistic for `mc-compare`.
    pub statistic: Option<StatisticName>,
    /// Limit functional for `limit-sample`.
    pub functional: Option<FunctionalName>,
    /// Frozen state for `moments-check`.
    pub state: Option<[u64; 2]>,
    /// Trajectory CSV (`k,x1,x2`) to estimate from instead of simulating.
    pub trajectory: Option<PathBuf>,
    pub population_cap: Option<u64>,
    pub sampler: Option<SamplerKind>,
    /// Scale-factor convention switch for the nondegenerate functional.
    pub mxi_scale: Option<MxiScaleFactor>,
    /// Noise-form switch for the degenerate functional.
    pub degenerate_noise: Option<DegenerateNoiseForm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticName {
    NRhoMinusOne,
    SqrtNMxiProjV,
    MxiProjV,
    SqrtNRhoMinusRho,
}

impl StatisticName {
    fn to_statistic(self) -> EstimatorStatistic {
        match self {
            StatisticName::NRhoMinusOne => EstimatorStatistic::NRhoMinusOne,
            StatisticName::SqrtNMxiProjV => EstimatorStatistic::SqrtNMxiProjV,
            StatisticName::MxiProjV => EstimatorStatistic::MxiProjV,
            StatisticName::SqrtNRhoMinusRho => EstimatorStatistic::SqrtNRhoMinusRho,
        }
    }

    /// The limit functional whose law the statistic converges to.
    fn paired_functional(self) -> Result<LimitFunctional> {
        match self {
            StatisticName::NRhoMinusOne => Ok(LimitFunctional::Rho),
            StatisticName::SqrtNMxiProjV => Ok(LimitFunctional::MxiProjV),
            StatisticName::MxiProjV => Ok(LimitFunctional::MxiDegenerateProjV),
            StatisticName::SqrtNRhoMinusRho => Err(Error::Config(
                "statistic 'sqrt_n_rho_minus_rho' has a normal limit; mc-compare pairs only critical statistics with SDE functionals".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalName {
    Rho,
    MxiProjV,
    MxiDegenerateProjV,
}

impl FunctionalName {
    fn to_functional(self) -> LimitFunctional {
        match self {
            FunctionalName::Rho => LimitFunctional::Rho,
            FunctionalName::MxiProjV => LimitFunctional::MxiProjV,
            FunctionalName::MxiDegenerateProjV => LimitFunctional::MxiDegenerateProjV,
        }
    }

    fn name(self) -> &'static str {
        match self {
            FunctionalName::Rho => "rho",
            FunctionalName::MxiProjV => "mxi_proj_v",
            FunctionalName::MxiDegenerateProjV => "mxi_degenerate_proj_v",
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))
}

fn require<T: Copy>(field: Option<T>, name: &str) -> Result<T> {
    field.ok_or_else(|| Error::Config(format!("missing required config field '{name}'")))
}

struct Resolved {
    model: GwiModel,
    config: RunConfig,
    seed: u64,
    workers: usize,
    out: Option<PathBuf>,
}

fn resolve(args: &CommonArgs) -> Result<Resolved> {
    let config = load_config(&args.config)?;
    let model = config.model.build()?;
    let seed = args
        .seed
        .or(config.seed)
        .ok_or_else(|| Error::Config("missing required config field 'seed'".into()))?;
    let workers = args.workers.or(config.workers).unwrap_or(0);
    Ok(Resolved {
        model,
        config,
        seed,
        workers,
        out: args.out.clone(),
    })
}

fn sim_options(config: &RunConfig) -> SimOptions {
    SimOptions {
        population_cap: config.population_cap.unwrap_or(DEFAULT_POPULATION_CAP),
        sampler: config.sampler.unwrap_or(SamplerKind::Grouped),
    }
}

fn sde_config(r: &Resolved) -> Result<SdeConfig> {
    let constants = LimitConstants::from_model(&r.model)?;
    let mut cfg = SdeConfig::new(constants, r.config.dt.unwrap_or(DEFAULT_DT), r.seed)?;
    if let Some(scale) = r.config.mxi_scale {
        cfg.mxi_scale = scale;
    }
    if let Some(noise) = r.config.degenerate_noise {
        cfg.degenerate_noise = noise;
    }
    Ok(cfg)
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(Error::Io),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_simulate(args: &CommonArgs) -> Result<()> {
    let r = resolve(args)?;
    let n = require(r.config.n, "n")?;
    if n < 1 {
        return Err(Error::Config("'n' must be at least 1".into()));
    }
    let traj = simulate_gwi_with(&r.model, n, r.seed, &sim_options(&r.config))?;
    let mut csv = String::from("k,x1,x2\n");
    for (k, s) in traj.states.iter().enumerate() {
        writeln!(csv, "{k},{},{}", s[0], s[1]).expect("string write");
    }
    emit(&r.out, &csv)
}

/// Parse a trajectory CSV in the `k,x1,x2` format written by `simulate`.
fn parse_trajectory_csv(path: &Path) -> Result<crate::simulate::Trajectory> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read trajectory {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("k,x1,x2") => {}
        other => {
            return Err(Error::Config(format!(
                "trajectory file must start with header 'k,x1,x2', found {other:?}"
            )))
        }
    }
    let mut states = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let parse = |field: &str, name: &str| -> Result<u64> {
            field.parse().map_err(|_| {
                Error::Config(format!("trajectory row {idx}: invalid {name} '{field}'"))
            })
        };
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "trajectory row {idx}: expected 3 fields, found {}",
                parts.len()
            )));
        }
        let k = parse(parts[0], "k")?;
        if k != idx as u64 {
            return Err(Error::Config(format!(
                "trajectory row {idx}: generation index {k} out of order"
            )));
        }
        states.push([parse(parts[1], "x1")?, parse(parts[2], "x2")?]);
    }
    if states.len() < 2 {
        return Err(Error::Config(
            "trajectory file must contain X_0 and at least one generation".into(),
        ));
    }
    if states[0] != [0, 0] {
        return Err(Error::Config("trajectory must start at X_0 = (0, 0)".into()));
    }
    Ok(crate::simulate::Trajectory { states, seed: 0 })
}

fn estimate_row(csv: &mut String, n: usize, seed: u64, est: &crate::estimate::ClsEstimate) {
    let (a11, a12, a21, a22) = match est.m_hat {
        Some(m) => (
            Some(m.0[0][0]),
            Some(m.0[0][1]),
            Some(m.0[1][0]),
            Some(m.0[1][1]),
        ),
        None => (None, None, None, None),
    };
    writeln!(
        csv,
        "{n},{seed},{},{},{},{},{},{},{},{}",
        est.on_omega_n as u8,
        est.on_omega_tilde_n as u8,
        fmt_opt(a11),
        fmt_opt(a12),
        fmt_opt(a21),
        fmt_opt(a22),
        fmt_opt(est.rho_hat),
        est.det_a,
    )
    .expect("string write");
}

fn cmd_estimate(args: &CommonArgs) -> Result<()> {
    let r = resolve(args)?;
    let mut csv =
        String::from("n,seed,exists,disc_ok,a11_hat,a12_hat,a21_hat,a22_hat,rho_hat,det_a\n");
    if let Some(path) = &r.config.trajectory {
        let traj = parse_trajectory_csv(path)?;
        let est = estimate_from_trajectory(&traj, &r.model);
        estimate_row(&mut csv, traj.len(), r.seed, &est);
        return emit(&r.out, &csv);
    }
    let n = require(r.config.n, "n")?;
    let reps = require(r.config.reps, "reps")?;
    let opts = sim_options(&r.config);
    for rep in 0..reps {
        let seed = crate::mcharness::replication_seed(r.seed, rep as u64);
        let traj = simulate_gwi_with(&r.model, n, seed, &opts)?;
        let est = estimate_from_trajectory(&traj, &r.model);
        estimate_row(&mut csv, n, seed, &est);
    }
    emit(&r.out, &csv)
}

fn cmd_limit_sample(args: &CommonArgs) -> Result<()> {
    let r = resolve(args)?;
    let reps = require(r.config.reps, "reps")?;
    let functional = require(r.config.functional, "functional")?;
    let cfg = sde_config(&r)?;
    let result = run_limit_mc(&cfg, reps, r.workers, functional.to_functional())?;
    let mut csv = String::from("seed,functional,value\n");
    for v in &result.dist.values {
        writeln!(csv, "{},{},{v}", r.seed, functional.name()).expect("string write");
    }
    emit(&r.out, &csv)
}

/// Report JSON for `mc-compare`.
#[derive(Debug, Serialize)]
struct CompareReport {
    statistic: StatisticName,
    reps: usize,
    failures: FailureCounts,
    ks: f64,
    quantile_levels: [f64; 7],
    quantiles: QuantilePair,
    runtime_seconds: f64,
}

#[derive(Debug, Serialize)]
struct FailureCounts {
    estimator: usize,
    limit: usize,
    resamples: usize,
}

#[derive(Debug, Serialize)]
struct QuantilePair {
    estimator: [f64; 7],
    limit: [f64; 7],
}

fn cmd_mc_compare(args: &CommonArgs) -> Result<()> {
    let start = std::time::Instant::now();
    let r = resolve(args)?;
    let n = require(r.config.n, "n")?;
    let reps = require(r.config.reps, "reps")?;
    let statistic = require(r.config.statistic, "statistic")?;
    let functional = statistic.paired_functional()?;
    let mc = McConfig {
        reps,
        n,
        seed: r.seed,
        dt: r.config.dt.unwrap_or(DEFAULT_DT),
        workers: r.workers,
    };
    let est_side = run_estimator_mc(&r.model, &mc, statistic.to_statistic())?;
    let cfg = sde_config(&r)?;
    let lim_side = run_limit_mc(&cfg, reps, r.workers, functional)?;
    if est_side.count() == 0 || lim_side.dist.count() == 0 {
        return Err(Error::Config(format!(
            "no successful replications to compare (estimator failures: {}, limit failures: {})",
            est_side.failures, lim_side.dist.failures
        )));
    }
    let comparison = compare(&est_side, &lim_side.dist);
    let report = CompareReport {
        statistic,
        reps,
        failures: FailureCounts {
            estimator: est_side.failures,
            limit: lim_side.dist.failures,
            resamples: lim_side.resamples,
        },
        ks: comparison.ks,
        quantile_levels: QUANTILE_LEVELS,
        quantiles: QuantilePair {
            estimator: quantile_table(&est_side),
            limit: quantile_table(&lim_side.dist),
        },
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    emit(&r.out, &format!("{json}\n"))
}

#[derive(Debug, Serialize)]
struct MomentsReport {
    state: [u64; 2],
    reps: usize,
    conditional_variance: crate::mcharness::CondVarReport,
    third_moment: crate::mcharness::ThirdMomentReport,
    runtime_seconds: f64,
}

fn cmd_moments_check(args: &CommonArgs) -> Result<()> {
    let start = std::time::Instant::now();
    let r = resolve(args)?;
    let state = require(r.config.state, "state")?;
    let reps = require(r.config.reps, "reps")?;
    let conditional_variance =
        conditional_variance_check(&r.model, state, reps, r.seed, r.workers)?;
    let third_moment = third_moment_check(&r.model, state, reps, r.seed, r.workers)?;
    let report = MomentsReport {
        state,
        reps,
        conditional_variance,
        third_moment,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    emit(&r.out, &format!("{json}\n"))
}

fn cmd_validate_laws(args: &CommonArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let model = config.model.build()?;
    let diagnostics = model_diagnostics(&model);
    let json = serde_json::to_string_pretty(&diagnostics).expect("serializable diagnostics");
    emit(&args.out, &format!("{json}\n"))
}

/// Dispatch a parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::LimitSample(args) => cmd_limit_sample(args),
        Command::McCompare(args) => cmd_mc_compare(args),
        Command::MomentsCheck(args) => cmd_moments_check(args),
        Command::ValidateLaws(args) => cmd_validate_laws(args),
    }
}

/// Map an error to the documented exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::PopulationCap { .. } | Error::Io(_) => 3,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_spec_presets() {
        let spec: ModelSpec = serde_json::from_str("\"modelA\"").unwrap();
        assert!(spec.build().is_ok());
        let spec: ModelSpec = serde_json::from_str("\"modelX\"").unwrap();
        assert!(matches!(spec.build(), Err(Error::Config(_))));
    }

    #[test]
    fn run_config_rejects_unknown_fields() {
        let err = serde_json::from_str::<RunConfig>(r#"{"model":"modelA","bogus":1}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn run_config_parses_explicit_laws() {
        let json = r#"{
            "model": {
                "offspring1": {"atoms":[{"x":[0,0],"p":0.5},{"x":[1,1],"p":0.5}]},
                "offspring2": {"atoms":[{"x":[0,0],"p":0.5},{"x":[1,1],"p":0.5}]},
                "immigration": {"atoms":[{"x":[1,0],"p":0.5},{"x":[0,1],"p":0.5}]}
            },
            "seed": 7,
            "n": 100
        }"#;
        let config: RunConfig = serde_json::from_str(json).unwrap();
        let model = config.model.build().unwrap();
        let d = crate::mcharness::model_diagnostics(&model);
        assert!(d.degeneracy.unwrap().vbar_v.abs() < 1e-14);
    }

    #[test]
    fn statistic_pairing() {
        assert_eq!(
            StatisticName::NRhoMinusOne.paired_functional().unwrap(),
            LimitFunctional::Rho
        );
        assert!(StatisticName::SqrtNRhoMinusRho.paired_functional().is_err());
    }
}
