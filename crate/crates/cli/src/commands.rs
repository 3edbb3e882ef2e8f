//! The four batch commands. Each writes its CSV artifacts and a manifest
//! into the output directory and returns the paths written.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use gmwb_core::{
    build_grid, fair_fee, policy_ratio_export, run_policy_with, simulate_paths, value_contract, FeeOutcome,
    ScenarioStats, SolveResult,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::cells::Cell;
use crate::config::{FeeChoice, RunConfig};
use crate::error::CliError;

pub const NA: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Price,
    FairFee,
    Policy,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Price => "price",
            Command::FairFee => "fair-fee",
            Command::Policy => "policy",
            Command::Simulate => "simulate",
        }
    }
}

/// Calibrations shared between commands run in one process. Entries are
/// keyed by everything that determines the outcome.
#[derive(Debug, Default)]
pub struct Session {
    fees: Mutex<HashMap<String, (FeeOutcome, Duration)>>,
    reused: Mutex<Duration>,
}

impl Session {
    pub fn calibrate(&self, cfg: &RunConfig, cell: &Cell) -> Result<FeeOutcome, CliError> {
        let key = format!(
            "{:?}",
            (cell.spec(&cfg.contract.spec(), 0.0), cfg.market, cfg.grid, cell.strategy, cfg.fee_search)
        );
        if let Some((outcome, took)) = self.fees.lock().unwrap().get(&key) {
            *self.reused.lock().unwrap() += *took;
            return Ok(outcome.clone());
        }
        let start = Instant::now();
        let outcome = calibrate_cell(cfg, cell)?;
        self.fees.lock().unwrap().insert(key, (outcome.clone(), start.elapsed()));
        Ok(outcome)
    }

    /// Time originally spent on calibrations served from the cache since
    /// the last call.
    pub fn take_reused_time(&self) -> Duration {
        std::mem::take(&mut *self.reused.lock().unwrap())
    }

    /// Every calibration performed so far.
    pub fn outcomes(&self) -> Vec<FeeOutcome> {
        self.fees.lock().unwrap().values().map(|(o, _)| o.clone()).collect()
    }
}

/// Runs `command` and writes its artifacts under `out`.
pub fn execute(command: Command, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    execute_in(&Session::default(), command, cfg, out)
}

pub fn execute_in(session: &Session, command: Command, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out)?;
    let mut files = match command {
        Command::Price => cmd_price(session, cfg, out)?,
        Command::FairFee => cmd_fair_fee(session, cfg, out)?,
        Command::Policy => cmd_policy(session, cfg, out)?,
        Command::Simulate => cmd_simulate(session, cfg, out)?,
    };
    files.push(write_manifest(command, cfg, out, &files)?);
    Ok(files)
}

/// Fee used for a cell and how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFee {
    pub status: &'static str,
    pub fee_bps: Option<f64>,
}

impl CellFee {
    pub fn from_outcome(outcome: &FeeOutcome) -> Self {
        match outcome {
            FeeOutcome::Fair { fee_bps, .. } => CellFee {
                status: "fair",
                fee_bps: Some(*fee_bps),
            },
            FeeOutcome::NotViable { .. } => CellFee {
                status: "not_viable",
                fee_bps: None,
            },
            FeeOutcome::CapTooLow { .. } => CellFee {
                status: "cap_too_low",
                fee_bps: None,
            },
        }
    }
}

pub fn calibrate_cell(cfg: &RunConfig, cell: &Cell) -> Result<FeeOutcome, CliError> {
    let spec = cell.spec(&cfg.contract.spec(), 0.0);
    let grid = build_grid(&spec, &cfg.grid)?;
    Ok(fair_fee(&spec, &cfg.market_params(), &grid, cell.strategy, &cfg.fee_search)?)
}

pub fn resolve_fee(session: &Session, cfg: &RunConfig, cell: &Cell) -> Result<CellFee, CliError> {
    match cfg.contract.fee_bps {
        FeeChoice::Fixed(bps) => Ok(CellFee {
            status: "fixed",
            fee_bps: Some(bps),
        }),
        FeeChoice::Keyword(_) => Ok(CellFee::from_outcome(&session.calibrate(cfg, cell)?)),
    }
}

pub fn solve_cell(cfg: &RunConfig, cell: &Cell, fee_bps: f64) -> Result<SolveResult, CliError> {
    let spec = cell.spec(&cfg.contract.spec(), fee_bps);
    let grid = build_grid(&spec, &cfg.grid)?;
    Ok(value_contract(&spec, &cfg.market_params(), &grid, cell.strategy)?)
}

/// Replays the solved policy on the configured path batch.
pub fn simulate_cell(
    cfg: &RunConfig,
    cell: &Cell,
    fee_bps: f64,
    solve: &SolveResult,
) -> Result<ScenarioStats, CliError> {
    let spec = cell.spec(&cfg.contract.spec(), fee_bps);
    let market = cfg.market_params();
    let sim = &cfg.simulation;
    let batch = simulate_paths(sim.n_paths, sim.seed, &market, &spec)?;
    Ok(run_policy_with(&batch, solve, &spec, &market, sim.lookup)?)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn bps(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |v| format!("{v:.4}"))
}

const CELL_COLUMNS: [&str; 7] = ["config_hash", "cell", "strategy", "cash_fund", "cash_rate", "ratchet", "tax_rate"];

fn cell_fields(hash: &str, cell: &Cell) -> Vec<String> {
    vec![
        hash.to_string(),
        cell.label(),
        cell.strategy.to_string(),
        cell.cash_fund.to_string(),
        cell.cash_rate.map(num).unwrap_or_default(),
        cell.ratchet.to_string(),
        num(cell.tax_rate),
    ]
}

fn write_table(path: &Path, extra: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CELL_COLUMNS.iter().chain(extra))?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

fn for_cells<T: Send>(
    cfg: &RunConfig,
    f: impl Fn(&Cell) -> Result<T, CliError> + Sync,
) -> Result<Vec<(Cell, T)>, CliError> {
    cfg.cells()
        .into_par_iter()
        .map(|cell| f(&cell).map(|t| (cell, t)))
        .collect()
}

pub fn cmd_price(session: &Session, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let hash = cfg.hash();
    let priced = for_cells(cfg, |cell| {
        let fee = resolve_fee(session, cfg, cell)?;
        let solve = fee.fee_bps.map(|f| solve_cell(cfg, cell, f)).transpose()?;
        Ok((fee, solve))
    })?;
    let rows: Vec<Vec<String>> = priced
        .iter()
        .map(|(cell, (fee, solve))| {
            let mut row = cell_fields(&hash, cell);
            row.extend([
                fee.status.to_string(),
                bps(fee.fee_bps),
                solve.as_ref().map_or(NA.into(), |s| num(s.value_at_inception)),
                solve.as_ref().map_or(NA.into(), |s| s.clamp_count.to_string()),
            ]);
            row
        })
        .collect();
    let path = write_table(&out.join("price.csv"), &["fee_status", "fee_bps", "value", "clamp_count"], &rows)?;
    Ok(vec![path])
}

pub fn cmd_fair_fee(session: &Session, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let hash = cfg.hash();
    let outcomes = for_cells(cfg, |cell| session.calibrate(cfg, cell))?;
    let (n_x, n_gamma, n_tau) = (cfg.grid.n_x, cfg.grid.n_gamma, cfg.grid.n_tau);
    let mut rows = Vec::new();
    let mut sweep_rows = Vec::new();
    for (cell, outcome) in &outcomes {
        let fee = CellFee::from_outcome(outcome);
        let residual = match outcome {
            FeeOutcome::Fair { residual, .. } => num(*residual),
            _ => NA.into(),
        };
        let sweeps = outcome.sweeps();
        let mut row = cell_fields(&hash, cell);
        row.extend([
            fee.status.to_string(),
            bps(fee.fee_bps),
            residual,
            sweeps.is_monotone().to_string(),
            sweeps.sign_changes().to_string(),
            n_x.to_string(),
            n_gamma.to_string(),
            n_tau.to_string(),
        ]);
        rows.push(row);
        for (stage, points) in [("coarse", &sweeps.coarse), ("refined", &sweeps.refined)] {
            for p in points.iter() {
                let mut row = cell_fields(&hash, cell);
                row.extend([stage.to_string(), num(p.fee_bps), num(p.value), num(p.gap)]);
                sweep_rows.push(row);
            }
        }
    }
    Ok(vec![
        write_table(
            &out.join("fair_fee.csv"),
            &["status", "fee_bps", "residual", "sweep_monotone", "sign_changes", "n_x", "n_gamma", "n_tau"],
            &rows,
        )?,
        write_table(&out.join("fair_fee_sweeps.csv"), &["stage", "fee_bps", "value", "gap"], &sweep_rows)?,
    ])
}

fn write_surface(path: &Path, x: &[f64], gamma: &[f64], values: &ndarray::Array2<f64>) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("x".to_string()).chain(gamma.iter().map(|g| num(*g))))?;
    for (i, xi) in x.iter().enumerate() {
        w.write_record(std::iter::once(num(*xi)).chain(values.row(i).iter().map(|v| num(*v))))?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

pub fn cmd_policy(session: &Session, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate_dates()?;
    let hash = cfg.hash();
    let solved = for_cells(cfg, |cell| {
        let fee = resolve_fee(session, cfg, cell)?;
        let solve = fee.fee_bps.map(|f| solve_cell(cfg, cell, f)).transpose()?;
        Ok((fee, solve))
    })?;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for (cell, (fee, solve)) in &solved {
        let dir = out.join("policy").join(cell.label());
        let mut written = Vec::new();
        if let Some(solve) = solve {
            fs::create_dir_all(&dir)?;
            for &date in &cfg.policy.dates {
                let r = policy_ratio_export(solve, date)?;
                for (name, values) in [("w_guar", &r.to_guaranteed), ("w_max", &r.to_max)] {
                    let path = write_surface(&dir.join(format!("{name}_t{date}.csv")), &r.x, &r.gamma, values)?;
                    written.push(relative(out, &path));
                    files.push(path);
                }
            }
        }
        let mut row = cell_fields(&hash, cell);
        row.extend([fee.status.to_string(), bps(fee.fee_bps), written.join(";")]);
        rows.push(row);
    }
    files.insert(0, write_table(&out.join("policy_index.csv"), &["fee_status", "fee_bps", "files"], &rows)?);
    Ok(files)
}

pub const SIMULATION_COLUMNS: [&str; 15] = [
    "fee_status",
    "fee_bps",
    "surrender_rate",
    "avg_surrender_time",
    "avg_duration",
    "no_withdrawal",
    "below_guarantee",
    "at_guarantee",
    "excess",
    "mc_value",
    "mc_std_error",
    "dp_value",
    "n_paths",
    "seed",
    "clamped_lookups",
];

pub fn simulation_fields(fee: &CellFee, result: Option<(&SolveResult, &ScenarioStats)>) -> Vec<String> {
    let mut row = vec![fee.status.to_string(), bps(fee.fee_bps)];
    match result {
        Some((solve, s)) => row.extend([
            num(s.surrender_rate),
            s.avg_surrender_time.map_or(NA.into(), num),
            num(s.avg_duration),
            num(s.mix.none),
            num(s.mix.below),
            num(s.mix.at),
            num(s.mix.excess),
            num(s.mc_value),
            num(s.mc_std_error),
            num(solve.value_at_inception),
            s.n_paths.to_string(),
            s.seed.to_string(),
            s.clamped.to_string(),
        ]),
        None => row.extend(std::iter::repeat_n(NA.to_string(), SIMULATION_COLUMNS.len() - 2)),
    }
    row
}

pub fn cmd_simulate(session: &Session, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let hash = cfg.hash();
    let results = for_cells(cfg, |cell| {
        let fee = resolve_fee(session, cfg, cell)?;
        let run = match fee.fee_bps {
            Some(f) => {
                let solve = solve_cell(cfg, cell, f)?;
                let stats = simulate_cell(cfg, cell, f, &solve)?;
                Some((solve, stats))
            }
            None => None,
        };
        Ok((fee, run))
    })?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|(cell, (fee, run))| {
            let mut row = cell_fields(&hash, cell);
            row.extend(simulation_fields(fee, run.as_ref().map(|(a, b)| (a, b))));
            row
        })
        .collect();
    Ok(vec![write_table(&out.join("simulate.csv"), &SIMULATION_COLUMNS, &rows)?])
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

fn write_manifest(command: Command, cfg: &RunConfig, out: &Path, files: &[PathBuf]) -> Result<PathBuf, CliError> {
    let manifest = Manifest {
        command: command.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        outputs: files.iter().map(|f| relative(out, f)).collect(),
        config: cfg,
    };
    let path = out.join(format!("manifest_{}.toml", command.name()));
    fs::write(&path, toml::to_string(&manifest).expect("manifest serialises"))?;
    Ok(path)
}
