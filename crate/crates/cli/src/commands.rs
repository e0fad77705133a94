use std::io::Write;
use std::path::Path;

use diffcast::analytic::{AnalyticReport, Evaluator, Mode};
use diffcast::experiments::{sensitivity, validation, ValidationOptions};
use diffcast::fmt::sig_digits;
use diffcast::params::{ProtocolParams, ScenarioParams, Strategy};
use diffcast::sim::{compare_strategies, simulate, simulate_run, CompareOptions, SlotTrace};
use diffcast::tuner::{tune_with, tune_with_trace};
use rayon::prelude::*;

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Model(#[from] diffcast::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(e) => match e {
                diffcast::Error::InvalidParam { .. } | diffcast::Error::Domain { .. } | diffcast::Error::Unsupported(_) => 2,
                diffcast::Error::Convergence { .. } => 1,
            },
            CliError::Infeasible(_) => 3,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

/// Header plus string rows, written as CSV.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_to(&self, out: impl Write) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_path(&self, path: Option<&Path>) -> Result<(), CliError> {
        match path {
            Some(p) => self.write_to(std::fs::File::create(p)?),
            None => self.write_to(std::io::stdout().lock()),
        }
    }
}

/// Number formatting at a fixed precision.
#[derive(Clone, Copy)]
struct Num(usize);

impl Num {
    fn f(self, x: f64) -> String {
        sig_digits(x, self.0)
    }

    fn opt(self, x: Option<f64>) -> String {
        x.map(|v| self.f(v)).unwrap_or_default()
    }
}

fn int(x: impl ToString) -> String {
    x.to_string()
}

const SCENARIO_COLUMNS: [&str; 10] =
    ["scenario_hash", "lambda", "load", "mu", "capacity", "element_bits", "gamma", "M", "ber", "p_thresh"];

fn scenario_cells(s: &ScenarioParams, n: Num) -> Vec<String> {
    vec![
        format!("{:016x}", s.stable_hash()),
        n.f(s.lambda),
        n.f(s.load().load),
        n.f(s.mu),
        int(s.capacity),
        int(s.element_size.bits()),
        n.f(s.gamma),
        int(s.neighbor_count()),
        s.neighbors.iter().map(|&b| n.f(b)).collect::<Vec<_>>().join(";"),
        n.f(s.p_thresh),
    ]
}

fn protocol_cells(p: Option<&ProtocolParams>) -> Vec<String> {
    match p {
        Some(p) => vec![int(p.full_dump_period), int(p.retries_full), int(p.retries_diff)],
        None => vec![String::new(); 3],
    }
}

fn columns<'a>(tail: &[&'a str]) -> Vec<&'a str> {
    let mut h = SCENARIO_COLUMNS.to_vec();
    h.extend_from_slice(tail);
    h
}

fn diagnostics_cell(d: &[diffcast::Diagnostic]) -> String {
    d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Analytic report per grid point, for the fixed triple or the tuned one.
pub fn analyze(config: &ExperimentConfig, mode: Mode) -> Result<Output, CliError> {
    let grid = config.grid()?;
    let fixed = config.fixed_protocol()?;
    let options = config.tune_options();
    let n = Num(config.precision());
    let results: Vec<Result<(ScenarioParams, &str, Option<AnalyticReport>), CliError>> = grid
        .par_iter()
        .map(|g| {
            let ev = Evaluator::new(&g.scenario, mode)?;
            let (source, protocol) = match fixed {
                Some(p) => ("fixed", Some(p)),
                None => ("tuned", tune_with(&ev, &g.scenario, &options)?.best),
            };
            let report = protocol.map(|p| ev.report(&p)).transpose()?;
            Ok((g.scenario.clone(), source, report))
        })
        .collect();
    let mut table = Table::new(&columns(&[
        "mode",
        "strategy",
        "source",
        "N",
        "n_f",
        "n_d",
        "avg_r",
        "avg_d",
        "avg_v",
        "avg_v_bits",
        "p_f",
        "p_d",
        "p_hat_rel",
        "p_rel",
        "p_rel_all",
        "diagnostics",
    ]));
    let mut infeasible = Vec::new();
    for r in results {
        let (s, source, report) = r?;
        let mut row = scenario_cells(&s, n);
        row.push(int(mode));
        match &report {
            Some(rep) => {
                row.extend([int(rep.protocol.strategy), int(source)]);
                row.extend(protocol_cells(Some(&rep.protocol)));
                row.extend([
                    n.f(rep.avg_r),
                    n.f(rep.avg_d),
                    n.f(rep.avg_v),
                    n.f(rep.avg_v_bits()),
                    n.f(rep.p_f()),
                    n.f(rep.p_d()),
                    n.f(rep.p_hat_rel()),
                    n.f(rep.p_rel()),
                    n.f(rep.p_rel_all),
                    diagnostics_cell(&rep.diagnostics),
                ]);
            }
            None => {
                infeasible.push(format!("{:016x}", s.stable_hash()));
                row.extend([int(config.strategy()), int(source)]);
                row.extend(vec![String::new(); 13]);
            }
        }
        table.push(row);
    }
    Ok(Output { table, infeasible })
}

/// Rows plus the scenarios for which no triple met the target.
pub struct Output {
    pub table: Table,
    pub infeasible: Vec<String>,
}

impl From<Table> for Output {
    fn from(table: Table) -> Self {
        Output { table, infeasible: Vec::new() }
    }
}

/// Tuner result per grid point; optionally the full search trace.
pub fn tune(config: &ExperimentConfig, mode: Mode, trace: Option<&Path>) -> Result<Output, CliError> {
    let grid = config.grid()?;
    if trace.is_some() && grid.len() > 1 {
        return Err(ConfigError { path: "sweep".into(), message: "--trace needs a single scenario".into() }.into());
    }
    let options = config.tune_options();
    let n = Num(config.precision());
    let results: Vec<Result<_, CliError>> = grid
        .par_iter()
        .map(|g| {
            let (r, t) = tune_with_trace(&g.scenario, mode, &options)?;
            Ok((g.scenario.clone(), r, t))
        })
        .collect();
    let mut table = Table::new(&columns(&[
        "mode",
        "strategy",
        "feasible",
        "n_max",
        "period_bound",
        "N",
        "n_f",
        "n_d",
        "volume",
        "relevance",
        "evaluated",
        "diagnostics",
    ]));
    let mut infeasible = Vec::new();
    for r in results {
        let (s, result, candidates) = r?;
        if let Some(path) = trace {
            let mut t = Table::new(&["N", "n_f", "n_d", "volume", "relevance", "feasible"]);
            for c in &candidates {
                t.push(vec![
                    int(c.period),
                    int(c.retries_full),
                    int(c.retries_diff),
                    n.f(c.volume),
                    n.f(c.relevance),
                    int(c.feasible),
                ]);
            }
            t.write_path(Some(path))?;
        }
        if !result.feasible {
            infeasible.push(format!("{:016x}", s.stable_hash()));
        }
        let strategy = if options.max_period == Some(1) { Strategy::FullDumpOnly } else { Strategy::Incremental };
        let mut row = scenario_cells(&s, n);
        row.extend([int(mode), int(strategy), int(result.feasible), result.n_max.map(int).unwrap_or_default(), int(result.period_bound)]);
        row.extend(protocol_cells(result.best.as_ref()));
        row.extend([
            n.opt(result.best_volume),
            n.opt(result.best_relevance),
            int(result.evaluated),
            diagnostics_cell(&result.diagnostics),
        ]);
        table.push(row);
    }
    Ok(Output { table, infeasible })
}

/// Aggregate and per-run simulation rows per grid point.
pub fn simulate_cmd(config: &ExperimentConfig, trace: Option<&Path>) -> Result<Table, CliError> {
    let grid = config.grid()?;
    let protocol = config.fixed_protocol()?.ok_or_else(|| ConfigError {
        path: "protocol".into(),
        message: "simulation needs a fixed `period`, `retries_full` and `retries_diff`".into(),
    })?;
    if trace.is_some() && grid.len() > 1 {
        return Err(ConfigError { path: "sweep".into(), message: "--trace needs a single scenario".into() }.into());
    }
    let n = Num(config.precision());
    let mut table = Table::new(&columns(&[
        "strategy",
        "N",
        "n_f",
        "n_d",
        "horizon",
        "warmup",
        "runs",
        "seed",
        "cancel_transients",
        "row",
        "run",
        "volume",
        "relevance",
        "volume_ci_halfwidth",
        "relevance_ci_halfwidth",
        "mean_adds",
        "mean_dels",
    ]));
    for g in &grid {
        let sim = config.sim_config(&g.scenario)?;
        let report = simulate(&g.scenario, &protocol, &sim)?;
        let prefix = |row: &mut Vec<String>| {
            row.extend(scenario_cells(&g.scenario, n));
            row.push(int(protocol.strategy));
            row.extend(protocol_cells(Some(&protocol)));
            row.extend([int(sim.horizon), int(sim.warmup), int(sim.runs), int(sim.seed), int(sim.cancel_transients)]);
        };
        let mut row = Vec::new();
        prefix(&mut row);
        let adds = report.per_run.iter().map(|r| r.mean_adds).sum::<f64>() / f64::from(report.runs);
        let dels = report.per_run.iter().map(|r| r.mean_dels).sum::<f64>() / f64::from(report.runs);
        row.extend([
            int("aggregate"),
            String::new(),
            n.f(report.mean_volume),
            n.f(report.mean_relevance),
            n.f(report.volume_ci_halfwidth),
            n.f(report.relevance_ci_halfwidth),
            n.f(adds),
            n.f(dels),
        ]);
        table.push(row);
        for r in &report.per_run {
            let mut row = Vec::new();
            prefix(&mut row);
            row.extend([
                int("run"),
                int(r.run),
                n.f(r.volume),
                n.f(r.relevance),
                String::new(),
                String::new(),
                n.f(r.mean_adds),
                n.f(r.mean_dels),
            ]);
            table.push(row);
        }
        if let Some(path) = trace {
            let mut t = Table::new(&["slot", "kind", "size", "copies", "occupancy", "adds", "dels", "successes", "all_relevant"]);
            let mut obs = |s: &SlotTrace| {
                t.push(vec![
                    int(s.slot),
                    int(s.kind.name()),
                    int(s.size),
                    int(s.copies),
                    int(s.occupancy),
                    int(s.adds),
                    int(s.dels),
                    s.successes.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(";"),
                    int(u8::from(s.all_relevant)),
                ]);
            };
            simulate_run(&g.scenario, &protocol, &sim, 0, Some(&mut obs))?;
            t.write_path(Some(path))?;
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Compare,
    Validate,
    Sensitivity,
}

pub fn figures(config: &ExperimentConfig, figure: Figure, mode: Option<Mode>) -> Result<Table, CliError> {
    let base = config.base_scenario()?;
    let grids = config.figure_grids();
    let n = Num(config.precision());
    let echo = ["capacity", "element_bits", "gamma", "M", "ber", "p_thresh"];
    let echo_cells = |s: &ScenarioParams| {
        vec![
            int(s.capacity),
            int(s.element_size.bits()),
            n.f(s.gamma),
            int(s.neighbor_count()),
            s.neighbors.iter().map(|&b| n.f(b)).collect::<Vec<_>>().join(";"),
            n.f(s.p_thresh),
        ]
    };
    match figure {
        Figure::Compare => {
            let seed = config.seed().ok_or_else(|| ConfigError { path: "run.seed".into(), message: "a seed is required for simulation".into() })?;
            let mut options = CompareOptions::new(seed);
            options.runs = config.runs();
            options.measured_slots = grids.measured_slots;
            options.tune = config.tune_options();
            options.tune.max_period = None;
            options.cancel_transients = config.run.and_then(|r| r.cancel_transients).unwrap_or(true);
            let rows = compare_strategies(&base, &grids.loads, &grids.mus, &options)?;
            let mut head = vec!["load", "mu", "strategy", "volume", "relevance", "feasible", "N", "n_f", "n_d"];
            head.extend(echo);
            head.extend(["runs", "measured_slots", "seed"]);
            let mut t = Table::new(&head);
            for r in rows {
                let mut row = vec![n.f(r.load), n.f(r.mu), int(r.strategy), n.opt(r.volume), n.opt(r.relevance), int(r.feasible)];
                row.extend(protocol_cells(r.protocol.as_ref()));
                row.extend(echo_cells(&base));
                row.extend([int(options.runs), int(options.measured_slots), int(seed)]);
                t.push(row);
            }
            Ok(t)
        }
        Figure::Validate => {
            let seed = config.seed().ok_or_else(|| ConfigError { path: "run.seed".into(), message: "a seed is required for simulation".into() })?;
            let options = ValidationOptions {
                runs: config.runs(),
                measured_slots: grids.measured_slots,
                seed,
                tune: config.tune_options(),
            };
            let rows = validation(&base, &grids.loads, &grids.mus, &options)?;
            let mut head = vec![
                "load",
                "mu",
                "source",
                "volume",
                "relevance",
                "volume_ci_halfwidth",
                "relevance_ci_halfwidth",
                "feasible",
                "N",
                "n_f",
                "n_d",
            ];
            head.extend(echo);
            head.extend(["runs", "measured_slots", "seed"]);
            let mut t = Table::new(&head);
            for r in rows {
                let mut row = vec![
                    n.f(r.load),
                    n.f(r.mu),
                    int(r.source.name()),
                    n.opt(r.volume),
                    n.opt(r.relevance),
                    n.opt(r.volume_ci_halfwidth),
                    n.opt(r.relevance_ci_halfwidth),
                    int(r.feasible),
                ];
                row.extend(protocol_cells(r.protocol.as_ref()));
                row.extend(echo_cells(&base));
                row.extend([int(options.runs), int(options.measured_slots), int(seed)]);
                t.push(row);
            }
            Ok(t)
        }
        Figure::Sensitivity => {
            let mode = mode.unwrap_or(Mode::Asymptotic);
            let rows = sensitivity(&base, &grids.gammas, &grids.neighbor_counts, &grids.loss_levels, mode, &config.tune_options())?;
            let mut t = Table::new(&[
                "gamma",
                "M",
                "loss_at_capacity",
                "ratio",
                "N",
                "n_f",
                "n_d",
                "volume",
                "full_dump_volume",
                "feasible",
                "gamma_critical",
                "mode",
                "lambda",
                "mu",
                "capacity",
                "element_bits",
                "p_thresh",
            ]);
            for r in &rows {
                let critical = rows
                    .iter()
                    .filter(|o| o.neighbors == r.neighbors && o.loss_at_capacity == r.loss_at_capacity && o.feasible)
                    .map(|o| o.gamma)
                    .fold(None, |m: Option<f64>, g| Some(m.map_or(g, |m| m.max(g))));
                let mut row = vec![n.f(r.gamma), int(r.neighbors), n.f(r.loss_at_capacity), n.opt(r.ratio)];
                row.extend(protocol_cells(r.protocol.as_ref()));
                row.extend([
                    n.opt(r.volume),
                    n.opt(r.full_dump_volume),
                    int(r.feasible),
                    n.opt(critical),
                    int(mode),
                    n.f(base.lambda),
                    n.f(base.mu),
                    int(base.capacity),
                    int(base.element_size.bits()),
                    n.f(base.p_thresh),
                ]);
                t.push(row);
            }
            Ok(t)
        }
    }
}
