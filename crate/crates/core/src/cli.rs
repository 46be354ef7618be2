//! Command-line front end. [`run`] parses arguments, dispatches a
//! subcommand and returns the process exit code: 0 on success, 1 when a
//! model, data or diagnostics check fails, 2 on a usage error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::dsem::{simulate, Coefficient, DsemError, DsemSpec, TimeseriesTable};
use crate::inference::{dsem_residual_report, fit, FitOptions, FitResult, InferenceError};
use crate::io::{load_data, load_model, write_series, Dataset, IoError, Model, TransformStats};
use crate::optim::LmOptions;
use crate::sheaf_builder::{ArChoice, BuildError, DsemSheaf, DsemSheafOptions};
use crate::subsystems::{
    in_closed_sets, subsystem_sheaf, DsemDag, SubsystemError, SubsystemLattice,
};
use crate::topology::{
    check_functoriality, consistency_radius, AssignmentJson, PairScope, TopologyError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Dsem(#[from] DsemError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Subsystem(#[from] SubsystemError),
    #[error("{path}: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dsem-sheaf",
    version,
    about = "Fit, check and decompose dynamic structural equation models as sheaves"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the model and write the series as CSV.
    Simulate(SimulateArgs),
    /// Estimate free coefficients and fill in missing data.
    Fit(FitArgs),
    /// Extend the series forward or backward in time.
    Predict(PredictArgs),
    /// Fill in missing data with every coefficient held fixed.
    Impute(ImputeArgs),
    /// Rank the contributions to the consistency radius.
    Residuals(ResidualArgs),
    /// Print the lattice of in-closed variable sets.
    Subsystems(SubsystemArgs),
    /// Validate a model, its sheaf, and optionally an assignment.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Starting value per variable, comma separated (default all 1).
    #[arg(long, value_delimiter = ',')]
    pub init: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub start_time: i64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct SheafArgs {
    /// AR order for every variable; 0 turns AR parts off. Defaults to each
    /// variable's `ar_order`.
    #[arg(long)]
    pub ar: Option<usize>,
    /// Estimate every path coefficient, ignoring values in the model.
    #[arg(long)]
    pub free_paths: bool,
    /// Sum the radius over covering pairs only.
    #[arg(long)]
    pub hasse_only: bool,
    /// Let copies of a variable move independently.
    #[arg(long)]
    pub no_ties: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturbed restarts in addition to the first start.
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub gradient_tol: Option<f64>,
    #[arg(long)]
    pub step_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub sheaf: SheafArgs,
    /// JSON report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Completed series as CSV.
    #[arg(long)]
    pub series_out: Option<PathBuf>,
    /// Write the series on the original scale of transformed variables.
    #[arg(long)]
    pub original_scale: bool,
    /// Global assignment as JSON, readable by `check --assignment`.
    #[arg(long)]
    pub assignment_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Number of time steps to add.
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    #[arg(long, conflicts_with = "backward")]
    pub forward: bool,
    #[arg(long)]
    pub backward: bool,
    #[command(flatten)]
    pub sheaf: SheafArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub original_scale: bool,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// A `fit` report whose estimates replace free coefficients.
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    #[arg(long)]
    pub no_ties: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub original_scale: bool,
}

#[derive(Debug, Args)]
pub struct ResidualArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report on this assignment instead of fitting one.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    #[command(flatten)]
    pub sheaf: SheafArgs,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SubsystemArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Graphviz destination.
    #[arg(long)]
    pub dot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Data to build the sheaf for; with numeric coefficients and no
    /// `--assignment`, the induced assignment is tested.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    #[command(flatten)]
    pub sheaf: SheafArgs,
    /// Largest radius accepted as a section.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs the command line with process arguments, printing to stdout and
/// stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one parsed subcommand, writing default output to `stdout`. Returns
/// the exit code for completed runs.
pub fn execute(command: Command, stdout: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::Fit(a) => cmd_fit(a, stdout),
        Command::Predict(a) => cmd_predict(a, stdout),
        Command::Impute(a) => cmd_impute(a, stdout),
        Command::Residuals(a) => cmd_residuals(a, stdout),
        Command::Subsystems(a) => cmd_subsystems(a, stdout),
        Command::Check(a) => cmd_check(a, stdout),
    }
}

fn emit(
    path: Option<&Path>,
    stdout: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let out = |source| CliError::Output {
                path: p.display().to_string(),
                source,
            };
            let mut w = BufWriter::new(File::create(p).map_err(out)?);
            f(&mut w)?;
            w.flush().map_err(out)
        }
        None => f(stdout),
    }
}

fn emit_json(
    path: Option<&Path>,
    stdout: &mut dyn Write,
    value: &impl Serialize,
) -> Result<(), CliError> {
    emit(path, stdout, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w).map_err(|source| CliError::Output {
            path: "<stdout>".into(),
            source,
        })
    })
}

fn emit_series(
    path: Option<&Path>,
    stdout: &mut dyn Write,
    table: &TimeseriesTable,
    stats: Option<&[TransformStats]>,
) -> Result<(), CliError> {
    emit(path, stdout, |w| Ok(write_series(w, table, stats)?))
}

fn cmd_simulate(a: SimulateArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let model = load_model(&a.model)?;
    let n = model.spec.num_variables();
    let init = a.init.unwrap_or_else(|| vec![1.0; n]);
    if init.len() != n {
        return Err(CliError::Usage(format!(
            "--init needs {n} values, got {}",
            init.len()
        )));
    }
    let table = simulate(&model.spec, a.steps, a.noise, a.seed, &init)?;
    let times = table.times().iter().map(|t| t + a.start_time).collect();
    let columns = (0..n).map(|v| table.column(v).to_vec()).collect();
    let table = TimeseriesTable::from_columns(times, table.names().to_vec(), columns)?;
    emit_series(a.out.as_deref(), stdout, &table, None)?;
    Ok(0)
}

fn prepared_spec(model: &Model, args: &SheafArgs) -> DsemSpec {
    if args.free_paths {
        model.spec.clone().with_free_paths()
    } else {
        model.spec.clone()
    }
}

fn build_sheaf(
    spec: &DsemSpec,
    model: &Model,
    args: &SheafArgs,
    data: &TimeseriesTable,
) -> Result<DsemSheaf, CliError> {
    let ar = match args.ar {
        Some(k) => ArChoice::Uniform(k),
        None => ArChoice::Spec,
    };
    build_sheaf_with(spec, model, args, data, ar)
}

fn build_sheaf_with(
    spec: &DsemSpec,
    model: &Model,
    args: &SheafArgs,
    data: &TimeseriesTable,
    ar: ArChoice,
) -> Result<DsemSheaf, CliError> {
    let mut opts = DsemSheafOptions::new(data.len())
        .time_labels(data.times().iter().map(|t| t.to_string()).collect())
        .ar(ar);
    if args.hasse_only {
        opts = opts.scope(PairScope::HasseOnly);
    }
    opts.p = model.p_norm;
    opts.observation_weights = model.weights.clone();
    Ok(DsemSheaf::build(spec, &opts)?)
}

fn fit_options(args: &SheafArgs) -> FitOptions {
    let mut o = FitOptions {
        ties: !args.no_ties,
        ..FitOptions::default()
    };
    o.solve.seed = args.seed;
    o.solve.restarts = args.restarts;
    let d = LmOptions::default();
    o.solve.lm = LmOptions {
        max_iterations: args.max_iterations.unwrap_or(d.max_iterations),
        gradient_tol: args.gradient_tol.unwrap_or(d.gradient_tol),
        step_tol: args.step_tol.unwrap_or(d.step_tol),
    };
    o
}

fn fit_report(
    dsem: &DsemSheaf,
    result: &FitResult,
    data: &Dataset,
    top: usize,
) -> Result<serde_json::Value, CliError> {
    let residuals = dsem_residual_report(dsem, &result.solve.assignment, data.table.times(), top)?;
    Ok(json!({
        "coefficients": result.coefficients,
        "ar_coefficients": result.ar_coefficients,
        "radius": result.solve.radius,
        "residual_top": residuals.top,
        "variables": residuals.variables,
        "diagnostics": result.solve.diagnostics,
        "transforms": data.stats,
    }))
}

fn cmd_fit(a: FitArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, &model)?;
    let spec = prepared_spec(&model, &a.sheaf);
    let dsem = build_sheaf(&spec, &model, &a.sheaf, &data.table)?;
    let result = fit(&dsem, &data.table, &fit_options(&a.sheaf))?;
    if let Some(p) = &a.series_out {
        emit_series(
            Some(p),
            stdout,
            &result.series,
            a.original_scale.then_some(data.stats.as_slice()),
        )?;
    }
    if let Some(p) = &a.assignment_out {
        emit_json(
            Some(p),
            stdout,
            &AssignmentJson::from_assignment(&dsem.sheaf, &result.solve.assignment),
        )?;
    }
    emit_json(
        a.out.as_deref(),
        stdout,
        &fit_report(&dsem, &result, &data, a.top)?,
    )?;
    Ok(0)
}

/// Adds `horizon` empty rows after (or before) the data, continuing the
/// time step of the last (or first) two rows.
fn extend_table(
    table: &TimeseriesTable,
    horizon: usize,
    backward: bool,
) -> Result<TimeseriesTable, CliError> {
    let t = table.times();
    if t.is_empty() {
        return Err(CliError::Usage("data has no rows".into()));
    }
    let step = |a: usize, b: usize| if t.len() > 1 { t[b] - t[a] } else { 1 };
    let n = table.num_variables();
    let (times, pad_front): (Vec<i64>, bool) = if backward {
        let s = step(0, 1);
        (
            (1..=horizon as i64)
                .rev()
                .map(|k| t[0] - k * s)
                .chain(t.iter().copied())
                .collect(),
            true,
        )
    } else {
        let s = step(t.len() - 2.min(t.len() - 1), t.len() - 1);
        (
            t.iter()
                .copied()
                .chain((1..=horizon as i64).map(|k| t[t.len() - 1] + k * s))
                .collect(),
            false,
        )
    };
    let pad = vec![f64::NAN; horizon];
    let columns = (0..n)
        .map(|v| {
            let col: Vec<f64> = (0..table.len())
                .map(|r| table.get(v, r).unwrap_or(f64::NAN))
                .collect();
            if pad_front {
                pad.iter().chain(&col).copied().collect()
            } else {
                col.iter().chain(&pad).copied().collect()
            }
        })
        .collect();
    Ok(TimeseriesTable::from_columns(
        times,
        table.names().to_vec(),
        columns,
    )?)
}

fn cmd_predict(a: PredictArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, &model)?;
    let extended = extend_table(&data.table, a.horizon, a.backward)?;
    let spec = prepared_spec(&model, &a.sheaf);
    let dsem = build_sheaf(&spec, &model, &a.sheaf, &extended)?;
    let result = fit(&dsem, &extended, &fit_options(&a.sheaf))?;
    emit_series(
        a.out.as_deref(),
        stdout,
        &result.series,
        a.original_scale.then_some(data.stats.as_slice()),
    )?;
    Ok(0)
}

#[derive(serde::Deserialize)]
struct ReportIn {
    coefficients: Vec<ReportPath>,
    #[serde(default)]
    ar_coefficients: Vec<ReportAr>,
}

#[derive(serde::Deserialize)]
struct ReportPath {
    from: String,
    to: String,
    lag: usize,
    value: f64,
}

#[derive(serde::Deserialize)]
struct ReportAr {
    variable: String,
    coefficients: Vec<f64>,
}

/// The model with every coefficient fixed: free paths take the report's
/// estimates and AR parts become self-edges with the reported values.
fn frozen_spec(model: &Model, report: Option<&Path>) -> Result<DsemSpec, CliError> {
    let spec = &model.spec;
    let names = spec.variables();
    let mut b = DsemSpec::builder(names)
        .h(spec.h())
        .lags(spec.lags().to_vec());
    let mut lags: Vec<usize> = spec.lags().to_vec();
    let report: Option<ReportIn> = match report {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::Output {
                path: p.display().to_string(),
                source,
            })?;
            Some(serde_json::from_str(&text)?)
        }
        None => None,
    };
    let mut self_edges = std::collections::BTreeSet::new();
    for e in spec.edges() {
        let (from, to) = (&names[e.source], &names[e.target]);
        let value = match e.coefficient {
            Coefficient::Fixed(v) => v,
            Coefficient::Free => report
                .as_ref()
                .and_then(|r| {
                    r.coefficients
                        .iter()
                        .find(|c| &c.from == from && &c.to == to && c.lag == e.lag)
                })
                .map(|c| c.value)
                .ok_or_else(|| {
                    CliError::Failed(format!(
                        "no value for free coefficient {from} -> {to} (lag {})",
                        e.lag
                    ))
                })?,
        };
        if e.is_autoregressive() {
            self_edges.insert((e.source, e.lag));
        }
        b = b.edge(from, to, e.lag, Coefficient::Fixed(value));
    }
    for ar in report.iter().flat_map(|r| &r.ar_coefficients) {
        let v = spec.variable_index(&ar.variable)?;
        for (l, &c) in ar.coefficients.iter().enumerate() {
            if !self_edges.contains(&(v, l + 1)) {
                b = b.edge(&ar.variable, &ar.variable, l + 1, Coefficient::Fixed(c));
                if !lags.contains(&(l + 1)) {
                    lags.push(l + 1);
                }
            }
        }
    }
    lags.sort_unstable();
    Ok(b.lags(lags).build()?)
}

fn cmd_impute(a: ImputeArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, &model)?;
    let spec = frozen_spec(&model, a.coefficients.as_deref())?;
    let sheaf_args = SheafArgs {
        ar: None,
        free_paths: false,
        hasse_only: false,
        no_ties: a.no_ties,
        seed: a.seed,
        restarts: 4,
        max_iterations: None,
        gradient_tol: None,
        step_tol: None,
    };
    // AR parts come only from the frozen self-edges; without a report the
    // model's own dynamics (unit shift where no self-edge) apply.
    let ar = if a.coefficients.is_some() {
        ArChoice::PerVariable(
            (0..spec.num_variables())
                .map(|v| spec.self_edges(v).last().map_or(0, |e| e.0))
                .collect(),
        )
    } else {
        ArChoice::Dynamics
    };
    let dsem = build_sheaf_with(&spec, &model, &sheaf_args, &data.table, ar)?;
    let result = fit(&dsem, &data.table, &fit_options(&sheaf_args))?;
    emit_series(
        a.out.as_deref(),
        stdout,
        &result.series,
        a.original_scale.then_some(data.stats.as_slice()),
    )?;
    Ok(0)
}

fn cmd_residuals(a: ResidualArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, &model)?;
    let spec = prepared_spec(&model, &a.sheaf);
    let dsem = build_sheaf(&spec, &model, &a.sheaf, &data.table)?;
    let assignment = match &a.assignment {
        Some(p) => read_assignment(p, &dsem)?,
        None => {
            fit(&dsem, &data.table, &fit_options(&a.sheaf))?
                .solve
                .assignment
        }
    };
    let report = dsem_residual_report(&dsem, &assignment, data.table.times(), a.top)?;
    emit_json(a.out.as_deref(), stdout, &report)?;
    Ok(0)
}

fn read_assignment(path: &Path, dsem: &DsemSheaf) -> Result<crate::topology::Assignment, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Output {
        path: path.display().to_string(),
        source,
    })?;
    let json: AssignmentJson = serde_json::from_str(&text)?;
    let a = json.into_assignment(&dsem.sheaf)?;
    if !a.is_global() {
        return Err(CliError::Failed(
            "the assignment does not cover every cell".into(),
        ));
    }
    Ok(a)
}

fn cmd_subsystems(a: SubsystemArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let model = load_model(&a.model)?;
    let dag = DsemDag::from_spec(&model.spec)?;
    let sets = in_closed_sets(&dag)?;
    let lattice = SubsystemLattice::new(&dag, &sets);
    let commuting = if model.spec.has_free() {
        None
    } else {
        let s = subsystem_sheaf(&model.spec)?;
        Some(s.commuting_residual(&model.spec, 16, 0)?)
    };
    if let Some(p) = &a.dot {
        emit(Some(p), stdout, |w| {
            write!(w, "{}", lattice.to_dot()).map_err(|source| CliError::Output {
                path: p.display().to_string(),
                source,
            })
        })?;
    }
    let vertices: Vec<String> = (0..dag.len()).map(|v| dag.label(v)).collect();
    emit_json(
        a.out.as_deref(),
        stdout,
        &json!({ "vertices": vertices, "sets": lattice.sets, "hasse": lattice.hasse, "commuting_residual": commuting }),
    )?;
    Ok(0)
}

fn cmd_check(a: CheckArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let model = load_model(&a.model)?;
    let spec = prepared_spec(&model, &a.sheaf);
    let data = match &a.data {
        Some(p) => Some(load_data(p, &model)?),
        None => None,
    };
    let table = match &data {
        Some(d) => d.table.clone(),
        None => TimeseriesTable::missing(vec![0, 1, 2], spec.variables().to_vec()),
    };
    let dsem = build_sheaf(&spec, &model, &a.sheaf, &table)?;
    let functoriality = check_functoriality(&dsem.sheaf, 4, 1e-9, a.sheaf.seed);
    let mut ok = functoriality.is_clean();
    let assignment = match (&a.assignment, &data) {
        (Some(p), _) => Some(read_assignment(p, &dsem)?),
        (None, Some(d)) if !spec.has_free() => Some(dsem.induced_assignment(&d.table, &spec)?),
        _ => None,
    };
    let radius = match &assignment {
        Some(x) => Some(consistency_radius(&dsem.sheaf, x)?),
        None => None,
    };
    let section = radius.map(|r| r <= a.tol);
    ok &= section.unwrap_or(true);
    let report = json!({
        "cells": dsem.sheaf.len(),
        "restrictions": dsem.sheaf.restrictions().len(),
        "netlist_diagnostics": dsem.netlist.validate().len(),
        "functoriality": functoriality,
        "radius": radius,
        "section": section,
        "ok": ok,
    });
    emit_json(a.out.as_deref(), stdout, &report)?;
    Ok(if ok { 0 } else { 1 })
}
