//! The `surge` command line: law curves, grid search, fitting, plotting and
//! the oracle agreement suite.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 law violation, fit
//! failure or failed verification, 3 internal error.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use surge::fit::fit_records;
use surge::harness::{
    batch_sizes, empirical_optimal_lr, extract_se_points, grid_search, GridConfig,
};
use surge::io::{read_curves, read_runs, write_curves, write_runs, ModelFile};
use surge::laws::{curve, log_grid, CurveSource, LawParams, Variant};
use surge::verify::{run_verify, LawSet, VerifyOptions};
use surge::{Error, WorkloadSpec};

pub mod plot;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_LAW: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

pub const DEFAULT_VARIANTS: &str = "exact,surge,sgd_alpha_0.5,sgd_alpha_1,large_batch";

#[derive(Debug, Parser)]
#[command(
    name = "surge",
    version,
    about = "Batch size vs optimal learning rate for sign-based optimizers"
)]
pub struct Cli {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true, env = "SURGE_SEED")]
    pub seed: Option<u64>,

    /// Worker threads for grid search. Output does not depend on it.
    #[arg(long, global = true, env = "SURGE_JOBS", default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate law curves for a model file and write them as CSV.
    Predict(PredictArgs),
    /// Run a grid search and write one CSV row per run.
    Grid(GridArgs),
    /// Fit B_noise, S_min and ε_max to grid-search runs.
    Fit(FitArgs),
    /// Render runs and/or curves as a static SVG.
    Plot(PlotArgs),
    /// Check the closed forms against Monte Carlo oracles.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub b_min: f64,
    #[arg(long, default_value_t = 1e4)]
    pub b_max: f64,
    /// Number of log-spaced batch sizes.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    /// Comma-separated: exact, surge, sgd, sgd_alpha_<a>, linear, sqrt,
    /// large_batch, loss_improvement.
    #[arg(long, default_value = DEFAULT_VARIANTS)]
    pub variants: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Workload file; defaults to the grid file's `workload`, resolved
    /// relative to the grid file.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub runs: PathBuf,
    /// Target loss the runs were trained to, recorded in the output.
    #[arg(long)]
    pub target_loss: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Fit JSON; overlays the fitted surge and SGD laws.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Position of the B_noise marker; defaults to the fit, then the surge curve peak.
    #[arg(long)]
    pub b_noise: Option<f64>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::LawViolation(_) | Error::FitFailure { .. } => EXIT_LAW,
            _ => EXIT_USAGE,
        };
        let message = match &e {
            Error::FitFailure {
                residual_rms: Some(r),
                ..
            } => format!("{e} (residual rms {r:e})"),
            _ => e.to_string(),
        };
        CliError { code, message }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn in_file<T>(path: &Path, r: surge::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut c = CliError::from(e);
        c.message = format!("{}: {}", path.display(), c.message);
        c
    })
}

fn say(out: &mut dyn Write, line: impl fmt::Display) -> CliResult {
    writeln!(out, "{line}").map_err(|e| CliError::internal(format!("stdout: {e}")))
}

/// Parses a JSON file; errors name the offending field path.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        if field == "." {
            CliError::usage(format!("{}: {}", path.display(), e.inner()))
        } else {
            CliError::usage(format!(
                "{}: field `{field}`: {}",
                path.display(),
                e.inner()
            ))
        }
    })
}

pub fn parse_variants(list: &str) -> CliResult<Vec<Variant>> {
    let v: Vec<Variant> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Variant>())
        .collect::<surge::Result<_>>()?;
    if v.is_empty() {
        return Err(CliError::usage("empty variant list"));
    }
    Ok(v)
}

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    run_with_laws(cli, &LawSet::default(), out, err)
}

/// As [`run`], with the closed forms checked by `verify` swapped for `laws`.
pub fn run_with_laws(
    cli: &Cli,
    laws: &LawSet,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult {
    match &cli.command {
        Command::Predict(a) => predict(a, out),
        Command::Grid(a) => grid(cli, a, out, err),
        Command::Fit(a) => fit(a, out, err),
        Command::Plot(a) => plot_cmd(a, out),
        Command::Verify(a) => verify(cli, a, laws, out),
    }
}

fn predict(a: &PredictArgs, out: &mut dyn Write) -> CliResult {
    let variants = parse_variants(&a.variants)?;
    let model: ModelFile = read_json(&a.model)?;
    let inputs = in_file(&a.model, model.inputs())?;
    let grid = log_grid(a.b_min, a.b_max, a.points)?;
    let params = LawParams::from_inputs(&inputs)?;
    let curves = variants
        .iter()
        .map(|v| curve(CurveSource::Inputs(&inputs), *v, &grid))
        .collect::<surge::Result<Vec<_>>>()?;
    let mut w = create(&a.out)?;
    write_curves(&mut w, &curves)?;
    w.flush()
        .map_err(|e| CliError::usage(format!("{}: {e}", a.out.display())))?;

    say(out, format_args!("b_noise = {}", params.b_noise))?;
    say(out, format_args!("eps_max = {}", params.eps_max))?;
    match params.large_batch_lr {
        Some(v) => say(out, format_args!("large_batch_lr = {v}"))?,
        None => say(out, "large_batch_lr = undefined")?,
    }
    say(
        out,
        format_args!(
            "batch_size_bound_median = {}",
            inputs.batch_size_bound().median
        ),
    )
}

fn grid(cli: &Cli, a: &GridArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let cfg: GridConfig = read_json(&a.grid)?;
    let workload_path = match (&a.workload, &cfg.workload) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => a.grid.parent().unwrap_or(Path::new(".")).join(p),
        (None, None) => {
            return Err(CliError::usage(
                "no workload: pass --workload or set `workload` in the grid file",
            ))
        }
    };
    let spec: WorkloadSpec = read_json(&workload_path)?;
    let workload = in_file(&workload_path, spec.build())?;
    let resolved = in_file(&a.grid, cfg.resolve())?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);

    let output = grid_search(workload.as_ref(), &resolved, seed, cli.jobs);
    for f in &output.failures {
        let (b, lr, round) = resolved.cell(f.cell);
        writeln!(
            err,
            "cell {} (B={b}, lr={lr}, round={round}) failed: {}",
            f.cell, f.message
        )
        .map_err(|e| CliError::internal(format!("stderr: {e}")))?;
    }
    let mut w = create(&a.out)?;
    write_runs(&mut w, &output.records)?;
    w.flush()
        .map_err(|e| CliError::usage(format!("{}: {e}", a.out.display())))?;

    let converged = output.records.iter().filter(|r| r.converged).count();
    say(
        out,
        format_args!(
            "{} runs, {converged} converged, {} failed, seed {seed}",
            output.records.len(),
            output.failures.len()
        ),
    )?;
    say(out, "B\tlr*\tmean_final_loss")?;
    for b in batch_sizes(&output.records) {
        match empirical_optimal_lr(&output.records, b) {
            Ok((lr, loss)) => say(out, format_args!("{b}\t{lr}\t{loss}"))?,
            Err(_) => say(out, format_args!("{b}\t-\t-"))?,
        }
    }
    Ok(())
}

fn fit(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let records = in_file(&a.runs, read_runs(open(&a.runs)?))?;
    let mut result = match fit_records(&records) {
        Ok(f) => f,
        Err(e) => {
            if let Ok(points) = extract_se_points(&records) {
                for p in points {
                    let _ = writeln!(
                        err,
                        "B={} lr*={} S={} E={}",
                        p.batch_size, p.lr, p.steps, p.examples
                    );
                }
            }
            return Err(e.into());
        }
    };
    result.target_loss = a.target_loss;
    let mut w = create(&a.out)?;
    serde_json::to_writer_pretty(&mut w, &result)
        .map_err(|e| CliError::internal(format!("{}: {e}", a.out.display())))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::usage(format!("{}: {e}", a.out.display())))?;

    say(out, format_args!("b_noise = {}", result.b_noise))?;
    say(out, format_args!("s_min = {}", result.s_min))?;
    say(out, format_args!("e_min = {}", result.e_min))?;
    say(out, format_args!("eps_max_adam = {}", result.eps_max_adam))?;
    say(
        out,
        format_args!("eps_max_sgd_0.5 = {}", result.eps_max_sgd_05),
    )?;
    say(
        out,
        format_args!("eps_max_sgd_1 = {}", result.eps_max_sgd_10),
    )?;
    say(out, format_args!("residual_rms = {}", result.residual_rms))
}

fn plot_cmd(a: &PlotArgs, out: &mut dyn Write) -> CliResult {
    if a.curves.is_none() && a.runs.is_none() {
        return Err(CliError::usage(
            "nothing to plot: pass --curves and/or --runs",
        ));
    }
    let mut data = plot::PlotData {
        title: a.title.clone(),
        b_noise: a.b_noise,
        ..plot::PlotData::default()
    };
    if let Some(p) = &a.curves {
        data.curves = in_file(p, read_curves(open(p)?))?;
    }
    if let Some(p) = &a.runs {
        data.runs = in_file(p, read_runs(open(p)?))?;
    }
    if let Some(p) = &a.fit {
        data.fit = Some(read_json(p)?);
    }
    let svg = plot::render_svg(&data)?;
    std::fs::write(&a.out, svg)
        .map_err(|e| CliError::usage(format!("{}: {e}", a.out.display())))?;
    say(out, format_args!("wrote {}", a.out.display()))
}

fn verify(cli: &Cli, a: &VerifyArgs, laws: &LawSet, out: &mut dyn Write) -> CliResult {
    let seed = cli.seed.unwrap_or(0);
    let report = run_verify(seed, &VerifyOptions::default(), laws)
        .map_err(|e| CliError::internal(format!("verification could not run: {e}")))?;
    let text = report.render();
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::internal(format!("stdout: {e}")))?;
    if let Some(p) = &a.out {
        std::fs::write(p, &text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
    }
    if !report.passed() {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        return Err(CliError {
            code: EXIT_LAW,
            message: format!(
                "verification failed: {failed} of {} checks",
                report.checks.len()
            ),
        });
    }
    Ok(())
}
