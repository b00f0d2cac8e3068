//! Command-line front end for `cswm-core`.
//!
//! Exit codes: 0 on success, 1 on usage, configuration, data or I/O errors,
//! 2 when the optimizer fails to converge.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cswm_core::data::{self, generate_synthetic_pair, DataFormat, SyntheticShiftSpec};
use cswm_core::eval::{run_cv_on, ExperimentConfig, ExperimentReport};
use cswm_core::model::{DomainGraphs, ModelJson, ObjectiveTerms};
use cswm_core::neighborhood::NeighborhoodGraph;
use cswm_core::optimizer::{fit, IterationRecord};
use cswm_core::{DomainDataset, Error};

#[derive(Debug, Parser)]
#[command(name = "cswm", version, about = "Common-space weighted transfer of linear classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the transfer model on a source/target pair.
    Fit(FitArgs),
    /// Cross-validate the model and the baselines over the labeled target points.
    Cv(CvArgs),
    /// Write a synthetic source/target pair as dense CSV.
    Synth(SynthArgs),
    /// Write the neighbor graphs of both domains as JSON.
    DumpGraph(GraphArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Standardize features jointly over both domains.
    #[arg(long)]
    standardize: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output file; defaults to the config's `output`, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-iteration records as JSON lines to `<out>.trace.jsonl`.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Report file; a TSV with the same stem is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the fold-assignment seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of folds evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Also write per-fold objective traces as JSON lines to `<out>.trace.jsonl`.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Synthetic pair description (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Prefix for `source.csv` and `target.csv`.
    #[arg(long)]
    out_prefix: String,
    /// Overrides the seed of the spec.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GraphArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FitOutput {
    model: ModelJson,
    pi: Vec<f64>,
    iterations: usize,
    objective: f64,
    terms: Option<ObjectiveTerms>,
    objective_trace: Vec<f64>,
}

#[derive(Serialize)]
struct Graphs<'a> {
    source: &'a NeighborhoodGraph,
    target: &'a NeighborhoodGraph,
}

#[derive(Serialize)]
struct CvTraceLine<'a> {
    method: &'a str,
    fold: usize,
    iteration: usize,
    objective: f64,
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Cv(args) => run_cv(args),
        Command::Synth(args) => run_synth(args),
        Command::DumpGraph(args) => run_dump_graph(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_convergence() {
                2
            } else {
                1
            }
        }
    }
}

fn load(args: &DataArgs) -> Result<(ExperimentConfig, DomainDataset, DomainDataset), Error> {
    let mut config = ExperimentConfig::load(&args.config)?;
    config.standardize |= args.standardize;
    let (source, target) = config.load_data()?;
    Ok((config, source, target))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn json_lines<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String, Error> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(&item)?);
        text.push('\n');
    }
    Ok(text)
}

fn run_fit(args: FitArgs) -> Result<(), Error> {
    let (config, source, target) = load(&args.data)?;
    let out = args.out.or(config.output.clone());
    let state = fit(&source, &target, &config.hp).map_err(|failure| {
        if let Some(state) = &failure.state {
            log::warn!("fit aborted after {} iterations", state.iteration);
        }
        failure.error
    })?;
    let last: Option<&IterationRecord> = state.records.last();
    let output = FitOutput {
        model: state.model.to_json(),
        pi: state.weights.pi().iter().copied().collect(),
        iterations: state.iteration,
        objective: *state.objective_trace.last().unwrap_or(&f64::NAN),
        terms: last.map(|r| r.terms),
        objective_trace: state.objective_trace.clone(),
    };
    emit(out.as_deref(), &serde_json::to_string_pretty(&output)?)?;
    if args.trace {
        let path = sibling(out.as_deref().unwrap_or(Path::new("fit.json")), ".trace.jsonl");
        write_text(&path, &json_lines(&state.records)?)?;
    }
    log::info!("fit finished after {} iterations, objective {}", output.iterations, output.objective);
    Ok(())
}

fn run_cv(args: CvArgs) -> Result<(), Error> {
    let (mut config, source, target) = load(&args.data)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.parallel == 0 {
        return Err(Error::Config("--parallel must be at least 1".into()));
    }
    let out = args.out.or(config.output.clone());
    let report: ExperimentReport = run_cv_on(&config, &source, &target, args.parallel)?;
    emit(out.as_deref(), &report.to_json()?)?;
    if let Some(path) = out.as_deref() {
        write_text(&sibling(path, ".tsv"), &report.to_tsv())?;
    }
    if args.trace {
        let lines = report.methods.iter().flat_map(|m| {
            m.objective_traces.iter().enumerate().flat_map(move |(fold, trace)| {
                trace.iter().enumerate().map(move |(iteration, &objective)| CvTraceLine {
                    method: m.method.name(),
                    fold,
                    iteration,
                    objective,
                })
            })
        });
        let path = sibling(out.as_deref().unwrap_or(Path::new("cv.json")), ".trace.jsonl");
        write_text(&path, &json_lines(lines)?)?;
    }
    for m in &report.methods {
        log::info!("{}: mean accuracy {:.4}", m.method.name(), m.mean_accuracy);
    }
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let mut spec: SyntheticShiftSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", args.spec.display())))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (source, target) = generate_synthetic_pair(&spec)?;
    for (name, ds) in [("source.csv", &source), ("target.csv", &target)] {
        let path = PathBuf::from(format!("{}{name}", args.out_prefix));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        data::save_dataset(ds, &path, DataFormat::DenseCsv)?;
    }
    Ok(())
}

fn run_dump_graph(args: GraphArgs) -> Result<(), Error> {
    let (config, source, target) = load(&args.data)?;
    let graphs = DomainGraphs::build(&source, &target, config.hp.k)?;
    let json = serde_json::to_string_pretty(&Graphs {
        source: &graphs.source,
        target: &graphs.target,
    })?;
    emit(args.out.as_deref(), &json)
}
