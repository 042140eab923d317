//! Command-line driver: `build-index`, `infer`, `evaluate`, `report` and
//! `dgb-prompts`.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors (bad flags,
//! malformed inputs, missing mode requirements), 2 for failures while running
//! (IO, backend errors). Every subcommand writes `<subcommand>.config.json`
//! next to its outputs so a run can be replayed with the same flags.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gsco_core::pipeline::{run_mode, Backends, Mode};
use gsco_core::{Index, IndexEntry, RetrievalConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::backend::{timeout_from_env, BackendConfig, BackendSet, ConfigError};
use crate::index_file::{load_index, save_index, IndexFileError};
use crate::manifest::{build_dgb_prompts, load_manifest, DatasetManifest, ManifestError};
use crate::records::{load_records, save_records, RecordsError, RunRecord};
use crate::report::{comparison_text, write_report, EvalReport, MetricConfig, ReportError, DEFAULT_REPLICATES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gsco", version, about = "Generalist-specialist collaborative inference and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Embed every manifest sample and write a retrieval index.
    BuildIndex(BuildIndexArgs),
    /// Run one inference mode over a manifest and write run records.
    Infer(InferArgs),
    /// Score run records against a manifest, with bootstrap intervals.
    Evaluate(EvaluateArgs),
    /// Merge several evaluation reports into one comparison table.
    Report(ReportArgs),
    /// Render diagnosis-guided report-generation prompts for a manifest.
    DgbPrompts(DgbArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub backends: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// File name of the index inside the output directory.
    #[arg(long, default_value = "index.gidx")]
    pub index_name: String,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("unknown mode {s:?}; expected one of gfm, specialist, voting, moed, rad, gsco"))
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Mode,
    #[arg(long)]
    pub backends: PathBuf,
    /// Retrieval index; required for rad and gsco.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Never retrieve the query sample itself.
    #[arg(long)]
    pub exclude_self: bool,
    #[arg(long, default_value_t = 0)]
    pub template_variant: u8,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Store per-sample wall-clock time in the records.
    #[arg(long)]
    pub record_timing: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    pub bootstrap: usize,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DgbArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Io { .. } => runtime(e.to_string()),
            _ => invalid(format!("manifest: {e}")),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => runtime(e.to_string()),
            _ => invalid(e.to_string()),
        }
    }
}

impl From<IndexFileError> for CliError {
    fn from(e: IndexFileError) -> Self {
        match e {
            IndexFileError::Storage { .. } => runtime(e.to_string()),
            IndexFileError::Format(_) => invalid(e.to_string()),
        }
    }
}

impl From<RecordsError> for CliError {
    fn from(e: RecordsError) -> Self {
        match e {
            RecordsError::Io { .. } => runtime(e.to_string()),
            RecordsError::Parse { .. } => invalid(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { .. } => runtime(e.to_string()),
            _ => invalid(e.to_string()),
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn echo_config(dir: &Path, command: &Command) -> Result<(), CliError> {
    let name = match command {
        Command::BuildIndex(_) => "build-index",
        Command::Infer(_) => "infer",
        Command::Evaluate(_) => "evaluate",
        Command::Report(_) => "report",
        Command::DgbPrompts(_) => "dgb-prompts",
    };
    let mut text = serde_json::to_string_pretty(command).expect("arguments serialize");
    text.push('\n');
    write(&dir.join(format!("{name}.config.json")), text)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    if workers == 0 {
        return Err(invalid("--workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| runtime(format!("cannot start worker pool: {e}")))
}

fn build_index(args: &BuildIndexArgs) -> Result<(), CliError> {
    let name = Path::new(&args.index_name);
    if args.index_name.is_empty() || name.file_name() != Some(name.as_os_str()) {
        return Err(invalid(format!("--index-name {:?} must be a plain file name", args.index_name)));
    }
    let manifest = load_manifest(&args.manifest)?;
    let backends = BackendConfig::load(&args.backends)?;
    if backends.embedder.is_none() {
        return Err(invalid("build-index needs an embedder in the backends file"));
    }
    let pool = thread_pool(args.workers)?;
    let set = backends.build(timeout_from_env()?)?;
    let embedder = set.embedder.as_deref().expect("checked above");
    let labels = manifest.label_set.as_ref();

    let entries = pool.install(|| {
        manifest
            .samples
            .par_iter()
            .map(|s| {
                let vector = embedder.embed(&s.image_ref).map_err(|e| runtime(format!("sample {:?}: {e}", s.id)))?;
                let meta_labels = s.truth_labels.as_ref().zip(labels).map(|(idx, set)| {
                    idx.iter().filter_map(|&i| set.display(i).map(str::to_string)).collect::<Vec<_>>()
                });
                Ok(IndexEntry {
                    entry_id: s.id.clone(),
                    vector,
                    meta_labels,
                    meta_text: s.reference_text.clone(),
                    modality: s.modality.clone(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let index = Index::build(entries, embedder.dimension()).map_err(|e| invalid(format!("cannot index manifest: {e}")))?;
    create_dir(&args.output_dir)?;
    save_index(&index, args.output_dir.join(&args.index_name))?;
    log::info!("indexed {} samples of dimension {}", index.len(), index.dimension());
    Ok(())
}

#[derive(Serialize)]
struct FailedSample<'a> {
    sample_id: &'a str,
    error: String,
}

fn check_infer_requirements(args: &InferArgs, manifest: &DatasetManifest, backends: &BackendConfig) -> Result<(), CliError> {
    let mode = args.mode;
    if args.template_variant > 3 {
        return Err(invalid("--template-variant must be 0, 1, 2 or 3"));
    }
    if args.k == 0 {
        return Err(invalid("--k must be at least 1"));
    }
    if mode.needs_index() {
        if args.index.is_none() {
            return Err(invalid(format!("mode {mode} needs --index")));
        }
        if backends.embedder.is_none() {
            return Err(invalid(format!("mode {mode} needs an embedder in the backends file")));
        }
    }
    if mode.needs_specialists() && backends.specialists.is_empty() {
        return Err(invalid(format!("mode {mode} needs at least one specialist in the backends file")));
    }
    if mode.needs_generator() && backends.generator.is_none() {
        return Err(invalid(format!("mode {mode} needs a generator in the backends file")));
    }
    let task = manifest.task;
    let specialist_mode = matches!(mode, Mode::Voting | Mode::Specialist | Mode::Moed | Mode::Gsco);
    if specialist_mode && !task.is_classification() {
        return Err(invalid(format!("mode {mode} needs a classification task, manifest is {task}")));
    }
    Ok(())
}

fn infer(args: &InferArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let backends = BackendConfig::load(&args.backends)?;
    check_infer_requirements(args, &manifest, &backends)?;
    let pool = thread_pool(args.workers)?;
    let index = match (&args.index, args.mode.needs_index()) {
        (Some(path), true) => Some(load_index(path)?),
        _ => None,
    };
    let set: BackendSet = backends.build(timeout_from_env()?)?;
    if let (Some(index), Some(embedder)) = (&index, &set.embedder) {
        if index.dimension() != embedder.dimension() {
            return Err(invalid(format!(
                "index dimension {} does not match embedder {} dimension {}",
                index.dimension(),
                embedder.id(),
                embedder.dimension()
            )));
        }
    }
    let specialists = set.specialist_refs();
    let wiring = Backends {
        specialists: &specialists,
        generator: set.generator.as_deref(),
        embedder: set.embedder.as_deref(),
        index: index.as_ref(),
    };
    let labels = manifest.label_set.as_ref();

    let outcomes: Vec<_> = pool.install(|| {
        manifest
            .samples
            .par_iter()
            .map(|s| {
                let mut retrieval = RetrievalConfig::top(args.k);
                if args.exclude_self {
                    retrieval = retrieval.excluding(s.id.clone());
                }
                let started = Instant::now();
                let result = run_mode(args.mode, s, labels, &wiring, &retrieval, args.template_variant);
                (s, result, started.elapsed().as_millis() as u64)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (sample, result, ms) in outcomes {
        match result {
            Ok(diagnosis) => records.push(RunRecord {
                sample_id: sample.id.clone(),
                mode: args.mode,
                diagnosis,
                duration_ms: args.record_timing.then_some(ms),
            }),
            Err(e) => {
                log::error!("sample {:?}: {e}", sample.id);
                failures.push(FailedSample { sample_id: &sample.id, error: e.to_string() });
            }
        }
    }
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    failures.sort_by(|a, b| a.sample_id.cmp(b.sample_id));

    create_dir(&args.output_dir)?;
    save_records(&records, args.output_dir.join("records.jsonl"))?;
    let failures_path = args.output_dir.join("failures.jsonl");
    if failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path).map_err(|e| runtime(format!("cannot remove stale {}: {e}", failures_path.display())))?;
        }
        Ok(())
    } else {
        let text: String = failures.iter().map(|f| serde_json::to_string(f).expect("serializes") + "\n").collect();
        write(&failures_path, text)?;
        Err(runtime(format!("{} of {} samples failed; see {}", failures.len(), manifest.samples.len(), failures_path.display())))
    }
}

fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    if args.bootstrap == 0 {
        return Err(invalid("--bootstrap must be at least 1"));
    }
    let manifest = load_manifest(&args.manifest)?;
    let records = load_records(&args.records)?;
    create_dir(&args.output_dir)?;
    let report = write_report(&records, &manifest, MetricConfig { seed: args.seed, replicates: args.bootstrap }, &args.output_dir)?;
    log::info!("evaluated {} records of {}", report.n, report.dataset);
    Ok(())
}

#[derive(Serialize)]
struct Comparison<'a> {
    reports: &'a [EvalReport],
}

fn merge_reports(args: &ReportArgs) -> Result<(), CliError> {
    let reports = args
        .inputs
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| runtime(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<EvalReport>(&text).map_err(|e| invalid(format!("{}: not a report: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    create_dir(&args.output_dir)?;
    let mut json = serde_json::to_string_pretty(&Comparison { reports: &reports }).expect("serializes");
    json.push('\n');
    write(&args.output_dir.join("comparison.json"), json)?;
    write(&args.output_dir.join("comparison.txt"), comparison_text(&reports))
}

fn dgb_prompts(args: &DgbArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let batch = build_dgb_prompts(&manifest).map_err(|e| invalid(e.to_string()))?;
    create_dir(&args.output_dir)?;
    let text: String = batch.prompts.iter().map(|p| serde_json::to_string(p).expect("serializes") + "\n").collect();
    write(&args.output_dir.join("dgb_prompts.jsonl"), text)?;
    if !batch.warnings.is_empty() {
        let text: String = batch.warnings.iter().map(|w| serde_json::to_string(w).expect("serializes") + "\n").collect();
        write(&args.output_dir.join("dgb_warnings.jsonl"), text)?;
    }
    Ok(())
}

fn output_dir(command: &Command) -> &Path {
    match command {
        Command::BuildIndex(a) => &a.output_dir,
        Command::Infer(a) => &a.output_dir,
        Command::Evaluate(a) => &a.output_dir,
        Command::Report(a) => &a.output_dir,
        Command::DgbPrompts(a) => &a.output_dir,
    }
}

pub fn dispatch(command: &Command) -> Result<(), CliError> {
    let dir = output_dir(command);
    create_dir(dir)?;
    echo_config(dir, command)?;
    match command {
        Command::BuildIndex(a) => build_index(a),
        Command::Infer(a) => infer(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => merge_reports(a),
        Command::DgbPrompts(a) => dgb_prompts(a),
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
