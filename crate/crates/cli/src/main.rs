//! layoutplan: build layout benchmarks, plan layouts with a language-model
//! backend, score the results, and render them for inspection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use layoutplan::ablation::{grid_csv, grid_markdown, run_grid, AblationGrid};
use layoutplan::backend::http::{ApiStyle, EndpointConfig, HttpBackend};
use layoutplan::backend::mock::MockBackend;
use layoutplan::backend::{Backend, BackendError, GenerationParams};
use layoutplan::bench::{
    build_benchmark, load_coco, read_prompt_records, write_benchmark, BenchConfig, PromptRecord,
};
use layoutplan::embed::HashedBagOfWords;
use layoutplan::model::{CanvasSpec, Dialect};
use layoutplan::pipeline::{
    eval_2d_predictions, eval_3d_predictions_default, plan_inputs_from_layout_records,
    plan_inputs_from_prompts, plan_records, read_predictions, write_predictions, PlanConfig,
    PlanInput, RunManifest,
};
use layoutplan::prompt::{FurnitureVocabulary, PromptConfig};
use layoutplan::records::{read_layout_records, LayoutRecord};
use layoutplan::render::{render_layout, RenderMode};
use layoutplan::retrieval::{SelectionPolicy, SupportSet};
use layoutplan::{Error, Result};

/// Environment variable holding the API credential for the HTTP backend.
/// Credentials are never read from files or flags.
const API_KEY_VAR: &str = "LAYOUTPLAN_API_KEY";

// ── Command line ─────────────────────────────────────────────────────────────

#[derive(Parser)]
#[command(name = "layoutplan", version, about = "Layout planning with LLM backends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build benchmark prompt files from COCO-format annotations.
    BuildBench(BuildBenchArgs),
    /// Plan layouts for benchmark conditions through a backend.
    Plan(PlanArgs),
    /// Score a prediction file against its benchmark.
    Eval(EvalArgs),
    /// Render layout files to SVG.
    Render(RenderArgs),
    /// Run the prompt-component ablation grid.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExemplarMode {
    Retrieval,
    FixedRandom,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DialectArg {
    Image2d,
    Scene3d,
    Keypoint,
}

impl DialectArg {
    fn dialect(self) -> Dialect {
        match self {
            DialectArg::Image2d => Dialect::Image2D,
            DialectArg::Scene3d => Dialect::Scene3D,
            DialectArg::Keypoint => Dialect::Keypoint,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblateFlag {
    NoInstruction,
    NoCss,
    NoNorm,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Completion backend.
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Model identifier passed to the backend.
    #[arg(long, default_value = "mock-model")]
    model: String,
    /// Exemplars per prompt; defaults to the task-specific value.
    #[arg(long)]
    k: Option<usize>,
    /// Sampling seed for deterministic backends and exemplar sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples per prompt; defaults to the task-specific value.
    #[arg(long)]
    n_samples: Option<u32>,
    /// Square canvas extent in pixels; defaults to 64 (2D) or 256 (3D).
    #[arg(long)]
    canvas: Option<u32>,
    /// Prompt components to drop.
    #[arg(long, value_enum)]
    ablate: Vec<AblateFlag>,
    /// How exemplars are chosen.
    #[arg(long, value_enum, default_value = "retrieval")]
    exemplar_mode: ExemplarMode,
    /// Concurrent planning workers.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Layout dialect of the run.
    #[arg(long, value_enum, default_value = "image2d")]
    dialect: DialectArg,
    /// Base URL of the HTTP backend (OpenAI-compatible).
    #[arg(long)]
    api_base: Option<String>,
    /// Mock backend jitter in pixels.
    #[arg(long)]
    jitter: Option<f64>,
    /// TOML file whose values override these flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BuildBenchArgs {
    /// COCO instances JSON.
    #[arg(long)]
    instances: PathBuf,
    /// COCO captions JSON.
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Output directory for the benchmark shards.
    #[arg(long)]
    out: PathBuf,
    /// Split name stamped into the file names.
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap each subtype at the published test-split sizes.
    #[arg(long)]
    test_targets: bool,
}

#[derive(Args)]
struct PlanArgs {
    /// Benchmark file: prompt records (2D) or layout records (3D).
    #[arg(long)]
    bench: PathBuf,
    /// Support set of (condition, layout) records to draw exemplars from.
    #[arg(long)]
    support: PathBuf,
    /// Output predictions file (JSON-lines). A manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Layout-record file whose layouts seed scene completions, joined by id.
    #[arg(long)]
    complete_scene: Option<PathBuf>,
    #[command(flatten)]
    flags: RunFlags,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalTask {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// The benchmark the predictions were planned from.
    #[arg(long)]
    bench: PathBuf,
    #[arg(long, value_enum)]
    task: EvalTask,
    /// Support set used at planning time; enables exemplar-copy detection (3D).
    #[arg(long)]
    support: Option<PathBuf>,
    /// Category vocabulary file (one name per line) for out-of-vocabulary
    /// accounting (2D).
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    /// Boundary tolerance in pixels for the out-of-bound check (3D).
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Report JSON output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Layout-record file (JSON-lines).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Force one render mode; by default each layout picks its own.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    /// Benchmark prompt-record file.
    #[arg(long)]
    bench: PathBuf,
    #[arg(long)]
    support: PathBuf,
    /// Output directory for ablation.csv and ablation.md.
    #[arg(long)]
    out_dir: PathBuf,
    /// Extra exemplar counts to sweep with all components on.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
    #[command(flatten)]
    flags: RunFlags,
}

// ── Config file ──────────────────────────────────────────────────────────────

/// Optional TOML file; any value present here overrides the matching flag.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<String>,
    model: Option<String>,
    k: Option<usize>,
    seed: Option<u64>,
    n_samples: Option<u32>,
    canvas: Option<u32>,
    ablate: Option<Vec<String>>,
    exemplar_mode: Option<String>,
    jobs: Option<usize>,
    dialect: Option<String>,
    api_base: Option<String>,
    jitter: Option<f64>,
}

fn parse_enum<T: ValueEnum>(value: &str, what: &str) -> Result<T> {
    T::from_str(value, true)
        .map_err(|_| Error::invalid_argument(format!("config file: bad {what} value {value:?}")))
}

fn apply_config_file(flags: &mut RunFlags) -> Result<()> {
    let Some(path) = &flags.config else {
        return Ok(());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: FileConfig = toml::from_str(&text)
        .map_err(|e| Error::invalid_argument(format!("{}: {e}", path.display())))?;
    if let Some(v) = file.backend {
        flags.backend = parse_enum(&v, "backend")?;
    }
    if let Some(v) = file.model {
        flags.model = v;
    }
    if file.k.is_some() {
        flags.k = file.k;
    }
    if let Some(v) = file.seed {
        flags.seed = v;
    }
    if file.n_samples.is_some() {
        flags.n_samples = file.n_samples;
    }
    if file.canvas.is_some() {
        flags.canvas = file.canvas;
    }
    if let Some(values) = file.ablate {
        flags.ablate = values
            .iter()
            .map(|v| parse_enum(v, "ablate"))
            .collect::<Result<_>>()?;
    }
    if let Some(v) = file.exemplar_mode {
        flags.exemplar_mode = parse_enum(&v, "exemplar_mode")?;
    }
    if let Some(v) = file.jobs {
        flags.jobs = v;
    }
    if let Some(v) = file.dialect {
        flags.dialect = parse_enum(&v, "dialect")?;
    }
    if file.api_base.is_some() {
        flags.api_base = file.api_base;
    }
    if file.jitter.is_some() {
        flags.jitter = file.jitter;
    }
    Ok(())
}

// ── Shared plumbing ──────────────────────────────────────────────────────────

fn canvas_for(flags: &RunFlags) -> Result<CanvasSpec> {
    match (flags.canvas, flags.dialect.dialect()) {
        (Some(px), _) => CanvasSpec::new(px, px),
        (None, Dialect::Scene3D) => CanvasSpec::new(256, 256),
        (None, _) => Ok(CanvasSpec::default_2d()),
    }
}

fn prompt_config_for(flags: &RunFlags) -> Result<PromptConfig> {
    let dialect = flags.dialect.dialect();
    let mut cfg = PromptConfig::ablation(
        dialect,
        canvas_for(flags)?,
        !flags.ablate.contains(&AblateFlag::NoInstruction),
        !flags.ablate.contains(&AblateFlag::NoCss),
        !flags.ablate.contains(&AblateFlag::NoNorm),
    );
    if dialect == Dialect::Scene3D {
        cfg.furniture_vocabulary = Some(FurnitureVocabulary::bedroom_defaults());
    }
    Ok(cfg)
}

fn params_for(flags: &RunFlags) -> GenerationParams {
    let mut params = match flags.dialect.dialect() {
        Dialect::Scene3D => GenerationParams::for_bedroom(&flags.model),
        _ => GenerationParams::for_2d(&flags.model),
    };
    if let Some(n) = flags.n_samples {
        params.n_samples = n;
    }
    params.seed = flags.seed;
    params
}

fn policy_for(flags: &RunFlags, default_k: usize) -> SelectionPolicy {
    let k = flags.k.unwrap_or(default_k);
    match flags.exemplar_mode {
        ExemplarMode::Retrieval => SelectionPolicy::retrieval(k),
        ExemplarMode::FixedRandom => SelectionPolicy::fixed_random(k, flags.seed),
    }
}

fn make_backend(
    flags: &RunFlags,
    support: &SupportSet,
    spec: &layoutplan::dsl::DialectSpec,
) -> Result<Box<dyn Backend>> {
    match flags.backend {
        BackendKind::Mock => {
            let mut mock = MockBackend::new(support.clone(), spec.clone()).map_err(Error::Backend)?;
            if let Some(jitter) = flags.jitter {
                mock = mock.with_jitter(jitter);
            }
            Ok(Box::new(mock))
        }
        BackendKind::Http => {
            let base = flags.api_base.clone().ok_or_else(|| {
                Error::invalid_argument("--api-base is required with --backend http")
            })?;
            let api_key = std::env::var(API_KEY_VAR).map_err(|_| {
                Error::invalid_argument(format!(
                    "set {API_KEY_VAR} in the environment to use the HTTP backend"
                ))
            })?;
            let backend = HttpBackend::new(EndpointConfig::new(base, ApiStyle::Chat, api_key))
                .map_err(Error::Backend)?;
            Ok(Box::new(backend))
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| format!("{}.manifest.json", n.to_string_lossy()))
        .unwrap_or_else(|| "manifest.json".to_string());
    out.with_file_name(name)
}

// ── Subcommands ──────────────────────────────────────────────────────────────

fn cmd_build_bench(args: BuildBenchArgs) -> Result<u8> {
    let records = load_coco(&args.instances, args.captions.as_deref())?;
    let config = if args.test_targets {
        BenchConfig::with_test_targets(args.seed)
    } else {
        BenchConfig::new(args.seed)
    };
    let set = build_benchmark(&records, &config)?;
    if set.numerical.is_empty() && set.spatial.is_empty() {
        eprintln!("warning: no usable annotations; nothing written");
        return Ok(0);
    }
    let written = write_benchmark(&set, &args.out, &args.split)?;
    let mut manifest = RunManifest::new(
        "build-bench",
        args.seed,
        "none",
        serde_json::to_value(&config)?,
    );
    manifest
        .inputs
        .insert("instances".into(), args.instances.display().to_string());
    if let Some(captions) = &args.captions {
        manifest.inputs.insert("captions".into(), captions.display().to_string());
    }
    for (path, count) in &written {
        println!("{}: {count} records", path.display());
        manifest
            .outputs
            .insert(path.file_name().unwrap().to_string_lossy().into_owned(), count.to_string());
    }
    manifest.save(&args.out.join(format!("build_{}.manifest.json", args.split)))?;
    Ok(0)
}

/// Loads plan inputs plus, for 2D runs, the prompt records needed by eval.
fn load_plan_inputs(args: &PlanArgs) -> Result<Vec<PlanInput>> {
    let mut inputs = match args.flags.dialect.dialect() {
        Dialect::Scene3D => {
            let records = read_layout_records(&args.bench)?;
            plan_inputs_from_layout_records(&records, false)
        }
        _ => plan_inputs_from_prompts(&read_prompt_records(&args.bench)?)?,
    };
    if let Some(path) = &args.complete_scene {
        let prefixes = read_layout_records(path)?;
        let by_id: BTreeMap<&str, &LayoutRecord> = prefixes
            .iter()
            .filter_map(|r| r.id.as_deref().map(|id| (id, r)))
            .collect();
        for input in &mut inputs {
            let record = by_id.get(input.id.as_str()).ok_or_else(|| {
                Error::data(format!(
                    "--complete-scene file has no layout for record {}",
                    input.id
                ))
            })?;
            input.prefix = Some(record.layout.clone());
        }
    }
    Ok(inputs)
}

fn cmd_plan(mut args: PlanArgs) -> Result<u8> {
    apply_config_file(&mut args.flags)?;
    let started = Instant::now();
    let inputs = load_plan_inputs(&args)?;
    let mut support = SupportSet::load(&args.support)?;
    let prompt = prompt_config_for(&args.flags)?;
    let default_k = match args.flags.dialect.dialect() {
        Dialect::Scene3D => layoutplan::retrieval::DEFAULT_K_BEDROOM,
        _ => layoutplan::retrieval::DEFAULT_K_NUMERICAL,
    };
    let policy = policy_for(&args.flags, default_k);
    let params = params_for(&args.flags);
    let backend = make_backend(&args.flags, &support, &prompt.dialect_spec)?;
    let embedder = HashedBagOfWords::default_dim();
    let mut config = PlanConfig::new(prompt, policy, params);
    config.jobs = args.flags.jobs;

    let outcome = plan_records(&inputs, &mut support, backend.as_ref(), &embedder, &config)?;
    write_predictions(&args.out, &outcome.predictions)?;

    let mut manifest = RunManifest::new(
        "plan",
        args.flags.seed,
        backend.name(),
        serde_json::to_value(&config)?,
    );
    manifest.inputs.insert("bench".into(), args.bench.display().to_string());
    manifest.inputs.insert("support".into(), args.support.display().to_string());
    manifest.outputs.insert("predictions".into(), args.out.display().to_string());
    manifest.records = outcome.statuses.clone();
    manifest.aborted = outcome.aborted.clone();
    manifest.timing_ms = Some(started.elapsed().as_millis() as u64);
    manifest.save(&manifest_path(&args.out))?;

    println!(
        "{} records, {} prediction lines -> {}",
        outcome.statuses.len(),
        outcome.predictions.len(),
        args.out.display()
    );
    if let Some(message) = &outcome.aborted {
        eprintln!("aborted: {message} (partial results kept)");
        return Ok(3);
    }
    Ok(0)
}

fn load_vocabulary(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| layoutplan::model::normalize_category(l))
        .collect())
}

fn print_2d_table(report: &layoutplan::eval2d::EvalReport2D) {
    let line = |name: &str, b: &layoutplan::eval2d::SubtypeBreakdown| {
        println!(
            "{name:<22} {:>7} {:>8} {:>9.2} {:>9.2} {:>9.2} {:>10} {:>10}",
            b.records,
            b.parse_failures,
            b.precision,
            b.recall,
            b.counting_accuracy,
            b.comparison_accuracy.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
            b.spatial_accuracy.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
        );
    };
    println!(
        "{:<22} {:>7} {:>8} {:>9} {:>9} {:>9} {:>10} {:>10}",
        "subtype", "records", "failures", "precision", "recall", "count-acc", "comp-acc", "spat-acc"
    );
    for (name, breakdown) in &report.subtypes {
        line(name, breakdown);
    }
    line("overall", &report.overall);
}

fn cmd_eval(args: EvalArgs) -> Result<u8> {
    let predictions = read_predictions(&args.predictions)?;
    let report_json = match args.task {
        EvalTask::TwoD => {
            let bench = read_prompt_records(&args.bench)?;
            let vocabulary = args.vocabulary.as_deref().map(load_vocabulary).transpose()?;
            let report = eval_2d_predictions(&bench, &predictions, vocabulary.as_ref())?;
            print_2d_table(&report);
            serde_json::to_value(&report)?
        }
        EvalTask::ThreeD => {
            let bench = read_layout_records(&args.bench)?;
            let support = args.support.as_deref().map(SupportSet::load).transpose()?;
            let report =
                eval_3d_predictions_default(&bench, &predictions, support.as_ref(), args.epsilon)?;
            println!(
                "scenes {} | parse failures {} | out-of-bound {:.2}% | KL {} | dup/mod/gen {}/{}/{}",
                report.scenes,
                report.parse_failures,
                report.out_of_bound_rate,
                report
                    .category_kl
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "-".into()),
                report.scene_difference.duplication,
                report.scene_difference.modification,
                report.scene_difference.generation,
            );
            serde_json::to_value(&report)?
        }
    };
    let mut text = serde_json::to_string_pretty(&report_json)?;
    text.push('\n');
    std::fs::write(&args.out, text).map_err(|e| Error::io(&args.out, e))?;
    println!("report -> {}", args.out.display());
    Ok(0)
}

fn cmd_render(args: RenderArgs) -> Result<u8> {
    let records = read_layout_records(&args.input)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let forced: Option<RenderMode> = args.mode.as_deref().map(str::parse).transpose()?;
    let mut written = 0usize;
    for (i, record) in records.iter().enumerate() {
        let mode = forced.unwrap_or_else(|| RenderMode::for_dialect(record.layout.dialect));
        let name = record.id.clone().unwrap_or_else(|| format!("layout-{i:04}"));
        let name = name.replace(['/', '\\'], "_");
        match render_layout(&record.layout, mode) {
            Ok(svg) => {
                let path = args.out_dir.join(format!("{name}.svg"));
                std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
                written += 1;
            }
            Err(e) => eprintln!("warning: skipping {name}: {e}"),
        }
    }
    println!("{written} of {} layouts rendered -> {}", records.len(), args.out_dir.display());
    Ok(0)
}

fn cmd_ablate(mut args: AblateArgs) -> Result<u8> {
    apply_config_file(&mut args.flags)?;
    let bench: Vec<PromptRecord> = read_prompt_records(&args.bench)?;
    let mut support = SupportSet::load(&args.support)?;
    let default_k = layoutplan::retrieval::DEFAULT_K_SPATIAL;
    let mut grid = AblationGrid::new(
        args.flags.dialect.dialect(),
        canvas_for(&args.flags)?,
        policy_for(&args.flags, default_k),
        params_for(&args.flags),
    );
    grid.k_sweep = args.sweep.clone();
    grid.jobs = args.flags.jobs;

    let flags = args.flags.clone();
    let support_for_backend = support.clone();
    let factory = move |spec: &layoutplan::dsl::DialectSpec| -> std::result::Result<Box<dyn Backend>, BackendError> {
        make_backend(&flags, &support_for_backend, spec).map_err(|e| match e {
            Error::Backend(b) => b,
            other => BackendError::Config(other.to_string()),
        })
    };
    let embedder = HashedBagOfWords::default_dim();
    let rows = run_grid(&bench, &mut support, &factory, &embedder, &grid)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let csv_path = args.out_dir.join("ablation.csv");
    std::fs::write(&csv_path, grid_csv(&rows)).map_err(|e| Error::io(&csv_path, e))?;
    let md_path = args.out_dir.join("ablation.md");
    let markdown = grid_markdown(&rows);
    std::fs::write(&md_path, &markdown).map_err(|e| Error::io(&md_path, e))?;
    print!("{markdown}");
    println!("tables -> {}", args.out_dir.display());
    Ok(0)
}

// ── Entry ────────────────────────────────────────────────────────────────────

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::InvalidArgument(_) => 1,
        Error::Backend(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::BuildBench(args) => cmd_build_bench(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Render(args) => cmd_render(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
