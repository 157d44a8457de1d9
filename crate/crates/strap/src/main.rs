//! `strap` command line: dataset validation, segmentation, retrieval,
//! export, reporting, synthetic data generation, and the scaling benchmark.
//!
//! Exit codes: 0 on success, 1 on validation or runtime failure, 2 on usage
//! errors. A JSON config file may supply any flag; explicit flags win, and
//! `STRAP_THREADS` overrides the `--threads` flag.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use strap::bench::{bench_csv, run_benchmark, QuerySpec};
use strap::dataset::{load_dataset, validate_dataset, write_dataset};
use strap::dtw::DistanceMetric;
use strap::retrieval::{
    export_retrieval, report_matches_csv, report_shares_csv, retrieval_report, retrieve,
    RetrievalConfig, RetrievalResult, DEFAULT_K,
};
use strap::segmentation::{
    calibrate_epsilon, segment_dataset, SegmentationConfig, DEFAULT_MIN_LEN,
};
use strap::synth::{generate_synthetic, GroundTruth, SynthConfig};

#[derive(Parser)]
#[command(name = "strap", version, about = "Sub-trajectory retrieval engine")]
struct Cli {
    /// JSON file supplying defaults for any flag (explicit flags win).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for retrieval (default: available parallelism).
    /// The STRAP_THREADS environment variable overrides this flag.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a dataset directory against every invariant.
    Validate(ValidateArgs),
    /// Split target demonstrations into sub-trajectories.
    Segment(SegmentArgs),
    /// Run the full retrieval pipeline: segment, match, select top-K.
    Retrieve(RetrieveArgs),
    /// Materialize a retrieval result as a dataset directory.
    Export(ExportArgs),
    /// Summarize a retrieval result (task shares, match histograms).
    Report(ReportArgs),
    /// Generate a planted-skill synthetic dataset pair with ground truth.
    Synth(SynthArgs),
    /// Time the retrieval step over increasing prior sizes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Write the validation report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Dataset directory to segment.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Speed threshold in meters/timestep, or "auto" for the 10th-percentile
    /// calibration recipe.
    #[arg(long)]
    epsilon: Option<String>,
    /// Minimum chunk length after merging.
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Target demonstration dataset directory.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Prior dataset directory to retrieve from.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Number of matches to retrieve.
    #[arg(long)]
    k: Option<usize>,
    /// Cost metric: l2 or one_minus_cosine.
    #[arg(long)]
    metric: Option<String>,
    /// Speed threshold, or "auto" (10th percentile of target speeds).
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    min_len: Option<usize>,
    /// Collapse identical (trajectory, start, end) matches.
    #[arg(long)]
    dedupe: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Retrieval result JSON produced by `retrieve`.
    #[arg(long)]
    result: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Retrieval result JSON produced by `retrieve`.
    #[arg(long)]
    result: Option<PathBuf>,
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Ground truth JSON (synthetic datasets); enables relevance scoring.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Output prefix: writes <out>.json, <out>.csv and <out>_matches.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory: writes prior/, target/ and ground_truth.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_skills: Option<usize>,
    #[arg(long)]
    skill_len_min: Option<usize>,
    #[arg(long)]
    skill_len_max: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    skills_per_task: Option<usize>,
    #[arg(long)]
    trajectories_per_task: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    warp_jitter: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated prior sizes, e.g. 100,200,400,800.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    traj_len: Option<usize>,
    /// Number of query chunks cut from the target trajectory.
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    query_len: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Timed trials per size (after one excluded warm-up).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the timing rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    fn fail(e: impl std::fmt::Display) -> Self {
        CliError::Failure(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Flat JSON object supplying fallback values for flags.
struct ConfigFile(serde_json::Map<String, Value>);

impl ConfigFile {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile(serde_json::Map::new()));
        };
        let raw = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        match serde_json::from_str(&raw) {
            Ok(Value::Object(map)) => Ok(ConfigFile(map)),
            Ok(_) => Err(CliError::Usage(format!(
                "config {} must hold a JSON object",
                path.display()
            ))),
            Err(e) => Err(CliError::Usage(format!(
                "config {} is not valid JSON: {e}",
                path.display()
            ))),
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> CliResult<Option<T>> {
        // Keys may be written like the flag (kebab-case) or snake_case.
        let kebab = key.replace('_', "-");
        match self.0.get(key).or_else(|| self.0.get(&kebab)) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| {
                CliError::Usage(format!("config value for {key:?} has the wrong type: {e}"))
            }),
        }
    }

    /// CLI flag wins, then the config file.
    fn or<T: DeserializeOwned>(&self, cli: Option<T>, key: &str) -> CliResult<Option<T>> {
        match cli {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

fn required<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
}

fn parse_metric(s: Option<String>, cfg: &ConfigFile) -> CliResult<DistanceMetric> {
    let s = cfg.or(s, "metric")?.unwrap_or_else(|| "l2".to_string());
    s.parse().map_err(CliError::Usage)
}

/// Epsilon is either a number or the literal "auto" (calibration recipe).
enum EpsilonArg {
    Value(f64),
    Auto,
}

fn parse_epsilon(s: Option<String>, cfg: &ConfigFile) -> CliResult<EpsilonArg> {
    // The config file may hold a number or a string.
    let merged: Option<String> = match s {
        Some(v) => Some(v),
        None => match cfg.0.get("epsilon") {
            None => None,
            Some(Value::String(v)) => Some(v.clone()),
            Some(Value::Number(n)) => Some(n.to_string()),
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "config value for \"epsilon\" must be a number or \"auto\", got {other}"
                )))
            }
        },
    };
    match merged.as_deref() {
        None => Err(CliError::Usage("missing required flag --epsilon".into())),
        Some("auto") => Ok(EpsilonArg::Auto),
        Some(v) => v
            .parse::<f64>()
            .map(EpsilonArg::Value)
            .map_err(|_| CliError::Usage(format!("--epsilon must be a number or \"auto\", got {v:?}"))),
    }
}

fn resolve_epsilon(arg: EpsilonArg, dataset: &strap::dataset::Dataset) -> CliResult<f64> {
    match arg {
        EpsilonArg::Value(v) => Ok(v),
        EpsilonArg::Auto => calibrate_epsilon(dataset).map_err(CliError::fail),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let mut body = serde_json::to_string_pretty(value).map_err(CliError::fail)?;
    body.push('\n');
    match out {
        Some(path) => fs::write(path, body)
            .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn load_result(path: &Path) -> CliResult<RetrievalResult> {
    let raw = fs::read_to_string(path)
        .map_err(|e| CliError::Failure(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| CliError::Failure(format!("{} is not a retrieval result: {e}", path.display())))
}

fn thread_count(cli: Option<usize>, cfg: &ConfigFile) -> CliResult<usize> {
    if let Ok(env) = std::env::var("STRAP_THREADS") {
        return env.parse().map_err(|_| {
            CliError::Usage(format!("STRAP_THREADS must be a positive integer, got {env:?}"))
        });
    }
    if let Some(n) = cfg.or(cli, "threads")? {
        return Ok(n);
    }
    Ok(std::thread::available_parallelism().map_or(1, usize::from))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Clap exits 2 on usage errors and 0 for --help/--version.
            e.exit();
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    let threads = thread_count(cli.threads, &cfg)?.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(CliError::fail)?;
    pool.install(|| dispatch(cli.cmd, &cfg))
}

fn dispatch(cmd: Cmd, cfg: &ConfigFile) -> CliResult<ExitCode> {
    match cmd {
        Cmd::Validate(args) => cmd_validate(args, cfg),
        Cmd::Segment(args) => cmd_segment(args, cfg),
        Cmd::Retrieve(args) => cmd_retrieve(args, cfg),
        Cmd::Export(args) => cmd_export(args, cfg),
        Cmd::Report(args) => cmd_report(args, cfg),
        Cmd::Synth(args) => cmd_synth(args, cfg),
        Cmd::Bench(args) => cmd_bench(args, cfg),
    }
}

fn cmd_validate(args: ValidateArgs, cfg: &ConfigFile) -> CliResult<ExitCode> {
    let path = required(cfg.or(args.dataset, "dataset")?, "dataset")?;
    let dataset = load_dataset(&path).map_err(CliError::fail)?;
    let report = validate_dataset(&dataset);
    write_json(&report, cfg.or(args.out, "out")?.as_deref())?;
    if report.ok {
        Ok(ExitCode::SUCCESS)
    } else {
        for issue in &report.issues {
            eprintln!(
                "{}: {:?} {}",
                serde_json::to_value(issue.code)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                issue.trajectory_id,
                issue.message
            );
        }
        Ok(ExitCode::from(1))
    }
}

#[derive(Serialize)]
struct SegmentJson {
    trajectory_id: String,
    chunks: Vec<[usize; 2]>,
}

fn cmd_segment(args: SegmentArgs, cfg: &ConfigFile) -> CliResult<ExitCode> {
    let path = required(cfg.or(args.dataset, "dataset")?, "dataset")?;
    let eps = parse_epsilon(args.epsilon, cfg)?;
    let min_len = cfg.or(args.min_len, "min_len")?.unwrap_or(DEFAULT_MIN_LEN);
    let dataset = load_dataset(&path).map_err(CliError::fail)?;
    let epsilon = resolve_epsilon(eps, &dataset)?;
    let segs = segment_dataset(&dataset, &SegmentationConfig { epsilon, min_len })
        .map_err(CliError::fail)?;
    let rows: Vec<SegmentJson> = segs
        .into_iter()
        .map(|s| SegmentJson {
            trajectory_id: s.trajectory_id,
            chunks: s.chunks.iter().map(|c| [c.start, c.end]).collect(),
        })
        .collect();
    write_json(&rows, cfg.or(args.out, "out")?.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_retrieve(args: RetrieveArgs, cfg: &ConfigFile) -> CliResult<ExitCode> {
    let target_path = required(cfg.or(args.target, "target")?, "target")?;
    let prior_path = required(cfg.or(args.prior, "prior")?, "prior")?;
    let k = cfg.or(args.k, "k")?.unwrap_or(DEFAULT_K);
    let metric = parse_metric(args.metric, cfg)?;
    let eps = parse_epsilon(args.epsilon, cfg)?;
    let min_len = cfg.or(args.min_len, "min_len")?.unwrap_or(DEFAULT_MIN_LEN);
    let dedupe = args.dedupe || cfg.get::<bool>("dedupe")?.unwrap_or(false);

    let targets = load_dataset(&target_path).map_err(CliError::fail)?;
    let prior = load_dataset(&prior_path).map_err(CliError::fail)?;
    let epsilon = resolve_epsilon(eps, &targets)?;
    let rc = RetrievalConfig {
        k,
        metric,
        segmentation: SegmentationConfig { epsilon, min_len },
        dedupe,
    };
    let result = retrieve(&targets, &prior, &rc).map_err(CliError::fail)?;
    eprintln!(
        "retrieved {} matches over {} queries{}",
        result.matches.len(),
        result.per_query_counts.len(),
        if result.exhausted { " (supply exhausted)" } else { "" }
    );
    write_json(&result, cfg.or(args.out, "out")?.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(args: ExportArgs, cfg: &ConfigFile) -> CliResult<ExitCode> {
    let result_path = required(cfg.or(args.result, "result")?, "result")?;
    let target_path = required(cfg.or(args.target, "target")?, "target")?;
    let prior_path = required(cfg.or(args.prior, "prior")?, "prior")?;
    let out = required(cfg.or(args.out, "out")?, "out")?;

    let result = load_result(&result_path)?;
    let targets = load_dataset(&target_path).map_err(CliError::fail)?;
    let prior = load_dataset(&prior_path).map_err(CliError::fail)?;
    let exported = export_retrieval(&result, &targets, &prior, &out).map_err(CliError::fail)?;
    eprintln!(
        "exported {} trajectories ({} retrieved slices + {} target copies) to {}",
        exported.trajectories.len(),
        result.matches.len(),
        targets.trajectories.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs, cfg: &ConfigFile) -> CliResult<ExitCode> {
    let result_path = required(cfg.or(args.result, "result")?, "result")?;
    let prior_path = required(cfg.or(args.prior, "prior")?, "prior")?;
    let out = required(cfg.or(args.out, "out")?, "out")?;
    let gt_path = cfg.or(args.ground_truth, "ground_truth")?;

    let result = load_result(&result_path)?;
    let prior = load_dataset(&prior_path).map_err(CliError::fail)?;
    let gt: Option<GroundTruth> = match gt_path {
        None => None,
        Some(p) => {
            let raw = fs::read_to_string(&p)
                .map_err(|e| CliError::Failure(format!("cannot read {}: {e}", p.display())))?;
            Some(serde_json::from_str(&raw).map_err(CliError::fail)?)
        }
    };
    let report = retrieval_report(&result, &prior, gt.as_ref());

    let json_path = out.with_extension("json");
    let csv_path = out.with_extension("csv");
    let matches_path = out.with_file_name(format!(
        "{}_matches.csv",
        out.file_stem().and_then(|s| s.to_str()).unwrap_or("report")
    ));
    write_json(&report, Some(&json_path))?;
    fs::write(&csv_path, report_shares_csv(&report))
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", csv_path.display())))?;
    fs::write(&matches_path, report_matches_csv(&report))
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", matches_path.display())))?;
    eprintln!(
        "report over {} matches / {} timesteps -> {}, {}, {}",
        report.total_matches,
        report.total_timesteps,
        json_path.display(),
        csv_path.display(),
        matches_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(args: SynthArgs, cfg: &ConfigFile) -> CliResult<ExitCode> {
    let out = required(cfg.or(args.out, "out")?, "out")?;
    let defaults = SynthConfig::default();
    let sc = SynthConfig {
        n_skills: cfg.or(args.n_skills, "n_skills")?.unwrap_or(defaults.n_skills),
        skill_len_range: (
            cfg.or(args.skill_len_min, "skill_len_min")?
                .unwrap_or(defaults.skill_len_range.0),
            cfg.or(args.skill_len_max, "skill_len_max")?
                .unwrap_or(defaults.skill_len_range.1),
        ),
        tasks: cfg.or(args.tasks, "tasks")?.unwrap_or(defaults.tasks),
        skills_per_task: cfg
            .or(args.skills_per_task, "skills_per_task")?
            .unwrap_or(defaults.skills_per_task),
        trajectories_per_task: cfg
            .or(args.trajectories_per_task, "trajectories_per_task")?
            .unwrap_or(defaults.trajectories_per_task),
        embedding_dim: cfg
            .or(args.embedding_dim, "embedding_dim")?
            .unwrap_or(defaults.embedding_dim),
        warp_jitter: cfg
            .or(args.warp_jitter, "warp_jitter")?
            .unwrap_or(defaults.warp_jitter),
        noise_sigma: cfg
            .or(args.noise_sigma, "noise_sigma")?
            .unwrap_or(defaults.noise_sigma),
        seed: required(cfg.or(args.seed, "seed")?, "seed")?,
    };
    let (prior, target, gt) = generate_synthetic(&sc).map_err(CliError::fail)?;
    write_dataset(&prior, out.join("prior")).map_err(CliError::fail)?;
    write_dataset(&target, out.join("target")).map_err(CliError::fail)?;
    write_json(&gt, Some(&out.join("ground_truth.json")))?;
    eprintln!(
        "wrote {} prior and {} target trajectories under {}",
        prior.trajectories.len(),
        target.trajectories.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs, cfg: &ConfigFile) -> CliResult<ExitCode> {
    let sizes_raw = required(cfg.or(args.sizes, "sizes")?, "sizes")?;
    let sizes: Vec<usize> = sizes_raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad size {s:?} in --sizes")))
        })
        .collect::<CliResult<_>>()?;
    let traj_len = cfg.or(args.traj_len, "traj_len")?.unwrap_or(250);
    let defaults = QuerySpec::default();
    let query = QuerySpec {
        count: cfg.or(args.queries, "queries")?.unwrap_or(defaults.count),
        len: cfg.or(args.query_len, "query_len")?.unwrap_or(defaults.len),
        embedding_dim: cfg
            .or(args.embedding_dim, "embedding_dim")?
            .unwrap_or(defaults.embedding_dim),
    };
    let trials = cfg.or(args.trials, "trials")?.unwrap_or(3);
    let seed = cfg.or(args.seed, "seed")?.unwrap_or(0);

    let report = run_benchmark(&sizes, traj_len, &query, trials, seed).map_err(CliError::fail)?;
    for row in &report.rows {
        eprintln!(
            "M={:>6}  {:>10.1} ms  (std {:.1}, trials {})",
            row.prior_size, row.wall_ms_mean, row.wall_ms_std, row.trials
        );
    }
    eprintln!(
        "fit: wall_ms = {:.4} * M + {:.2}   (R^2 = {:.4})",
        report.fit.slope, report.fit.intercept, report.fit.r_squared
    );
    if let Some(csv_path) = cfg.or(args.csv, "csv")? {
        fs::write(&csv_path, bench_csv(&report))
            .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", csv_path.display())))?;
    }
    write_json(&report, cfg.or(args.out, "out")?.as_deref())?;
    Ok(ExitCode::SUCCESS)
}
