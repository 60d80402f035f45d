//! Command-line front end. Configuration comes from a TOML/JSON manifest
//! plus flag overrides; flags win. Exit codes: 0 success, 1 any problem
//! failed, 2 configuration error.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use memtree::refprm::TrainSchedule;
use memtree::runner::{
    cmd_ablate, cmd_label, cmd_report, cmd_search, cmd_train_ref, load_manifest,
    BackendSelection, RunManifest, RunnerError, SuiteSource, EXIT_FAILED, EXIT_OK,
};
use memtree::search::SearchConfig;
use memtree::tasks::{Family, TaskParams};

#[derive(Parser)]
#[command(
    name = "memtree",
    version,
    about = "Memory-guided tree search: run suites, build datasets, train the reference scorer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search over a suite and write trees, event logs, memory dumps,
    /// and metrics under the output directory.
    Search(SearchArgs),
    /// Run every memory mode across the given seeds and emit ablate.csv.
    Ablate(AblateArgs),
    /// Label the trees of a finished run and export the preference-pair and
    /// class-example datasets.
    Label(LabelArgs),
    /// Train the reference scorer on exported datasets; writes checkpoint
    /// and loss curves.
    TrainRef(TrainRefArgs),
    /// Recompute a finished run's aggregate from its artifacts and verify
    /// consistency.
    Report(ReportArgs),
}

/// Flags shared by `search` and `ablate`; every one overrides the manifest.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Directory run artifacts are written to.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Search seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Rollouts per problem.
    #[arg(long)]
    rollouts: Option<u64>,
    /// Memory ablation: full | no_heuristics | no_fallacies | none.
    #[arg(long)]
    memory_mode: Option<String>,
    /// UCT exploration weight.
    #[arg(long)]
    exploration: Option<f64>,
    /// Heuristic write threshold.
    #[arg(long)]
    tau_pos: Option<f64>,
    /// Fallacy write threshold.
    #[arg(long)]
    tau_neg: Option<f64>,
    /// Search depth cap.
    #[arg(long)]
    max_depth: Option<u32>,
    /// Expansion width cap.
    #[arg(long)]
    max_children: Option<usize>,
    /// Memory capacity per kind.
    #[arg(long)]
    memory_capacity: Option<usize>,
    /// Heuristic hints exposed per prompt.
    #[arg(long)]
    max_hints: Option<usize>,
    /// Use the doubled exploration term sqrt(2 ln N / n).
    #[arg(long)]
    uct_times_two: Option<bool>,
    /// Workers inside one search (1 keeps outputs byte-deterministic).
    #[arg(long)]
    workers: Option<usize>,
    /// Problems run concurrently.
    #[arg(long)]
    suite_workers: Option<usize>,
    /// Noise amplitude of the synthetic scorer.
    #[arg(long)]
    noise_amplitude: Option<f64>,
    /// Task family: arithmetic_chain | token_path | distractor_tree.
    #[arg(long)]
    family: Option<String>,
    /// Problem count (turns a single-problem suite into a generated one).
    #[arg(long)]
    count: Option<usize>,
    /// Task depth (steps to the answer).
    #[arg(long)]
    task_depth: Option<u32>,
    /// Wrong continuations offered per step.
    #[arg(long)]
    distractors: Option<usize>,
    /// Correct continuations per step (token_path only).
    #[arg(long)]
    correct_width: Option<usize>,
    /// Global trap pool size (distractor_tree only).
    #[arg(long)]
    trap_pool: Option<usize>,
    /// Task generation seed.
    #[arg(long)]
    task_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Run manifest (.toml or .json). Without it a default synthetic
    /// single-problem manifest is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Run manifest (.toml or .json) describing the base configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds to cross with the four memory modes.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct LabelArgs {
    /// Directory produced by `search`.
    #[arg(long)]
    run_dir: PathBuf,
    /// Where pairs.jsonl and classes.jsonl go (default: <run-dir>/datasets).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainRefArgs {
    /// Preference pairs JSONL from `label`.
    #[arg(long)]
    pairs: PathBuf,
    /// Class examples JSONL from `label`.
    #[arg(long)]
    classes: PathBuf,
    /// Where checkpoint.json, loss_curves.csv, and the report go.
    #[arg(long)]
    out_dir: PathBuf,
    /// Gradient step size.
    #[arg(long)]
    step_size: Option<f64>,
    /// Epochs per training stage.
    #[arg(long)]
    epochs: Option<usize>,
    /// Preference-loss temperature.
    #[arg(long)]
    beta: Option<f64>,
    /// Allowed per-epoch loss rise before the divergence guard trips.
    #[arg(long)]
    divergence_tolerance: Option<f64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory produced by `search`.
    #[arg(long)]
    run_dir: PathBuf,
}

fn default_manifest() -> RunManifest {
    RunManifest {
        config: SearchConfig::default(),
        backend: BackendSelection::default(),
        suite: SuiteSource::Single {
            family: Family::ArithmeticChain,
            params: TaskParams::default(),
        },
        output_dir: PathBuf::from("memtree-out"),
        timestamp: String::new(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        workers: 1,
        suite_workers: 1,
    }
}

fn unix_timestamp() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_default()
}

fn config_err(message: impl Into<String>) -> RunnerError {
    RunnerError::Config(message.into())
}

fn build_manifest(
    config: Option<&PathBuf>,
    ov: &Overrides,
) -> Result<RunManifest, RunnerError> {
    let mut manifest = match config {
        Some(path) => load_manifest(path)?,
        None => default_manifest(),
    };
    apply_overrides(&mut manifest, ov)?;
    manifest.timestamp = unix_timestamp();
    Ok(manifest)
}

fn apply_overrides(manifest: &mut RunManifest, ov: &Overrides) -> Result<(), RunnerError> {
    let cfg = &mut manifest.config;
    if let Some(v) = ov.seed {
        cfg.seed = v;
    }
    if let Some(v) = ov.rollouts {
        cfg.num_rollouts = v;
    }
    if let Some(mode) = &ov.memory_mode {
        cfg.memory_mode = mode.parse().map_err(|e| config_err(format!("{e}")))?;
    }
    if let Some(v) = ov.exploration {
        cfg.exploration_weight = v;
    }
    if let Some(v) = ov.tau_pos {
        cfg.tau_pos = v;
    }
    if let Some(v) = ov.tau_neg {
        cfg.tau_neg = v;
    }
    if let Some(v) = ov.max_depth {
        cfg.max_depth = v;
    }
    if let Some(v) = ov.max_children {
        cfg.max_children = v;
    }
    if let Some(v) = ov.memory_capacity {
        cfg.memory_capacity = v;
    }
    if let Some(v) = ov.max_hints {
        cfg.max_hints = v;
    }
    if let Some(v) = ov.uct_times_two {
        cfg.uct_times_two = v;
    }
    if let Some(dir) = &ov.output_dir {
        manifest.output_dir = dir.clone();
    }
    if let Some(v) = ov.workers {
        manifest.workers = v;
    }
    if let Some(v) = ov.suite_workers {
        manifest.suite_workers = v;
    }
    if let Some(v) = ov.noise_amplitude {
        match &mut manifest.backend {
            BackendSelection::Synthetic { noise_amplitude } => *noise_amplitude = v,
            BackendSelection::Remote { .. } => {
                return Err(config_err(
                    "--noise-amplitude applies only to the synthetic backend",
                ));
            }
        }
    }
    apply_suite_overrides(manifest, ov)
}

fn apply_suite_overrides(manifest: &mut RunManifest, ov: &Overrides) -> Result<(), RunnerError> {
    let any_flag = ov.family.is_some()
        || ov.count.is_some()
        || ov.task_depth.is_some()
        || ov.distractors.is_some()
        || ov.correct_width.is_some()
        || ov.trap_pool.is_some()
        || ov.task_seed.is_some();
    if !any_flag {
        return Ok(());
    }
    let (mut family, mut params, count) = match &manifest.suite {
        SuiteSource::Single { family, params } => (*family, *params, None),
        SuiteSource::Generated {
            family,
            params,
            count,
        } => (*family, *params, Some(*count)),
        SuiteSource::ManifestFile { .. } => {
            return Err(config_err(
                "task flags cannot override a suite loaded from a manifest file",
            ));
        }
    };
    if let Some(name) = &ov.family {
        family = name.parse::<Family>().map_err(|e| config_err(format!("{e}")))?;
    }
    if let Some(v) = ov.task_depth {
        params.depth = v;
    }
    if let Some(v) = ov.distractors {
        params.distractors = v;
    }
    if let Some(v) = ov.correct_width {
        params.correct_width = v;
    }
    if let Some(v) = ov.trap_pool {
        params.trap_pool = v;
    }
    if let Some(v) = ov.task_seed {
        params.seed = v;
    }
    manifest.suite = match ov.count.or(count) {
        Some(count) => SuiteSource::Generated {
            family,
            count,
            params,
        },
        None => SuiteSource::Single { family, params },
    };
    Ok(())
}

fn run(cli: Cli) -> Result<i32, RunnerError> {
    match cli.command {
        Command::Search(args) => {
            let manifest = build_manifest(args.config.as_ref(), &args.overrides)?;
            let outcome = cmd_search(&manifest)?;
            println!("manifest {}", manifest.hash());
            for record in &outcome.records {
                println!(
                    "{} success={} trajectories={} depth={:.3}{}",
                    record.problem_id,
                    record.success,
                    record.trajectories,
                    record.depth,
                    record
                        .error
                        .as_deref()
                        .map(|e| format!(" error={e:?}"))
                        .unwrap_or_default()
                );
            }
            let agg = &outcome.aggregate;
            println!(
                "suite problems={} successes={} failures={} success_rate={:.3} mean_trajectories={:.3} mean_depth={:.3}",
                agg.problems,
                agg.successes,
                agg.failures,
                agg.success_rate,
                agg.mean_trajectories,
                agg.mean_depth
            );
            println!("artifacts {}", outcome.output_dir.display());
            Ok(outcome.exit_code())
        }
        Command::Ablate(args) => {
            let manifest = build_manifest(args.config.as_ref(), &args.overrides)?;
            let outcome = cmd_ablate(&manifest, &args.seeds)?;
            for record in &outcome.records {
                println!(
                    "mode={} seed={} success_rate={:.3} mean_trajectories={:.3} mean_depth={:.3} manifest={}",
                    record.row.mode,
                    record.row.seed,
                    record.row.success_rate,
                    record.row.mean_trajectories,
                    record.row.mean_depth,
                    record.manifest_hash
                );
            }
            println!("csv {}", outcome.csv_path.display());
            Ok(outcome.exit_code())
        }
        Command::Label(args) => {
            let out_dir = args
                .out_dir
                .unwrap_or_else(|| args.run_dir.join("datasets"));
            let outcome = cmd_label(&args.run_dir, &out_dir)?;
            println!(
                "pairs={} -> {}",
                outcome.pairs,
                outcome.pairs_path.display()
            );
            println!(
                "class_examples={} -> {}",
                outcome.class_examples,
                outcome.classes_path.display()
            );
            Ok(EXIT_OK)
        }
        Command::TrainRef(args) => {
            let mut schedule = TrainSchedule::default();
            if let Some(v) = args.step_size {
                schedule.step_size = v;
            }
            if let Some(v) = args.epochs {
                schedule.epochs_per_stage = v;
            }
            if let Some(v) = args.beta {
                schedule.beta = v;
            }
            if let Some(v) = args.divergence_tolerance {
                schedule.divergence_tolerance = v;
            }
            let outcome = cmd_train_ref(&args.pairs, &args.classes, &args.out_dir, schedule)?;
            println!("inputs {}", outcome.inputs_hash);
            println!(
                "stage1_final_loss={:.6} stage2_final_loss={:.6} train_accuracy={:.3}",
                outcome.stage1_final_loss, outcome.stage2_final_loss, outcome.train_accuracy
            );
            println!("checkpoint {}", outcome.checkpoint_path.display());
            println!("curves {}", outcome.curve_path.display());
            Ok(EXIT_OK)
        }
        Command::Report(args) => {
            let report = cmd_report(&args.run_dir)?;
            println!("manifest {}", report.manifest_hash);
            println!(
                "problems={} successes={} failures={} success_rate={:.3}",
                report.recomputed.problems,
                report.recomputed.successes,
                report.recomputed.failures,
                report.recomputed.success_rate
            );
            if report.consistent {
                println!("consistent true");
                Ok(EXIT_OK)
            } else {
                for mismatch in &report.mismatches {
                    eprintln!("mismatch: {mismatch}");
                }
                println!("consistent false");
                Ok(EXIT_FAILED)
            }
        }
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            std::process::exit(e.exit_code());
        }
    }
}
