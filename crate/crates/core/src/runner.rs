//! Run orchestration behind the CLI: manifests, suites, artifact files, and
//! the search / ablate / label / train-ref / report commands.
//!
//! A `RunManifest` plus this crate's version pins a synthetic run completely:
//! the manifest hash covers everything that can change bytes in the outputs
//! (config, backend, suite, per-search workers, version) and is stamped into
//! every artifact. Timestamps and output locations stay outside the hash.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

use crate::backend::{BackendError, PolicyBackend};
use crate::labeling::{
    self, correct_terminals, extract_class_examples, extract_preference_pairs, label_tree,
    ClassExample, LabelError, PreferencePair,
};
use crate::llm::{EndpointConfig, LlmClient, RemotePolicy, RemotePrm, TemplateSet};
use crate::prm::PrmBackend;
use crate::refprm::{
    self, cls_accuracy, ClassItem, PairItem, RefPrmError, TrainReport, TrainSchedule,
};
use crate::search::{
    run_search_in, run_search_parallel, structural_metrics, EventRecord, MemoryMode, SearchConfig,
    SearchError, SearchResult, SearchTree,
};
use crate::tasks::{
    answer_hash, generate, generate_suite, Family, NoisyOraclePrm, Problem, SuiteManifest,
    SyntheticPolicy, TaskError, TaskParams,
};
use crate::MemoryStore;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    RefPrm(#[from] RefPrmError),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
}

impl RunnerError {
    /// Stable exit-code contract: 2 for configuration/schema problems,
    /// 1 for everything else that failed at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) | RunnerError::Parse { .. } => EXIT_CONFIG,
            RunnerError::Label(LabelError::Schema { .. }) => EXIT_CONFIG,
            _ => EXIT_FAILED,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Which policy/reward pair drives the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackendSelection {
    /// Enumerating policy plus the noisy value oracle; amplitude 0 makes the
    /// oracle exact.
    Synthetic {
        #[serde(default = "default_noise_amplitude")]
        noise_amplitude: f64,
    },
    /// Chat-completions endpoint for both candidate generation and scoring.
    Remote {
        endpoint: EndpointConfig,
        #[serde(default)]
        template_dir: Option<PathBuf>,
    },
}

fn default_noise_amplitude() -> f64 {
    0.15
}

impl Default for BackendSelection {
    fn default() -> Self {
        BackendSelection::Synthetic {
            noise_amplitude: default_noise_amplitude(),
        }
    }
}

/// Where the problems come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SuiteSource {
    Single {
        family: Family,
        params: TaskParams,
    },
    Generated {
        family: Family,
        count: usize,
        params: TaskParams,
    },
    /// A previously written suite manifest; problems are regenerated from
    /// their parameters and checked against the stored answer hashes.
    ManifestFile { path: PathBuf },
}

impl SuiteSource {
    pub fn resolve(&self) -> Result<Vec<Problem>, RunnerError> {
        match self {
            SuiteSource::Single { family, params } => Ok(vec![generate(*family, *params)?]),
            SuiteSource::Generated {
                family,
                count,
                params,
            } => {
                if *count == 0 {
                    return Err(RunnerError::Config("suite count must be >= 1".into()));
                }
                Ok(generate_suite(*family, *count, *params)?)
            }
            SuiteSource::ManifestFile { path } => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                let manifest: SuiteManifest =
                    serde_json::from_str(&text).map_err(|e| RunnerError::Parse {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?;
                manifest
                    .entries
                    .iter()
                    .map(|entry| {
                        let problem = generate(entry.family, entry.params)?;
                        if problem.id != entry.problem_id
                            || answer_hash(&problem.answer) != entry.answer_hash
                        {
                            return Err(RunnerError::Parse {
                                path: path.display().to_string(),
                                message: format!(
                                    "manifest entry {} does not regenerate (answer hash mismatch)",
                                    entry.problem_id
                                ),
                            });
                        }
                        Ok(problem)
                    })
                    .collect()
            }
        }
    }
}

fn default_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

fn default_workers() -> usize {
    1
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: SearchConfig,
    #[serde(default)]
    pub backend: BackendSelection,
    pub suite: SuiteSource,
    pub output_dir: PathBuf,
    /// Informational only; excluded from the manifest hash so reruns stay
    /// byte-identical.
    #[serde(default)]
    pub timestamp: String,
    #[serde(default = "default_version")]
    pub version: String,
    /// Workers inside one search; byte determinism requires 1.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Problems run concurrently; per-problem artifacts stay deterministic
    /// because each search is self-contained.
    #[serde(default = "default_workers")]
    pub suite_workers: usize,
}

impl RunManifest {
    pub fn validate(&self) -> Result<(), RunnerError> {
        self.config
            .validate()
            .map_err(|e| RunnerError::Config(e.to_string()))?;
        if self.workers == 0 || self.suite_workers == 0 {
            return Err(RunnerError::Config("worker counts must be >= 1".into()));
        }
        if let BackendSelection::Remote { endpoint, .. } = &self.backend {
            endpoint
                .validate()
                .map_err(|e| RunnerError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Hex SHA-256 over the output-determining fields in canonical JSON.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            config: &'a SearchConfig,
            backend: &'a BackendSelection,
            suite: &'a SuiteSource,
            version: &'a str,
            workers: usize,
        }
        let json = serde_json::to_string(&Hashed {
            config: &self.config,
            backend: &self.backend,
            suite: &self.suite,
            version: &self.version,
            workers: self.workers,
        })
        .expect("manifest serialization cannot fail");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Loads a manifest from TOML or JSON, by extension.
pub fn load_manifest(path: &Path) -> Result<RunManifest, RunnerError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |message: String| RunnerError::Parse {
        path: path.display().to_string(),
        message,
    };
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| parse_err(e.to_string())),
        Some("json") => serde_json::from_str(&text).map_err(|e| parse_err(e.to_string())),
        other => Err(RunnerError::Config(format!(
            "manifest {} has unsupported extension {other:?} (expected .toml or .json)",
            path.display()
        ))),
    }
}

/// Per-problem result record written next to the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMetrics {
    pub problem_id: String,
    pub family: Family,
    pub memory_mode: MemoryMode,
    pub seed: u64,
    pub success: bool,
    pub em_or_success: f64,
    /// Hash of the extracted answer (answers themselves stay out of reports).
    pub extracted_answer_hash: Option<String>,
    pub trajectories: u64,
    pub depth: f64,
    pub nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub manifest_hash: String,
}

#[derive(Debug, Clone)]
pub struct ProblemRun {
    pub problem: Problem,
    pub result: SearchResult,
    pub metrics: ProblemMetrics,
}

fn metrics_for(
    problem: &Problem,
    result: &SearchResult,
    config: &SearchConfig,
    manifest_hash: &str,
) -> ProblemMetrics {
    let success =
        result.error.is_none() && result.answer.as_deref() == Some(problem.answer.as_str());
    ProblemMetrics {
        problem_id: problem.id.clone(),
        family: problem.family,
        memory_mode: config.memory_mode,
        seed: config.seed,
        success,
        em_or_success: if success { 1.0 } else { 0.0 },
        extracted_answer_hash: result.answer.as_deref().map(answer_hash),
        trajectories: result.trajectories,
        depth: result.depth,
        nodes: result.tree.len(),
        error: result.error.clone(),
        manifest_hash: manifest_hash.to_string(),
    }
}

/// Runs every problem of a suite with the given backends. Persistent memory
/// scope forces sequential execution over a shared store; otherwise problems
/// run in a bounded pool when `suite_workers > 1`.
pub fn run_suite<P, R>(
    problems: &[Problem],
    config: &SearchConfig,
    policy: &P,
    prm: &R,
    workers: usize,
    suite_workers: usize,
    manifest_hash: &str,
) -> Result<Vec<ProblemRun>, RunnerError>
where
    P: PolicyBackend + Sync,
    R: PrmBackend + Sync,
{
    use crate::memory::MemoryScope;

    if config.memory_scope == MemoryScope::Persistent {
        if workers > 1 {
            return Err(RunnerError::Config(
                "persistent memory scope requires workers = 1".into(),
            ));
        }
        let mut store = MemoryStore::new(
            config.memory_capacity,
            config.memory_scope,
            config.tau_pos,
            config.tau_neg,
        )
        .map_err(SearchError::from)?;
        return problems
            .iter()
            .map(|problem| {
                let result = run_search_in(problem, config, policy, prm, &mut store)?;
                let metrics = metrics_for(problem, &result, config, manifest_hash);
                Ok(ProblemRun {
                    problem: problem.clone(),
                    result,
                    metrics,
                })
            })
            .collect();
    }

    let run_one = |problem: &Problem| -> Result<ProblemRun, RunnerError> {
        let result = run_search_parallel(problem, config, policy, prm, workers)?;
        let metrics = metrics_for(problem, &result, config, manifest_hash);
        Ok(ProblemRun {
            problem: problem.clone(),
            result,
            metrics,
        })
    };

    if suite_workers <= 1 {
        problems.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(suite_workers)
            .build()
            .map_err(|e| RunnerError::Config(e.to_string()))?;
        pool.install(|| problems.par_iter().map(run_one).collect())
    }
}

/// Suite-level aggregates, recomputable from the per-problem records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub problems: usize,
    pub successes: usize,
    pub failures: usize,
    pub success_rate: f64,
    pub mean_trajectories: f64,
    pub mean_depth: f64,
    pub memory_mode: MemoryMode,
    pub seed: u64,
    pub manifest_hash: String,
}

pub fn aggregate_metrics(
    records: &[ProblemMetrics],
    config: &SearchConfig,
    manifest_hash: &str,
) -> AggregateMetrics {
    let problems = records.len();
    let successes = records.iter().filter(|r| r.success).count();
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    let denom = problems.max(1) as f64;
    AggregateMetrics {
        problems,
        successes,
        failures,
        success_rate: successes as f64 / denom,
        mean_trajectories: records.iter().map(|r| r.trajectories as f64).sum::<f64>() / denom,
        mean_depth: records.iter().map(|r| r.depth).sum::<f64>() / denom,
        memory_mode: config.memory_mode,
        seed: config.seed,
        manifest_hash: manifest_hash.to_string(),
    }
}

/// Write-temp-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), RunnerError> {
    let mut json = serde_json::to_string(value).map_err(|e| RunnerError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

/// Writes tree, event log (manifest header first), memory dump, and metrics
/// for one finished problem.
pub fn write_problem_artifacts(
    dir: &Path,
    run: &ProblemRun,
    manifest_hash: &str,
) -> Result<(), RunnerError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut tree_json = run.result.tree.canonical_json();
    tree_json.push('\n');
    write_atomic(&dir.join("tree.json"), tree_json.as_bytes())?;

    let mut events = String::new();
    events.push_str(&EventRecord::manifest_header(manifest_hash).to_json_line());
    events.push('\n');
    for event in &run.result.events {
        events.push_str(&event.to_json_line());
        events.push('\n');
    }
    write_atomic(&dir.join("events.jsonl"), events.as_bytes())?;

    write_json_atomic(&dir.join("memory.json"), &run.result.memory)?;
    write_json_atomic(&dir.join("metrics.json"), &run.metrics)
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub aggregate: AggregateMetrics,
    pub records: Vec<ProblemMetrics>,
    pub failures: usize,
    pub output_dir: PathBuf,
}

impl SearchOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures == 0 {
            EXIT_OK
        } else {
            EXIT_FAILED
        }
    }
}

/// The `search` command: run the suite and write all artifacts.
pub fn cmd_search(manifest: &RunManifest) -> Result<SearchOutcome, RunnerError> {
    manifest.validate()?;
    let hash = manifest.hash();
    let problems = manifest.suite.resolve()?;
    let out = &manifest.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_json_atomic(&out.join("run_manifest.json"), manifest)?;

    let suite_manifest = crate::tasks::suite_manifest(&problems);
    write_json_atomic(&out.join("suite_manifest.json"), &suite_manifest)?;

    let runs = match &manifest.backend {
        BackendSelection::Synthetic { noise_amplitude } => {
            let policy = SyntheticPolicy;
            let prm = NoisyOraclePrm {
                seed: manifest.config.seed,
                amplitude: *noise_amplitude,
            };
            run_suite(
                &problems,
                &manifest.config,
                &policy,
                &prm,
                manifest.workers,
                manifest.suite_workers,
                &hash,
            )?
        }
        BackendSelection::Remote {
            endpoint,
            template_dir,
        } => {
            let templates = match template_dir {
                Some(dir) => TemplateSet::load_dir(dir)?,
                None => TemplateSet::builtin(),
            };
            let client = Arc::new(LlmClient::new(endpoint.clone(), templates)?);
            let policy = RemotePolicy::new(Arc::clone(&client));
            let prm = RemotePrm::new(client);
            run_suite(
                &problems,
                &manifest.config,
                &policy,
                &prm,
                manifest.workers,
                manifest.suite_workers,
                &hash,
            )?
        }
    };

    let mut records = Vec::with_capacity(runs.len());
    for run in &runs {
        let dir = out.join("problems").join(&run.problem.id);
        write_problem_artifacts(&dir, run, &hash)?;
        records.push(run.metrics.clone());
    }
    let aggregate = aggregate_metrics(&records, &manifest.config, &hash);
    write_json_atomic(&out.join("aggregate.json"), &aggregate)?;

    Ok(SearchOutcome {
        failures: aggregate.failures,
        output_dir: out.clone(),
        records,
        aggregate,
    })
}

/// One ablation table row, mirroring the CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateRow {
    pub mode: String,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_trajectories: f64,
    pub mean_depth: f64,
}

/// One ablation row plus the hash of the manifest variant that produced it.
/// The CSV keeps its fixed columns; hashes live in the sibling JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateRecord {
    #[serde(flatten)]
    pub row: AblateRow,
    pub manifest_hash: String,
}

#[derive(Debug, Clone)]
pub struct AblateOutcome {
    pub rows: Vec<AblateRow>,
    pub records: Vec<AblateRecord>,
    pub failures: usize,
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
}

impl AblateOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures == 0 {
            EXIT_OK
        } else {
            EXIT_FAILED
        }
    }
}

/// The `ablate` command: every memory mode crossed with every seed over one
/// suite, emitting `ablate.csv`. Only aggregates are written; per-problem
/// artifacts belong to `search`.
pub fn cmd_ablate(base: &RunManifest, seeds: &[u64]) -> Result<AblateOutcome, RunnerError> {
    base.validate()?;
    if seeds.is_empty() {
        return Err(RunnerError::Config("ablate needs at least one seed".into()));
    }
    let BackendSelection::Synthetic { noise_amplitude } = &base.backend else {
        return Err(RunnerError::Config(
            "ablate supports only the synthetic backend".into(),
        ));
    };
    let problems = base.suite.resolve()?;
    let out = &base.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut failures = 0usize;
    for mode in MemoryMode::ALL {
        for &seed in seeds {
            let config = manifest_config_with(base, mode, seed);
            config
                .validate()
                .map_err(|e| RunnerError::Config(e.to_string()))?;
            let variant = RunManifest {
                config: config.clone(),
                ..base.clone()
            };
            let hash = variant.hash();
            let policy = SyntheticPolicy;
            let prm = NoisyOraclePrm {
                seed,
                amplitude: *noise_amplitude,
            };
            let runs = run_suite(
                &problems,
                &config,
                &policy,
                &prm,
                base.workers,
                base.suite_workers,
                &hash,
            )?;
            let metrics: Vec<ProblemMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
            let aggregate = aggregate_metrics(&metrics, &config, &hash);
            failures += aggregate.failures;
            let row = AblateRow {
                mode: mode.as_str().to_string(),
                seed,
                success_rate: aggregate.success_rate,
                mean_trajectories: aggregate.mean_trajectories,
                mean_depth: aggregate.mean_depth,
            };
            records.push(AblateRecord {
                row: row.clone(),
                manifest_hash: hash,
            });
            rows.push(row);
        }
    }

    let csv_path = out.join("ablate.csv");
    write_ablate_csv(&rows, &csv_path)?;
    let json_path = out.join("ablate.json");
    write_json_atomic(&json_path, &records)?;
    Ok(AblateOutcome {
        rows,
        records,
        failures,
        csv_path,
        json_path,
    })
}

fn manifest_config_with(base: &RunManifest, mode: MemoryMode, seed: u64) -> SearchConfig {
    SearchConfig {
        memory_mode: mode,
        seed,
        ..base.config.clone()
    }
}

pub fn write_ablate_csv(rows: &[AblateRow], path: &Path) -> Result<(), RunnerError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| RunnerError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    let bytes = writer.into_inner().map_err(|e| RunnerError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    write_atomic(path, &bytes)
}

pub fn read_ablate_csv(path: &Path) -> Result<Vec<AblateRow>, RunnerError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| RunnerError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    reader
        .deserialize()
        .collect::<Result<Vec<AblateRow>, _>>()
        .map_err(|e| RunnerError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub pairs: usize,
    pub class_examples: usize,
    pub pairs_path: PathBuf,
    pub classes_path: PathBuf,
}

/// The `label` command: read trees from a finished search run, label them
/// against regenerated ground truth, and export both datasets.
pub fn cmd_label(run_dir: &Path, out_dir: &Path) -> Result<LabelOutcome, RunnerError> {
    let manifest = read_run_manifest(run_dir)?;
    let problems = manifest.suite.resolve()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut pairs: Vec<PreferencePair> = Vec::new();
    let mut classes: Vec<ClassExample> = Vec::new();
    for problem in &problems {
        let tree_path = run_dir
            .join("problems")
            .join(&problem.id)
            .join("tree.json");
        let text = fs::read_to_string(&tree_path).map_err(io_err(&tree_path))?;
        let tree: SearchTree = serde_json::from_str(&text).map_err(|e| RunnerError::Parse {
            path: tree_path.display().to_string(),
            message: e.to_string(),
        })?;
        let correct = correct_terminals(&tree, &problem.answer);
        let labels = label_tree(&tree, &correct);
        pairs.extend(extract_preference_pairs(&labels));
        classes.extend(extract_class_examples(&labels));
    }

    let pairs_path = out_dir.join("pairs.jsonl");
    let classes_path = out_dir.join("classes.jsonl");
    labeling::export_jsonl(&pairs, &pairs_path)?;
    labeling::export_jsonl(&classes, &classes_path)?;
    Ok(LabelOutcome {
        pairs: pairs.len(),
        class_examples: classes.len(),
        pairs_path,
        classes_path,
    })
}

fn read_run_manifest(run_dir: &Path) -> Result<RunManifest, RunnerError> {
    let path = run_dir.join("run_manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| RunnerError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub curve_path: PathBuf,
    pub stage1_final_loss: f64,
    pub stage2_final_loss: f64,
    pub train_accuracy: f64,
    /// SHA-256 over the raw bytes of both input datasets; identifies what the
    /// checkpoint was trained on the same way manifest hashes identify runs.
    pub inputs_hash: String,
}

/// The `train-ref` command: featurize both datasets, run two-stage training,
/// and write checkpoint, loss curves, and a small report.
pub fn cmd_train_ref(
    pairs_path: &Path,
    classes_path: &Path,
    out_dir: &Path,
    schedule: TrainSchedule,
) -> Result<TrainOutcome, RunnerError> {
    let pair_bytes = fs::read(pairs_path).map_err(io_err(pairs_path))?;
    let class_bytes = fs::read(classes_path).map_err(io_err(classes_path))?;
    let mut hasher = Sha256::new();
    hasher.update(&pair_bytes);
    hasher.update(&class_bytes);
    let inputs_hash: String = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();

    let pairs: Vec<PreferencePair> = labeling::import_jsonl(pairs_path)?;
    let classes: Vec<ClassExample> = labeling::import_jsonl(classes_path)?;
    if pairs.is_empty() {
        return Err(RunnerError::Config(format!(
            "no preference pairs in {}",
            pairs_path.display()
        )));
    }
    if classes.is_empty() {
        return Err(RunnerError::Config(format!(
            "no class examples in {}",
            classes_path.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let pair_items: Vec<PairItem> = pairs.iter().map(PairItem::from_pair).collect();
    let class_items: Vec<ClassItem> = classes.iter().map(ClassItem::from_example).collect();
    let report: TrainReport = refprm::train(&pair_items, &class_items, schedule)?;

    let checkpoint_path = out_dir.join("checkpoint.json");
    refprm::save_checkpoint(&report.params, &checkpoint_path)?;
    let curve_path = out_dir.join("loss_curves.csv");
    refprm::write_loss_curve(&report.curve, &curve_path)?;

    let outcome = TrainOutcome {
        checkpoint_path,
        curve_path,
        stage1_final_loss: report.final_loss(1).unwrap_or(f64::NAN),
        stage2_final_loss: report.final_loss(2).unwrap_or(f64::NAN),
        train_accuracy: cls_accuracy(&report.params, &class_items)?,
        inputs_hash,
    };
    write_json_atomic(&out_dir.join("train_report.json"), &outcome)?;
    Ok(outcome)
}

/// A report rebuilt from the artifacts of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub manifest_hash: String,
    pub recorded: AggregateMetrics,
    pub recomputed: AggregateMetrics,
    pub consistent: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mismatches: Vec<String>,
}

/// The `report` command: recompute the aggregate from per-problem records,
/// re-derive structural metrics from each stored tree, and verify that the
/// event logs belong to the same manifest.
pub fn cmd_report(run_dir: &Path) -> Result<RunReport, RunnerError> {
    let manifest = read_run_manifest(run_dir)?;
    let hash = manifest.hash();
    let problems = manifest.suite.resolve()?;

    let aggregate_path = run_dir.join("aggregate.json");
    let text = fs::read_to_string(&aggregate_path).map_err(io_err(&aggregate_path))?;
    let recorded: AggregateMetrics =
        serde_json::from_str(&text).map_err(|e| RunnerError::Parse {
            path: aggregate_path.display().to_string(),
            message: e.to_string(),
        })?;

    let mut mismatches = Vec::new();
    let mut records = Vec::new();
    for problem in &problems {
        let dir = run_dir.join("problems").join(&problem.id);

        let metrics_path = dir.join("metrics.json");
        let text = fs::read_to_string(&metrics_path).map_err(io_err(&metrics_path))?;
        let metrics: ProblemMetrics =
            serde_json::from_str(&text).map_err(|e| RunnerError::Parse {
                path: metrics_path.display().to_string(),
                message: e.to_string(),
            })?;

        let tree_path = dir.join("tree.json");
        let text = fs::read_to_string(&tree_path).map_err(io_err(&tree_path))?;
        let tree: SearchTree = serde_json::from_str(&text).map_err(|e| RunnerError::Parse {
            path: tree_path.display().to_string(),
            message: e.to_string(),
        })?;
        let (trajectories, depth) = structural_metrics(&tree);
        if trajectories != metrics.trajectories || depth != metrics.depth {
            mismatches.push(format!(
                "{}: stored metrics ({}, {}) disagree with tree ({trajectories}, {depth})",
                problem.id, metrics.trajectories, metrics.depth
            ));
        }
        if let Err(e) = tree.validate() {
            mismatches.push(format!("{}: invalid tree: {e}", problem.id));
        }

        let events_path = dir.join("events.jsonl");
        let text = fs::read_to_string(&events_path).map_err(io_err(&events_path))?;
        let header: Option<EventRecord> = text
            .lines()
            .next()
            .and_then(|line| serde_json::from_str(line).ok());
        match header.and_then(|h| h.manifest_hash) {
            Some(h) if h == metrics.manifest_hash => {}
            other => mismatches.push(format!(
                "{}: event log manifest hash {other:?} does not match metrics",
                problem.id
            )),
        }

        records.push(metrics);
    }

    let recomputed = aggregate_metrics(&records, &manifest.config, &recorded.manifest_hash);
    if recomputed != recorded {
        mismatches.push("aggregate does not equal recomputation from records".into());
    }
    if recorded.manifest_hash != hash {
        mismatches.push(format!(
            "aggregate manifest hash {} does not match manifest {hash}",
            recorded.manifest_hash
        ));
    }

    let report = RunReport {
        manifest_hash: hash,
        recorded,
        recomputed,
        consistent: mismatches.is_empty(),
        mismatches,
    };
    write_json_atomic(&run_dir.join("report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryScope;

    fn test_manifest(dir: &Path) -> RunManifest {
        RunManifest {
            config: SearchConfig {
                num_rollouts: 8,
                seed: 3,
                max_depth: 8,
                ..SearchConfig::default()
            },
            backend: BackendSelection::Synthetic {
                noise_amplitude: 0.15,
            },
            suite: SuiteSource::Generated {
                family: Family::DistractorTree,
                count: 3,
                params: TaskParams {
                    depth: 3,
                    distractors: 2,
                    correct_width: 1,
                    trap_pool: 4,
                    seed: 11,
                },
            },
            output_dir: dir.to_path_buf(),
            timestamp: String::new(),
            version: default_version(),
            workers: 1,
            suite_workers: 1,
        }
    }

    #[test]
    fn manifest_hash_ignores_timestamp_and_output_dir() {
        let dir = tempfile::tempdir().unwrap();
        let a = test_manifest(dir.path());
        let mut b = a.clone();
        b.timestamp = "2031-01-01T00:00:00Z".into();
        b.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.config.seed = 4;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.workers = 2;
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn manifest_round_trips_through_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = test_manifest(dir.path());

        let toml_path = dir.path().join("run.toml");
        fs::write(&toml_path, toml::to_string(&manifest).unwrap()).unwrap();
        assert_eq!(load_manifest(&toml_path).unwrap(), manifest);

        let json_path = dir.path().join("run.json");
        fs::write(&json_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert_eq!(load_manifest(&json_path).unwrap(), manifest);

        let bad = dir.path().join("run.yaml");
        fs::write(&bad, "x").unwrap();
        assert!(matches!(
            load_manifest(&bad),
            Err(RunnerError::Config(_))
        ));
    }

    #[test]
    fn search_writes_all_artifacts_and_is_byte_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut manifest_a = test_manifest(&dir_a.path().join("run"));
        let mut manifest_b = test_manifest(&dir_b.path().join("run"));
        manifest_a.timestamp = "one".into();
        manifest_b.timestamp = "two".into();

        let outcome_a = cmd_search(&manifest_a).unwrap();
        let outcome_b = cmd_search(&manifest_b).unwrap();
        assert_eq!(outcome_a.exit_code(), EXIT_OK);
        assert_eq!(outcome_a.aggregate, outcome_b.aggregate);

        let problems = manifest_a.suite.resolve().unwrap();
        assert_eq!(outcome_a.aggregate.problems, problems.len());
        for problem in &problems {
            for file in ["tree.json", "events.jsonl", "memory.json", "metrics.json"] {
                let a = fs::read(
                    manifest_a
                        .output_dir
                        .join("problems")
                        .join(&problem.id)
                        .join(file),
                )
                .unwrap();
                let b = fs::read(
                    manifest_b
                        .output_dir
                        .join("problems")
                        .join(&problem.id)
                        .join(file),
                )
                .unwrap();
                assert_eq!(a, b, "{file} differs for {}", problem.id);
                assert!(!a.is_empty());
            }
        }
        let agg_a = fs::read(manifest_a.output_dir.join("aggregate.json")).unwrap();
        let agg_b = fs::read(manifest_b.output_dir.join("aggregate.json")).unwrap();
        assert_eq!(agg_a, agg_b);
    }

    #[test]
    fn metrics_record_ablation_label_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = test_manifest(&dir.path().join("run"));
        manifest.config.memory_mode = MemoryMode::None;
        let outcome = cmd_search(&manifest).unwrap();
        assert_eq!(outcome.aggregate.memory_mode, MemoryMode::None);
        let problems = manifest.suite.resolve().unwrap();
        let metrics_path = manifest
            .output_dir
            .join("problems")
            .join(&problems[0].id)
            .join("metrics.json");
        let metrics: ProblemMetrics =
            serde_json::from_str(&fs::read_to_string(metrics_path).unwrap()).unwrap();
        assert_eq!(metrics.memory_mode, MemoryMode::None);
        assert_eq!(metrics.manifest_hash, manifest.hash());
    }

    #[test]
    fn aggregate_equals_recomputation_from_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = test_manifest(&dir.path().join("run"));
        manifest.suite = SuiteSource::Generated {
            family: Family::ArithmeticChain,
            count: 10,
            params: TaskParams {
                seed: 5,
                ..TaskParams::default()
            },
        };
        let outcome = cmd_search(&manifest).unwrap();

        let problems = manifest.suite.resolve().unwrap();
        let mut records = Vec::new();
        for problem in &problems {
            let path = manifest
                .output_dir
                .join("problems")
                .join(&problem.id)
                .join("metrics.json");
            let metrics: ProblemMetrics =
                serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
            records.push(metrics);
        }
        assert_eq!(records.len(), 10);
        let recomputed = aggregate_metrics(&records, &manifest.config, &manifest.hash());
        assert_eq!(recomputed, outcome.aggregate);
    }

    #[test]
    fn report_validates_a_clean_run_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = test_manifest(&dir.path().join("run"));
        cmd_search(&manifest).unwrap();

        let report = cmd_report(&manifest.output_dir).unwrap();
        assert!(report.consistent, "mismatches: {:?}", report.mismatches);
        assert_eq!(report.recorded, report.recomputed);
        assert!(manifest.output_dir.join("report.json").is_file());

        // Corrupt one metrics file and expect the report to notice.
        let problems = manifest.suite.resolve().unwrap();
        let path = manifest
            .output_dir
            .join("problems")
            .join(&problems[0].id)
            .join("metrics.json");
        let mut metrics: ProblemMetrics =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        metrics.trajectories += 7;
        fs::write(&path, serde_json::to_string(&metrics).unwrap()).unwrap();
        let report = cmd_report(&manifest.output_dir).unwrap();
        assert!(!report.consistent);
    }

    #[test]
    fn ablate_emits_rows_for_every_mode_seed_combination() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = test_manifest(&dir.path().join("run"));
        manifest.config.num_rollouts = 6;
        let outcome = cmd_ablate(&manifest, &[1, 2]).unwrap();
        assert_eq!(outcome.rows.len(), 8);
        assert_eq!(outcome.exit_code(), EXIT_OK);

        let reparsed = read_ablate_csv(&outcome.csv_path).unwrap();
        assert_eq!(reparsed, outcome.rows);
        let sum_in_memory: f64 = outcome.rows.iter().map(|r| r.mean_trajectories).sum();
        let sum_reparsed: f64 = reparsed.iter().map(|r| r.mean_trajectories).sum();
        assert_eq!(sum_in_memory, sum_reparsed);

        let modes: std::collections::BTreeSet<&str> =
            outcome.rows.iter().map(|r| r.mode.as_str()).collect();
        assert_eq!(modes.len(), 4);

        // Each mode/seed variant runs under its own manifest hash.
        let records: Vec<AblateRecord> =
            serde_json::from_str(&fs::read_to_string(&outcome.json_path).unwrap()).unwrap();
        assert_eq!(records, outcome.records);
        let hashes: std::collections::BTreeSet<&str> = records
            .iter()
            .map(|r| r.manifest_hash.as_str())
            .collect();
        assert_eq!(hashes.len(), 8);
    }

    #[test]
    fn label_then_train_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = test_manifest(&dir.path().join("run"));
        manifest.config.num_rollouts = 12;
        manifest.suite = SuiteSource::Generated {
            family: Family::DistractorTree,
            count: 6,
            params: TaskParams {
                depth: 3,
                distractors: 2,
                correct_width: 1,
                trap_pool: 4,
                seed: 23,
            },
        };
        cmd_search(&manifest).unwrap();

        let label_dir = dir.path().join("datasets");
        let labels = cmd_label(&manifest.output_dir, &label_dir).unwrap();
        assert!(labels.class_examples > 0);
        assert!(labels.pairs_path.is_file());
        assert!(labels.classes_path.is_file());

        if labels.pairs > 0 {
            let train_dir = dir.path().join("model");
            let schedule = TrainSchedule {
                epochs_per_stage: 40,
                ..TrainSchedule::default()
            };
            let outcome =
                cmd_train_ref(&labels.pairs_path, &labels.classes_path, &train_dir, schedule)
                    .unwrap();
            assert!(outcome.checkpoint_path.is_file());
            assert!(outcome.curve_path.is_file());
            assert!(outcome.stage1_final_loss < std::f64::consts::LN_2);

            // Deterministic retrain: identical checkpoint bytes.
            let train_dir_b = dir.path().join("model_b");
            cmd_train_ref(&labels.pairs_path, &labels.classes_path, &train_dir_b, schedule)
                .unwrap();
            assert_eq!(
                fs::read(train_dir.join("checkpoint.json")).unwrap(),
                fs::read(train_dir_b.join("checkpoint.json")).unwrap()
            );
        }
    }

    #[test]
    fn suite_manifest_file_round_trips_and_rejects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let problems = generate_suite(
            Family::TokenPath,
            4,
            TaskParams {
                seed: 9,
                ..TaskParams::default()
            },
        )
        .unwrap();
        let manifest = crate::tasks::suite_manifest(&problems);
        let path = dir.path().join("suite.json");
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();

        let source = SuiteSource::ManifestFile { path: path.clone() };
        assert_eq!(source.resolve().unwrap(), problems);

        let mut tampered = manifest.clone();
        tampered.entries[0].answer_hash = "0".repeat(64);
        fs::write(&path, serde_json::to_string(&tampered).unwrap()).unwrap();
        assert!(matches!(
            source.resolve(),
            Err(RunnerError::Parse { .. })
        ));
    }

    #[test]
    fn persistent_scope_runs_share_one_store() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = test_manifest(&dir.path().join("run"));
        manifest.config.memory_scope = MemoryScope::Persistent;
        let outcome = cmd_search(&manifest).unwrap();
        assert_eq!(outcome.failures, 0);

        manifest.workers = 2;
        assert!(matches!(
            cmd_search(&manifest),
            Err(RunnerError::Config(_))
        ));
    }

    #[test]
    fn exit_codes_follow_error_kinds() {
        assert_eq!(RunnerError::Config("x".into()).exit_code(), EXIT_CONFIG);
        assert_eq!(
            RunnerError::Parse {
                path: "p".into(),
                message: "m".into()
            }
            .exit_code(),
            EXIT_CONFIG
        );
        assert_eq!(
            RunnerError::Io {
                path: "p".into(),
                source: std::io::Error::other("boom")
            }
            .exit_code(),
            EXIT_FAILED
        );
    }
}
