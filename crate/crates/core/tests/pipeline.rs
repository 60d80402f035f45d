//! End-to-end runs over real artifacts: search output feeds labeling feeds
//! training, and the event logs are complete enough to audit and replay.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use memtree::labeling::{correct_terminals, label_tree};
use memtree::prm::class_of_value;
use memtree::refprm::TrainSchedule;
use memtree::runner::{
    cmd_label, cmd_search, cmd_train_ref, run_suite, BackendSelection, RunManifest, SuiteSource,
};
use memtree::search::{EventPhase, EventRecord, SearchConfig, SearchTree};
use memtree::memory::MemoryScope;
use memtree::tasks::{generate_suite, Family, NoisyOraclePrm, SyntheticPolicy, TaskParams};

fn manifest(dir: &Path, noise: f64, count: usize, rollouts: u64) -> RunManifest {
    RunManifest {
        config: SearchConfig {
            num_rollouts: rollouts,
            seed: 9,
            max_depth: 10,
            ..SearchConfig::default()
        },
        backend: BackendSelection::Synthetic {
            noise_amplitude: noise,
        },
        suite: SuiteSource::Generated {
            family: Family::DistractorTree,
            count,
            params: TaskParams {
                depth: 3,
                distractors: 2,
                correct_width: 1,
                trap_pool: 4,
                seed: 31,
            },
        },
        output_dir: dir.to_path_buf(),
        timestamp: String::new(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        workers: 1,
        suite_workers: 1,
    }
}

fn load_tree(run_dir: &Path, problem_id: &str) -> SearchTree {
    let path = run_dir.join("problems").join(problem_id).join("tree.json");
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn load_events(run_dir: &Path, problem_id: &str) -> Vec<EventRecord> {
    let path = run_dir
        .join("problems")
        .join(problem_id)
        .join("events.jsonl");
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| serde_json::from_str(line).unwrap())
        .collect()
}

#[test]
fn labels_on_solved_trees_follow_the_distance_recurrence() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest(&dir.path().join("run"), 0.0, 4, 16);
    let outcome = cmd_search(&manifest).unwrap();
    assert_eq!(outcome.failures, 0);

    let problems = manifest.suite.resolve().unwrap();
    let mut solved = 0;
    for problem in &problems {
        let record = outcome
            .records
            .iter()
            .find(|r| r.problem_id == problem.id)
            .unwrap();
        if !record.success {
            continue;
        }
        solved += 1;

        let tree = load_tree(&manifest.output_dir, &problem.id);
        let correct = correct_terminals(&tree, &problem.answer);
        assert!(!correct.is_empty(), "solved tree must mark a correct terminal");
        let labels = label_tree(&tree, &correct);

        for label in &labels {
            assert!((0.0..=1.0).contains(&label.value));
            assert_eq!(label.class, class_of_value(label.value).unwrap());
            match label.distance {
                Some(_) => {
                    assert_eq!(label.error_flag, 0);
                    assert!(label.weight >= 0.0);
                }
                None => {
                    assert_eq!(label.error_flag, 1);
                    assert!(label.weight <= 0.0);
                }
            }
            // A step that lands on a correct terminal closes the gap fully.
            if label.distance == Some(0) {
                assert_eq!(label.value, 1.0);
            }
        }
    }
    assert!(solved >= 3, "exact oracle should solve most instances");
}

#[test]
fn backprop_replays_bit_exactly_from_the_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest(&dir.path().join("run"), 0.15, 2, 20);
    cmd_search(&manifest).unwrap();

    for problem in manifest.suite.resolve().unwrap() {
        let tree = load_tree(&manifest.output_dir, &problem.id);
        let events = load_events(&manifest.output_dir, &problem.id);
        assert_eq!(events[0].phase, EventPhase::Manifest);

        let mut replay: BTreeMap<u64, (u64, f64)> = BTreeMap::new();
        for event in &events {
            if event.phase == EventPhase::Backprop {
                let slot = replay.entry(event.node_id).or_insert((0, 0.0));
                slot.0 += 1;
                slot.1 += event.value;
            }
        }
        assert!(!replay.is_empty());

        for node in tree.nodes() {
            match replay.get(&node.id.0) {
                Some((count, sum)) => {
                    assert_eq!(node.visit_count, *count, "node {}", node.id.0);
                    assert_eq!(
                        node.value,
                        sum / *count as f64,
                        "running mean must replay bit-exactly for node {}",
                        node.id.0
                    );
                }
                None => assert_eq!(node.visit_count, 0, "unvisited node {}", node.id.0),
            }
        }
        let root_visits = replay.get(&0).map(|(c, _)| *c).unwrap_or(0);
        assert_eq!(root_visits, manifest.config.num_rollouts);
    }
}

#[test]
fn event_log_shows_zero_blocklisted_expansions_and_sound_writes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest(&dir.path().join("run"), 0.15, 3, 24);
    cmd_search(&manifest).unwrap();

    let mut attaches = 0usize;
    let mut blocked = 0usize;
    let mut writes = 0usize;
    for problem in manifest.suite.resolve().unwrap() {
        let events = load_events(&manifest.output_dir, &problem.id);

        // The digest event at each rollout start carries the blocklist the
        // whole rollout must honor.
        let mut blocklist: BTreeMap<u64, BTreeSet<String>> = BTreeMap::new();
        for event in &events {
            if event.phase == EventPhase::Digest {
                blocklist.insert(
                    event.rollout,
                    event.blocklist.clone().unwrap_or_default().into_iter().collect(),
                );
            }
        }

        for event in &events {
            match event.phase {
                EventPhase::ExpandAttach => {
                    attaches += 1;
                    let key = event.normalized_key.as_ref().expect("attach carries key");
                    let list = &blocklist[&event.rollout];
                    assert!(
                        !list.contains(key),
                        "rollout {} attached blocklisted step {key:?}",
                        event.rollout
                    );
                }
                EventPhase::ExpandBlocked => {
                    blocked += 1;
                    let key = event.normalized_key.as_ref().expect("block carries key");
                    assert!(
                        blocklist[&event.rollout].contains(key),
                        "rollout {} blocked a step not on its blocklist",
                        event.rollout
                    );
                }
                EventPhase::MemoryWrite => {
                    writes += 1;
                    let kind = event.kind.as_deref().expect("write carries kind");
                    match kind {
                        "heuristic" => assert!(event.value >= manifest.config.tau_pos),
                        "fallacy" => assert!(event.value <= manifest.config.tau_neg),
                        other => panic!("unknown memory kind {other}"),
                    }
                }
                _ => {}
            }
        }

        // The final dump must itself satisfy the thresholds and only contain
        // keys that a write event mentioned.
        let memory_path = manifest
            .output_dir
            .join("problems")
            .join(&problem.id)
            .join("memory.json");
        let dump: memtree::memory::MemoryDump =
            serde_json::from_str(&fs::read_to_string(memory_path).unwrap()).unwrap();
        let written_keys: BTreeSet<&str> = events
            .iter()
            .filter(|e| e.phase == EventPhase::MemoryWrite)
            .filter_map(|e| e.normalized_key.as_deref())
            .collect();
        for entry in &dump.heuristics {
            assert!(entry.value >= manifest.config.tau_pos);
            assert!(written_keys.contains(entry.normalized_key.as_str()));
        }
        for entry in &dump.fallacies {
            assert!(entry.value <= manifest.config.tau_neg);
            assert!(written_keys.contains(entry.normalized_key.as_str()));
        }
    }
    assert!(attaches > 0);
    assert!(blocked > 0, "noisy distractor runs should prune something");
    assert!(writes > 0);
}

#[test]
fn search_label_train_pipeline_produces_a_working_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = manifest(&dir.path().join("run"), 0.0, 6, 20);
    // Depth 2: the answer step labels 1.0 while its trap siblings label 0,
    // so sibling preference pairs exist. At depth 3 no sibling set can have
    // both a >=0.8 and a <=0.2 member (on-path values step by thirds).
    manifest.suite = SuiteSource::Generated {
        family: Family::DistractorTree,
        count: 6,
        params: TaskParams {
            depth: 2,
            distractors: 2,
            correct_width: 1,
            trap_pool: 4,
            seed: 31,
        },
    };
    cmd_search(&manifest).unwrap();

    let datasets = dir.path().join("datasets");
    let labels = cmd_label(&manifest.output_dir, &datasets).unwrap();
    assert!(labels.pairs > 0, "correct terminals sit next to traps");
    assert!(labels.class_examples > labels.pairs);

    let model_dir = dir.path().join("model");
    let schedule = TrainSchedule {
        epochs_per_stage: 80,
        ..TrainSchedule::default()
    };
    let outcome =
        cmd_train_ref(&labels.pairs_path, &labels.classes_path, &model_dir, schedule).unwrap();
    assert!(outcome.stage1_final_loss.is_finite());
    assert!(
        outcome.stage1_final_loss < std::f64::consts::LN_2,
        "preference loss must fall below its ln(2) start"
    );
    assert!(
        outcome.stage2_final_loss < 5.0f64.ln(),
        "classification loss must fall below its ln(5) start"
    );
    assert!(outcome.train_accuracy > 0.5);

    // Curves: stage 1 then stage 2, epoch 0 anchored at the analytic starts.
    let curve = fs::read_to_string(&outcome.curve_path).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("epoch,stage,loss"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(first[1], "1");
    let start: f64 = first[2].parse().unwrap();
    assert!((start - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn persistent_scope_carries_memory_between_problems() {
    let problems = generate_suite(
        Family::DistractorTree,
        3,
        TaskParams {
            depth: 3,
            distractors: 2,
            correct_width: 1,
            trap_pool: 4,
            seed: 77,
        },
    )
    .unwrap();
    let config = SearchConfig {
        num_rollouts: 12,
        memory_scope: MemoryScope::Persistent,
        seed: 4,
        ..SearchConfig::default()
    };
    let policy = SyntheticPolicy;
    let prm = NoisyOraclePrm {
        seed: 4,
        amplitude: 0.15,
    };
    let runs = run_suite(&problems, &config, &policy, &prm, 1, 1, "test-hash").unwrap();
    assert_eq!(runs.len(), 3);

    let last = &runs[2].result.memory;
    let sources: BTreeSet<&str> = last
        .heuristics
        .iter()
        .chain(last.fallacies.iter())
        .map(|e| e.problem_id.as_str())
        .collect();
    assert!(
        sources.len() > 1,
        "persistent store should retain entries from earlier problems: {sources:?}"
    );

    // Per-problem scope resets between problems.
    let config = SearchConfig {
        memory_scope: MemoryScope::PerProblem,
        ..config
    };
    let runs = run_suite(&problems, &config, &policy, &prm, 1, 1, "test-hash").unwrap();
    for run in &runs {
        let dump = &run.result.memory;
        for entry in dump.heuristics.iter().chain(dump.fallacies.iter()) {
            assert_eq!(entry.problem_id, run.problem.id);
        }
    }
}
