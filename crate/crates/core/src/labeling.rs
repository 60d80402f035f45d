//! Step-quality labeling over finished search trees and dataset extraction.
//!
//! Every non-root node gets a value from the recurrence
//! `v_k = max(v_{k-1} + w, 0)` with `v_0 = 0`, where the weight depends on
//! the node's reasoning distance `m` (edges to the nearest correct terminal
//! in its subtree) and error flag `r` (1 when no correct terminal is
//! reachable). Labeled trees then yield preference pairs (sibling steps with
//! contrasting values) and five-class examples for training step scorers.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

use crate::prm::{class_of_value, ValueClass};
use crate::search::{NodeId, SearchTree};

/// One labeled step: the node's full prefix `s_1..s_k`, the recurrence
/// ingredients, and the resulting value and class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledStep {
    pub problem_id: String,
    pub path_prefix: Vec<String>,
    pub step_index: u32,
    pub value: f64,
    pub weight: f64,
    /// Minimum edges to a correct terminal after taking this step; `None`
    /// when no correct terminal is reachable.
    pub distance: Option<u32>,
    pub error_flag: u8,
    pub class: ValueClass,
}

/// Sibling steps under a shared context with contrasting values:
/// `v_pos >= 0.8` and `v_neg <= 0.2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub problem_id: String,
    pub context: Vec<String>,
    #[serde(rename = "chosen")]
    pub preferred: String,
    #[serde(rename = "rejected")]
    pub dispreferred: String,
    pub v_pos: f64,
    pub v_neg: f64,
}

/// One five-class training example; `label` is the bin of `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExample {
    pub problem_id: String,
    pub context: Vec<String>,
    pub step: String,
    pub label: ValueClass,
    pub value: f64,
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid record: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
}

/// Terminals whose extracted answer matches the expected one.
pub fn correct_terminals(tree: &SearchTree, answer: &str) -> BTreeSet<NodeId> {
    tree.terminal_ids()
        .into_iter()
        .filter(|id| tree.node(*id).answer.as_deref() == Some(answer))
        .collect()
}

/// Minimum edges from `node` to any correct terminal in its subtree
/// (`Some(0)` when the node itself is correct), `None` if there is none.
pub fn reasoning_distance(
    tree: &SearchTree,
    node: NodeId,
    correct: &BTreeSet<NodeId>,
) -> Option<u32> {
    distance_table(tree, correct)[node.index()]
}

/// Distances for every node at once. Children always carry larger ids than
/// their parents, so one reverse pass is a post-order fold.
fn distance_table(tree: &SearchTree, correct: &BTreeSet<NodeId>) -> Vec<Option<u32>> {
    let mut dist: Vec<Option<u32>> = vec![None; tree.len()];
    for index in (0..tree.len()).rev() {
        let id = NodeId(index as u64);
        if correct.contains(&id) {
            dist[index] = Some(0);
            continue;
        }
        dist[index] = tree
            .node(id)
            .children
            .iter()
            .filter_map(|c| dist[c.index()])
            .min()
            .map(|m| m + 1);
    }
    dist
}

/// Weight of a step with finite reasoning distance `m` and error flag `r`:
/// `(1 - v_prev) / (m + 1) * (1 - 2r)`.
pub fn step_weight(v_prev: f64, m: u32, r: u8) -> f64 {
    debug_assert!((0.0..=1.0).contains(&v_prev));
    debug_assert!(r <= 1);
    (1.0 - v_prev) / ((m + 1) as f64) * ((1 - 2 * r as i32) as f64)
}

/// Weight of a step from which no correct answer is reachable: the distance
/// is unbounded, so the penalty takes its most negative finite form,
/// `-(1 - v_prev)`.
pub fn unreachable_step_weight(v_prev: f64) -> f64 {
    -(1.0 - v_prev)
}

/// Labels every non-root node of a finished tree. `correct` holds the ids
/// of terminals that reached the true answer; emission is in node-id order.
pub fn label_tree(tree: &SearchTree, correct: &BTreeSet<NodeId>) -> Vec<LabeledStep> {
    let dist = distance_table(tree, correct);
    let mut values = vec![0.0f64; tree.len()];
    let mut labels = Vec::with_capacity(tree.len().saturating_sub(1));
    for index in 1..tree.len() {
        let id = NodeId(index as u64);
        let node = tree.node(id);
        let parent = node.parent.expect("non-root nodes have parents");
        let v_prev = values[parent.index()];
        let (weight, error_flag) = match dist[index] {
            Some(m) => (step_weight(v_prev, m, 0), 0),
            None => (unreachable_step_weight(v_prev), 1),
        };
        let value = (v_prev + weight).max(0.0);
        values[index] = value;
        labels.push(LabeledStep {
            problem_id: tree.problem_id.clone(),
            path_prefix: tree.prefix_steps(id),
            step_index: node.depth,
            value,
            weight,
            distance: dist[index],
            error_flag,
            class: class_of_value(value).expect("recurrence keeps values in the unit interval"),
        });
    }
    labels
}

/// All cross-product pairs of sibling steps whose values clear the
/// thresholds, ordered by (context, preferred emission index, dispreferred
/// emission index).
pub fn extract_preference_pairs(labels: &[LabeledStep]) -> Vec<PreferencePair> {
    let mut groups: BTreeMap<&[String], Vec<&LabeledStep>> = BTreeMap::new();
    for label in labels {
        let split = label.path_prefix.len() - 1;
        groups
            .entry(&label.path_prefix[..split])
            .or_default()
            .push(label);
    }
    let mut pairs = Vec::new();
    for (context, group) in groups {
        for pos in group.iter().filter(|l| l.value >= 0.8) {
            for neg in group.iter().filter(|l| l.value <= 0.2) {
                let preferred = pos.path_prefix.last().expect("non-empty prefix");
                let dispreferred = neg.path_prefix.last().expect("non-empty prefix");
                if preferred == dispreferred {
                    continue;
                }
                pairs.push(PreferencePair {
                    problem_id: pos.problem_id.clone(),
                    context: context.to_vec(),
                    preferred: preferred.clone(),
                    dispreferred: dispreferred.clone(),
                    v_pos: pos.value,
                    v_neg: neg.value,
                });
            }
        }
    }
    pairs
}

/// One classification example per labeled step.
pub fn extract_class_examples(labels: &[LabeledStep]) -> Vec<ClassExample> {
    labels
        .iter()
        .map(|label| {
            let split = label.path_prefix.len() - 1;
            ClassExample {
                problem_id: label.problem_id.clone(),
                context: label.path_prefix[..split].to_vec(),
                step: label.path_prefix[split].clone(),
                label: label.class,
                value: label.value,
            }
        })
        .collect()
}

/// Writes records as JSONL: one object per line, newline-terminated.
pub fn export_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<(), LabelError> {
    let display = path.display().to_string();
    let io_err = |source| LabelError::Io {
        path: display.clone(),
        source,
    };
    let mut out = Vec::new();
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| LabelError::Schema {
            path: display.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err)
}

/// Reads a JSONL file back; schema violations name the offending line.
pub fn import_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, LabelError> {
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| LabelError::Io {
        path: display.clone(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| LabelError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| LabelError::Schema {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(records)
}

/// Convenience for streaming writers that already hold an output handle.
pub fn write_jsonl_line<W: Write, T: Serialize>(mut w: W, record: &T) -> std::io::Result<()> {
    let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")
}
