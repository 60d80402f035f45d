//! Dual shared memory: a heuristics store for high-value steps, a fallacies
//! store for low-value ones, and the manager rules that keep both parsimonious.
//!
//! The manager is deliberately deterministic: normalization plus exact-key
//! dedup (keeping the more extreme value) plus capacity eviction of the
//! least extreme entry. Expansion consumes memory through an immutable
//! [`MemoryDigest`] snapshot, so a rollout sees one consistent view no matter
//! what concurrent writers do afterwards.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Which store an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Heuristic,
    Fallacy,
}

impl MemoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryKind::Heuristic => "heuristic",
            MemoryKind::Fallacy => "fallacy",
        }
    }
}

/// Whether memory outlives a single problem's search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemoryScope {
    /// Cleared when a new problem begins (search initializes memory empty).
    #[default]
    PerProblem,
    /// Entries survive across problems; digests still filter by problem, so
    /// this affects retention only, not cross-problem transfer.
    Persistent,
}

/// One remembered step with its score at write time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub problem_id: String,
    pub step_content: String,
    /// Canonical form of `step_content`: whitespace-collapsed, case-folded.
    pub normalized_key: String,
    pub value: f64,
    pub kind: MemoryKind,
    /// Rollout index that wrote the entry.
    pub source_rollout: u64,
    /// Node id that wrote the entry.
    pub source_node: u64,
    /// Monotone insertion sequence, assigned by the store. Survives dedup
    /// updates: the entry keeps its original age while its value may move.
    pub created_seq: u64,
}

impl MemoryEntry {
    /// Builds an entry ready for [`MemoryStore::store`]; the store assigns
    /// `created_seq` and recomputes `normalized_key`.
    pub fn new(
        problem_id: impl Into<String>,
        step_content: impl Into<String>,
        value: f64,
        kind: MemoryKind,
        source_rollout: u64,
        source_node: u64,
    ) -> Self {
        let step_content = step_content.into();
        let normalized_key = normalize(&step_content);
        MemoryEntry {
            problem_id: problem_id.into(),
            step_content,
            normalized_key,
            value,
            kind,
            source_rollout,
            source_node,
            created_seq: 0,
        }
    }

    /// Distance from neutral, used for dedup and eviction ordering: for
    /// heuristics higher value is more extreme, for fallacies lower is.
    fn extremity(&self) -> f64 {
        match self.kind {
            MemoryKind::Heuristic => self.value,
            MemoryKind::Fallacy => 1.0 - self.value,
        }
    }
}

/// Canonical key: whitespace runs collapsed to single spaces, ends trimmed,
/// characters case-folded.
pub fn normalize(step_content: &str) -> String {
    step_content
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Outcome of a store attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreOutcome {
    /// Fresh insert, no capacity pressure.
    Stored,
    /// Same-kind entry with the same key and problem already existed;
    /// `kept_new` says whether the incoming (more extreme) value replaced it.
    Deduplicated { kept_new: bool },
    /// Insert overflowed capacity and the least extreme entry was dropped.
    /// When the incoming entry is itself the least extreme, `evicted_key` is
    /// its own key and nothing persisted.
    Evicted { evicted_key: String },
}

impl StoreOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            StoreOutcome::Stored => "stored",
            StoreOutcome::Deduplicated { .. } => "deduplicated",
            StoreOutcome::Evicted { .. } => "evicted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("{kind:?} entry value {value} violates threshold {threshold}")]
    ThresholdViolation {
        kind: MemoryKind,
        value: f64,
        threshold: f64,
    },
    #[error("entry value {0} outside [0,1]")]
    ValueOutOfRange(f64),
    #[error("invalid memory configuration: {0}")]
    InvalidConfig(String),
}

/// Immutable snapshot handed to expansion: top heuristics as hints, all
/// fallacy keys as a blocklist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDigest {
    /// Hint step contents, highest value first, ties broken by older entry.
    pub heuristic_hints: Vec<String>,
    /// Normalized keys of every fallacy known for the problem at snapshot time.
    pub fallacy_blocklist: BTreeSet<String>,
    /// Snapshot sequence number, monotone per store.
    pub digest_seq: u64,
}

impl MemoryDigest {
    /// An empty digest (used when memory is disabled).
    pub fn empty() -> Self {
        MemoryDigest {
            heuristic_hints: Vec::new(),
            fallacy_blocklist: BTreeSet::new(),
            digest_seq: 0,
        }
    }

    /// True iff the candidate, after normalization, is a known fallacy.
    pub fn is_blocked(&self, candidate: &str) -> bool {
        self.fallacy_blocklist.contains(&normalize(candidate))
    }
}

/// Serializable dump of both stores, sorted by insertion sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryDump {
    pub heuristics: Vec<MemoryEntry>,
    pub fallacies: Vec<MemoryEntry>,
}

/// The dual store plus manager rules. Not internally synchronized: callers
/// share it behind a lock, which matches how the search engine serializes
/// writes while handing each rollout a snapshot digest.
#[derive(Debug, Clone)]
pub struct MemoryStore {
    heuristics: BTreeMap<(String, String), MemoryEntry>,
    fallacies: BTreeMap<(String, String), MemoryEntry>,
    capacity_per_kind: usize,
    scope: MemoryScope,
    tau_pos: f64,
    tau_neg: f64,
    next_seq: u64,
    next_digest_seq: u64,
}

impl MemoryStore {
    /// Creates a store enforcing `value >= tau_pos` for heuristics and
    /// `value <= tau_neg` for fallacies.
    pub fn new(
        capacity_per_kind: usize,
        scope: MemoryScope,
        tau_pos: f64,
        tau_neg: f64,
    ) -> Result<Self, MemoryError> {
        if capacity_per_kind == 0 {
            return Err(MemoryError::InvalidConfig(
                "capacity_per_kind must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&tau_pos) || !(0.0..=1.0).contains(&tau_neg) {
            return Err(MemoryError::InvalidConfig(format!(
                "thresholds must lie in [0,1], got tau_pos={tau_pos} tau_neg={tau_neg}"
            )));
        }
        if tau_neg >= tau_pos {
            return Err(MemoryError::InvalidConfig(format!(
                "tau_neg ({tau_neg}) must be below tau_pos ({tau_pos})"
            )));
        }
        Ok(MemoryStore {
            heuristics: BTreeMap::new(),
            fallacies: BTreeMap::new(),
            capacity_per_kind,
            scope,
            tau_pos,
            tau_neg,
            next_seq: 0,
            next_digest_seq: 0,
        })
    }

    pub fn scope(&self) -> MemoryScope {
        self.scope
    }

    pub fn heuristic_count(&self) -> usize {
        self.heuristics.len()
    }

    pub fn fallacy_count(&self) -> usize {
        self.fallacies.len()
    }

    /// Prepares the store for a new problem. Under per-problem scope all
    /// entries are dropped; sequence counters keep advancing so entry ages
    /// stay unique across the whole run.
    pub fn begin_problem(&mut self) {
        if self.scope == MemoryScope::PerProblem {
            self.heuristics.clear();
            self.fallacies.clear();
        }
    }

    /// Inserts an entry under the manager rules. The entry's threshold is
    /// checked against the store's `(tau_pos, tau_neg)`; its key is
    /// recomputed from content; `created_seq` is assigned here.
    pub fn store(&mut self, mut entry: MemoryEntry) -> Result<StoreOutcome, MemoryError> {
        if !(0.0..=1.0).contains(&entry.value) {
            return Err(MemoryError::ValueOutOfRange(entry.value));
        }
        match entry.kind {
            MemoryKind::Heuristic if entry.value < self.tau_pos => {
                return Err(MemoryError::ThresholdViolation {
                    kind: entry.kind,
                    value: entry.value,
                    threshold: self.tau_pos,
                });
            }
            MemoryKind::Fallacy if entry.value > self.tau_neg => {
                return Err(MemoryError::ThresholdViolation {
                    kind: entry.kind,
                    value: entry.value,
                    threshold: self.tau_neg,
                });
            }
            _ => {}
        }
        entry.normalized_key = normalize(&entry.step_content);
        let capacity = self.capacity_per_kind;
        let key = (entry.problem_id.clone(), entry.normalized_key.clone());
        let map = match entry.kind {
            MemoryKind::Heuristic => &mut self.heuristics,
            MemoryKind::Fallacy => &mut self.fallacies,
        };

        if let Some(existing) = map.get_mut(&key) {
            let kept_new = entry.extremity() > existing.extremity();
            if kept_new {
                // Identity (created_seq) survives; the observation updates.
                entry.created_seq = existing.created_seq;
                *existing = entry;
            }
            return Ok(StoreOutcome::Deduplicated { kept_new });
        }

        entry.created_seq = self.next_seq;
        self.next_seq += 1;
        map.insert(key, entry);

        if map.len() > capacity {
            // Least extreme value goes first; among ties the oldest entry.
            let victim = map
                .iter()
                .min_by(|(_, a), (_, b)| {
                    a.extremity()
                        .partial_cmp(&b.extremity())
                        .expect("extremity is never NaN")
                        .then(a.created_seq.cmp(&b.created_seq))
                })
                .map(|(k, _)| k.clone())
                .expect("overflowing map is non-empty");
            let evicted = map.remove(&victim).expect("victim key present");
            return Ok(StoreOutcome::Evicted {
                evicted_key: evicted.normalized_key,
            });
        }

        Ok(StoreOutcome::Stored)
    }

    /// Takes an immutable digest for one problem: the top `max_hints`
    /// heuristics by value (ties to older entries) and the full fallacy
    /// blocklist. Later store mutations never alter a returned digest.
    pub fn snapshot(&mut self, problem_id: &str, max_hints: usize) -> MemoryDigest {
        let digest_seq = self.next_digest_seq;
        self.next_digest_seq += 1;

        let mut hints: Vec<&MemoryEntry> = self
            .heuristics
            .values()
            .filter(|e| e.problem_id == problem_id)
            .collect();
        hints.sort_by(|a, b| {
            b.value
                .partial_cmp(&a.value)
                .expect("entry value is never NaN")
                .then(a.created_seq.cmp(&b.created_seq))
        });
        let heuristic_hints = hints
            .into_iter()
            .take(max_hints)
            .map(|e| e.step_content.clone())
            .collect();

        let fallacy_blocklist = self
            .fallacies
            .values()
            .filter(|e| e.problem_id == problem_id)
            .map(|e| e.normalized_key.clone())
            .collect();

        MemoryDigest {
            heuristic_hints,
            fallacy_blocklist,
            digest_seq,
        }
    }

    /// Both stores, each sorted by insertion sequence.
    pub fn dump(&self) -> MemoryDump {
        let mut heuristics: Vec<MemoryEntry> = self.heuristics.values().cloned().collect();
        let mut fallacies: Vec<MemoryEntry> = self.fallacies.values().cloned().collect();
        heuristics.sort_by_key(|e| e.created_seq);
        fallacies.sort_by_key(|e| e.created_seq);
        MemoryDump {
            heuristics,
            fallacies,
        }
    }
}
