//! Process-reward-guided Monte Carlo tree search over reasoning steps, with a
//! shared dual memory (heuristics and fallacies) that reuses verified steps and
//! prunes recurring errors across rollouts.
//!
//! The crate is organized around a small number of subsystems:
//!
//! - [`search`] — the tree, UCT selection, memory-conditioned expansion,
//!   value-greedy simulation, and backpropagation.
//! - [`memory`] — the dual store (heuristics / fallacies) plus the manager
//!   rules that keep it parsimonious, and the digests consumed by expansion.
//! - [`prm`] — the process-reward interface: scalar values in `[0,1]`, the
//!   five-way value classification, and conversions between the two.
//! - [`labeling`] — turns a finished, correctness-marked tree into per-step
//!   quality values, preference pairs, and class examples.
//! - [`refprm`] — a desk-scale differentiable reward model trained in two
//!   stages (pairwise preference, then 5-way classification) with
//!   hand-derived gradients.
//! - [`tasks`] — deterministic synthetic reasoning environments with exact
//!   oracles, used as policy and reward backends for verifiable runs.
//! - [`llm`] — remote policy/reward backends over a chat-completions HTTP API.
//! - [`runner`] — the run manifest, file outputs, and the subcommand
//!   implementations behind the `memtree` binary.

pub mod backend;
pub mod det;
pub mod labeling;
pub mod llm;
pub mod memory;
pub mod prm;
pub mod refprm;
pub mod runner;
pub mod search;
pub mod tasks;

pub use backend::{BackendError, PolicyBackend};
pub use memory::{MemoryDigest, MemoryEntry, MemoryKind, MemoryStore, StoreOutcome};
pub use prm::{class_of_value, value_of_class, PrmBackend, PrmScore, ValueClass};
pub use search::{
    run_search, run_search_parallel, MemoryMode, SearchConfig, SearchResult, SearchTree,
};
pub use tasks::{Family, Problem};
