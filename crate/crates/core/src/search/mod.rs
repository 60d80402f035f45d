//! Memory-guided Monte Carlo tree search.
//!
//! A rollout is select -> expand -> simulate -> backpropagate over a shared
//! tree. Selection walks UCT argmax; expansion asks the policy backend for
//! candidates and drops ones the fallacy blocklist rejects; simulation is a
//! greedy, expanding descent over process-reward values (not a random
//! playout); backpropagation folds the terminal's reward into running means
//! along the path. High-value and low-value steps are written to the shared
//! heuristics/fallacies memory as they are scored.

mod config;
mod engine;
mod event;
mod node;

pub use config::{MemoryMode, SearchConfig, SearchConfigError};
pub use engine::{
    answer_of, backpropagate, run_search, run_search_in, run_search_parallel, select_leaf,
    structural_metrics, uct_score, SearchError, SearchResult,
};
pub use event::{EventPhase, EventRecord};
pub use node::{NodeId, SearchNode, SearchTree};
