//! Search configuration and the memory ablation switch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::MemoryScope;

/// Which memory components participate in a run. `NoHeuristics` and
/// `NoFallacies` drop one side; `None` disables both writing and pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    #[default]
    Full,
    NoHeuristics,
    NoFallacies,
    None,
}

impl MemoryMode {
    pub fn heuristics_enabled(self) -> bool {
        matches!(self, MemoryMode::Full | MemoryMode::NoFallacies)
    }

    pub fn fallacies_enabled(self) -> bool {
        matches!(self, MemoryMode::Full | MemoryMode::NoHeuristics)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MemoryMode::Full => "full",
            MemoryMode::NoHeuristics => "no_heuristics",
            MemoryMode::NoFallacies => "no_fallacies",
            MemoryMode::None => "none",
        }
    }

    pub const ALL: [MemoryMode; 4] = [
        MemoryMode::Full,
        MemoryMode::NoHeuristics,
        MemoryMode::NoFallacies,
        MemoryMode::None,
    ];
}

impl std::str::FromStr for MemoryMode {
    type Err = SearchConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(MemoryMode::Full),
            "no_heuristics" => Ok(MemoryMode::NoHeuristics),
            "no_fallacies" => Ok(MemoryMode::NoFallacies),
            "none" => Ok(MemoryMode::None),
            other => Err(SearchConfigError::Invalid(format!(
                "unknown memory mode {other:?} (expected full|no_heuristics|no_fallacies|none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchConfigError {
    #[error("invalid search config: {0}")]
    Invalid(String),
}

/// Knobs for one search run. `exploration_weight` is the UCT epsilon;
/// `tau_pos`/`tau_neg` are the heuristic/fallacy write thresholds;
/// `uct_times_two` switches the exploration term from
/// `sqrt(ln N_p / N_n)` to `sqrt(2 ln N_p / N_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub num_rollouts: u64,
    pub exploration_weight: f64,
    pub tau_pos: f64,
    pub tau_neg: f64,
    pub max_depth: u32,
    pub max_children: usize,
    pub seed: u64,
    pub memory_mode: MemoryMode,
    pub uct_times_two: bool,
    pub memory_capacity: usize,
    pub max_hints: usize,
    pub memory_scope: MemoryScope,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            num_rollouts: 16,
            exploration_weight: 1.0,
            tau_pos: 0.8,
            tau_neg: 0.2,
            max_depth: 16,
            max_children: 4,
            seed: 0,
            memory_mode: MemoryMode::Full,
            uct_times_two: false,
            memory_capacity: 64,
            max_hints: 5,
            memory_scope: MemoryScope::PerProblem,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchConfigError> {
        if self.num_rollouts < 1 {
            return Err(SearchConfigError::Invalid("num_rollouts must be >= 1".into()));
        }
        if !(self.exploration_weight > 0.0) || !self.exploration_weight.is_finite() {
            return Err(SearchConfigError::Invalid(format!(
                "exploration_weight must be positive and finite, got {}",
                self.exploration_weight
            )));
        }
        if !(self.tau_pos > 0.0 && self.tau_pos <= 1.0) {
            return Err(SearchConfigError::Invalid(format!(
                "tau_pos must lie in (0,1], got {}",
                self.tau_pos
            )));
        }
        if !(self.tau_neg >= 0.0 && self.tau_neg < 1.0) {
            return Err(SearchConfigError::Invalid(format!(
                "tau_neg must lie in [0,1), got {}",
                self.tau_neg
            )));
        }
        if self.tau_neg >= self.tau_pos {
            return Err(SearchConfigError::Invalid(format!(
                "tau_neg ({}) must be below tau_pos ({})",
                self.tau_neg, self.tau_pos
            )));
        }
        if self.max_depth < 1 {
            return Err(SearchConfigError::Invalid("max_depth must be >= 1".into()));
        }
        if self.max_children < 1 {
            return Err(SearchConfigError::Invalid("max_children must be >= 1".into()));
        }
        if self.memory_capacity == 0 {
            return Err(SearchConfigError::Invalid(
                "memory_capacity must be >= 1".into(),
            ));
        }
        if self.max_hints == 0 {
            return Err(SearchConfigError::Invalid("max_hints must be >= 1".into()));
        }
        Ok(())
    }
}
