//! Backend traits the search engine is parameterized over.
//!
//! A policy backend proposes candidate next steps and decides terminality; a
//! reward backend (see [`crate::prm::PrmBackend`]) scores a candidate step.
//! Synthetic tasks, the remote chat-completions client, and the reference
//! reward model all plug in through these traits.

use thiserror::Error;

use crate::memory::MemoryDigest;
use crate::tasks::Problem;

/// Failure surfaced by a policy or reward backend.
#[derive(Debug, Error)]
pub enum BackendError {
    /// Transport-level failure (connection, timeout, non-success status).
    #[error("transport failure: {0}")]
    Transport(String),
    /// The reply could not be parsed; the raw body is attached for diagnosis.
    #[error("unparseable backend reply: {message} (raw: {raw:?})")]
    Parse { message: String, raw: String },
    /// The reply contained zero or more than one value-class name.
    #[error("classification parse error: expected exactly one class name (raw: {raw:?})")]
    ClassParse { raw: String },
    /// The backend produced a scalar outside `[0,1]`.
    #[error("backend produced value {0} outside [0,1]")]
    ValueOutOfRange(f64),
    /// The caller supplied an input the backend rejects (e.g. illegal prefix).
    #[error("illegal backend input: {0}")]
    IllegalInput(String),
}

/// Proposes candidate continuations and decides when a path is finished.
pub trait PolicyBackend {
    /// Returns up to `max` candidate next steps for `prefix`, conditioned on
    /// the memory digest (hints may reorder or inform candidates; blocklisted
    /// steps may already be withheld — the engine filters again regardless).
    fn propose(
        &self,
        problem: &Problem,
        prefix: &[String],
        digest: &MemoryDigest,
        max: usize,
    ) -> Result<Vec<String>, BackendError>;

    /// True when `prefix` is a finished trajectory (answer emitted or no
    /// legal continuation).
    fn is_terminal(&self, problem: &Problem, prefix: &[String]) -> Result<bool, BackendError>;

    /// The final answer carried by `prefix`, if any.
    fn extract_answer(&self, problem: &Problem, prefix: &[String]) -> Option<String>;
}

impl<T: PolicyBackend + ?Sized> PolicyBackend for &T {
    fn propose(
        &self,
        problem: &Problem,
        prefix: &[String],
        digest: &MemoryDigest,
        max: usize,
    ) -> Result<Vec<String>, BackendError> {
        (**self).propose(problem, prefix, digest, max)
    }

    fn is_terminal(&self, problem: &Problem, prefix: &[String]) -> Result<bool, BackendError> {
        (**self).is_terminal(problem, prefix)
    }

    fn extract_answer(&self, problem: &Problem, prefix: &[String]) -> Option<String> {
        (**self).extract_answer(problem, prefix)
    }
}
