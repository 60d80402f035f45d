//! Rollout event records, written one JSON object per line.
//!
//! Every record carries `{rollout, phase, node_id, value, memory_action}`;
//! phase-specific fields (step text, normalized key, digest sequence,
//! blocklist snapshot, manifest hash) appear only where meaningful. The log
//! is complete enough to audit memory-threshold soundness and fallacy
//! pruning, and to replay backpropagation, without the tree.

use serde::{Deserialize, Serialize};

use super::node::NodeId;

/// What a record describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventPhase {
    /// Run header carrying the manifest hash; always the first line.
    Manifest,
    /// Memory snapshot taken at rollout start; carries the blocklist.
    Digest,
    /// One UCT descent move during selection.
    Select,
    /// A candidate was scored and attached during expansion.
    ExpandAttach,
    /// A candidate was discarded because its key was blocklisted.
    ExpandBlocked,
    /// A store attempt against heuristics or fallacies memory.
    MemoryWrite,
    /// One greedy descent move during simulation.
    SimulateMove,
    /// A node was reached or marked as terminal for this rollout.
    Terminal,
    /// One path node updated during backpropagation.
    Backprop,
}

/// One line of the rollout log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub rollout: u64,
    pub phase: EventPhase,
    pub node_id: u64,
    pub value: f64,
    pub memory_action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocklist: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

impl EventRecord {
    pub fn new(rollout: u64, phase: EventPhase, node_id: NodeId, value: f64) -> Self {
        EventRecord {
            rollout,
            phase,
            node_id: node_id.0,
            value,
            memory_action: None,
            kind: None,
            step: None,
            normalized_key: None,
            digest_seq: None,
            blocklist: None,
            manifest_hash: None,
        }
    }

    pub fn with_memory_action(mut self, action: impl Into<String>, kind: impl Into<String>) -> Self {
        self.memory_action = Some(action.into());
        self.kind = Some(kind.into());
        self
    }

    pub fn with_step(mut self, step: impl Into<String>) -> Self {
        self.step = Some(step.into());
        self
    }

    pub fn with_normalized_key(mut self, key: impl Into<String>) -> Self {
        self.normalized_key = Some(key.into());
        self
    }

    pub fn with_digest_seq(mut self, seq: u64) -> Self {
        self.digest_seq = Some(seq);
        self
    }

    pub fn with_blocklist(mut self, blocklist: Vec<String>) -> Self {
        self.blocklist = Some(blocklist);
        self
    }

    /// The run-header record: manifest hash of the run configuration.
    pub fn manifest_header(hash: impl Into<String>) -> Self {
        let mut record = EventRecord::new(0, EventPhase::Manifest, NodeId(0), 0.0);
        record.manifest_hash = Some(hash.into());
        record
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn required_fields_always_serialized() {
        let record = EventRecord::new(3, EventPhase::Select, NodeId(7), 0.25);
        let json = record.to_json_line();
        for field in ["rollout", "phase", "node_id", "value", "memory_action"] {
            assert!(json.contains(&format!("\"{field}\"")), "missing {field} in {json}");
        }
        assert!(json.contains("\"memory_action\":null"));
        assert!(!json.contains("\"step\""));
    }

    #[test]
    fn phases_serialize_snake_case() {
        let record = EventRecord::new(0, EventPhase::ExpandBlocked, NodeId(1), 0.0);
        assert!(record.to_json_line().contains("\"expand_blocked\""));
        let record = EventRecord::new(0, EventPhase::SimulateMove, NodeId(1), 0.0);
        assert!(record.to_json_line().contains("\"simulate_move\""));
    }

    #[test]
    fn optional_fields_round_trip() {
        let record = EventRecord::new(1, EventPhase::MemoryWrite, NodeId(4), 0.95)
            .with_memory_action("stored", "heuristic")
            .with_step("combine terms")
            .with_normalized_key("combine terms")
            .with_digest_seq(2);
        let json = record.to_json_line();
        let back: EventRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, record);
    }

    #[test]
    fn manifest_header_shape() {
        let record = EventRecord::manifest_header("abc123");
        assert_eq!(record.rollout, 0);
        assert_eq!(record.phase, EventPhase::Manifest);
        let json = record.to_json_line();
        assert!(json.contains("\"manifest_hash\":\"abc123\""));
    }

    #[test]
    fn lines_parse_independently() {
        let lines = [
            EventRecord::manifest_header("h").to_json_line(),
            EventRecord::new(0, EventPhase::Digest, NodeId(0), 0.0)
                .with_digest_seq(0)
                .with_blocklist(vec!["bad step".into()])
                .to_json_line(),
            EventRecord::new(0, EventPhase::Backprop, NodeId(2), 1.0).to_json_line(),
        ];
        for line in lines {
            let parsed: EventRecord = serde_json::from_str(&line).unwrap();
            assert!(parsed.value >= 0.0);
        }
    }
}
