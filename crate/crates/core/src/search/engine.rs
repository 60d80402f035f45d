//! Rollout engine: UCT selection, memory-filtered expansion, value-greedy
//! expanding simulation, and running-mean backpropagation.
//!
//! The sequential path (`run_search`) is bit-deterministic given a seed and
//! deterministic backends. The parallel path shares one tree and one memory
//! store behind a single mutex, claims nodes for exclusive expansion, and
//! keeps backend calls outside the lock; it preserves every structural
//! invariant but not byte-level determinism.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, PolicyBackend};
use crate::memory::{normalize, MemoryDigest, MemoryDump, MemoryEntry, MemoryError, MemoryKind, MemoryStore};
use crate::prm::{score_step, PrmBackend};
use crate::tasks::Problem;

use super::config::{SearchConfig, SearchConfigError};
use super::event::{EventPhase, EventRecord};
use super::node::{NodeId, SearchTree};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Config(#[from] SearchConfigError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("rollout {rollout}: {source}")]
    Backend {
        rollout: u64,
        #[source]
        source: BackendError,
    },
    #[error("UCT undefined for parent visit count {0}")]
    UctDomain(u64),
    #[error("tree has no terminal node")]
    NoTerminal,
    #[error("no terminal node carries an answer")]
    NoAnswer,
}

/// Everything a finished search produces. With a fixed seed and
/// deterministic backends, `canonical_json` is byte-identical across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub tree: SearchTree,
    pub answer: Option<String>,
    /// Count of distinct root-to-terminal paths materialized in the tree.
    pub trajectories: u64,
    /// Mean depth of terminal nodes.
    pub depth: f64,
    pub events: Vec<EventRecord>,
    pub memory: MemoryDump,
    /// Set when a rollout failed irrecoverably; the result is then partial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SearchResult {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("result serialization cannot fail")
    }
}

/// UCT score `V + eps * sqrt(ln N_p / N_n)`, or with `times_two` the
/// `sqrt(2 ln N_p / N_n)` variant. Unvisited nodes score plus infinity so
/// they are always taken before visited siblings.
pub fn uct_score(
    value: f64,
    visits: u64,
    parent_visits: u64,
    epsilon: f64,
    times_two: bool,
) -> Result<f64, SearchError> {
    if visits == 0 {
        return Ok(f64::INFINITY);
    }
    if parent_visits < 1 {
        return Err(SearchError::UctDomain(parent_visits));
    }
    let mut inside = (parent_visits as f64).ln() / visits as f64;
    if times_two {
        inside *= 2.0;
    }
    Ok(value + epsilon * inside.sqrt())
}

/// Walks UCT argmax from the root until hitting a node that is a leaf or not
/// fully expanded; ties go to the lowest child index.
pub fn select_leaf(
    tree: &SearchTree,
    epsilon: f64,
    times_two: bool,
) -> Result<NodeId, SearchError> {
    let path = select_path(tree, epsilon, times_two)?;
    Ok(*path.last().expect("path includes the root"))
}

/// The full descent: root first, selected leaf last.
fn select_path(tree: &SearchTree, epsilon: f64, times_two: bool) -> Result<Vec<NodeId>, SearchError> {
    let mut cur = tree.root_id();
    let mut path = vec![cur];
    loop {
        let node = tree.node(cur);
        if node.terminal || !node.fully_expanded || node.children.is_empty() {
            return Ok(path);
        }
        let parent_visits = node.visit_count;
        let mut best: Option<(NodeId, f64)> = None;
        for &child in &node.children {
            let c = tree.node(child);
            let score = uct_score(c.value, c.visit_count, parent_visits, epsilon, times_two)?;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((child, score));
            }
        }
        let (chosen, _) = best.expect("children checked non-empty");
        path.push(chosen);
        cur = chosen;
    }
}

/// Adds `outcome` into the running mean of every node from the root to
/// `terminal` (inclusive) and bumps their visit counts. Returns the path.
pub fn backpropagate(tree: &mut SearchTree, terminal: NodeId, outcome: f64) -> Vec<NodeId> {
    let path = tree.path_from_root(terminal);
    for &id in &path {
        let node = tree.node_mut(id);
        node.visit_count += 1;
        node.value_sum += outcome;
        node.value = node.value_sum / node.visit_count as f64;
    }
    path
}

/// The answer backed by the heaviest group of terminals, where a terminal
/// weighs `value * visit_count` and groups share an extracted answer. Ties go
/// to the group holding the earliest-created terminal. Returns the answer and
/// its group weight.
pub fn answer_of(tree: &SearchTree) -> Result<(String, f64), SearchError> {
    let terminals = tree.terminal_ids();
    if terminals.is_empty() {
        return Err(SearchError::NoTerminal);
    }
    let mut groups: Vec<(String, f64, NodeId)> = Vec::new();
    for id in terminals {
        let node = tree.node(id);
        let Some(answer) = &node.answer else { continue };
        let weight = node.value * node.visit_count as f64;
        match groups.iter_mut().find(|(a, _, _)| a == answer) {
            Some((_, w, _)) => *w += weight,
            None => groups.push((answer.clone(), weight, id)),
        }
    }
    let mut best: Option<(String, f64, NodeId)> = None;
    for group in groups {
        let better = match &best {
            None => true,
            Some((_, bw, bfirst)) => group.1 > *bw || (group.1 == *bw && group.2 < *bfirst),
        };
        if better {
            best = Some(group);
        }
    }
    best.map(|(answer, weight, _)| (answer, weight))
        .ok_or(SearchError::NoAnswer)
}

/// `(trajectories, mean terminal depth)`, recomputable from topology alone.
/// Each root-to-terminal path ends at a distinct terminal, so trajectories
/// equal the terminal count. An empty terminal set yields `(0, 0.0)`.
pub fn structural_metrics(tree: &SearchTree) -> (u64, f64) {
    let terminals = tree.terminal_ids();
    if terminals.is_empty() {
        return (0, 0.0);
    }
    let depth_sum: f64 = terminals.iter().map(|id| tree.node(*id).depth as f64).sum();
    (terminals.len() as u64, depth_sum / terminals.len() as f64)
}

struct Ctx<'a, P, R> {
    problem: &'a Problem,
    config: &'a SearchConfig,
    policy: &'a P,
    prm: &'a R,
}

/// A policy candidate after scoring and blocklist filtering, ready to attach.
struct ScoredCandidate {
    step: String,
    key: String,
    blocked: bool,
    value: f64,
    terminal: bool,
    answer: Option<String>,
}

/// Asks the policy for candidates and scores the survivors. No tree or
/// memory access: safe to run outside any lock.
fn gather_candidates<P: PolicyBackend, R: PrmBackend>(
    ctx: &Ctx<'_, P, R>,
    prefix: &[String],
    digest: &MemoryDigest,
    rollout: u64,
) -> Result<Vec<ScoredCandidate>, SearchError> {
    let raw = ctx
        .policy
        .propose(ctx.problem, prefix, digest, ctx.config.max_children)
        .map_err(|source| SearchError::Backend { rollout, source })?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for step in raw.into_iter().take(ctx.config.max_children) {
        if !seen.insert(step.clone()) {
            continue;
        }
        let key = normalize(&step);
        if ctx.config.memory_mode.fallacies_enabled() && digest.fallacy_blocklist.contains(&key) {
            out.push(ScoredCandidate {
                step,
                key,
                blocked: true,
                value: 0.0,
                terminal: false,
                answer: None,
            });
            continue;
        }
        let score = score_step(ctx.prm, ctx.problem, prefix, &step)
            .map_err(|source| SearchError::Backend { rollout, source })?;
        let mut child_prefix = prefix.to_vec();
        child_prefix.push(step.clone());
        let terminal = ctx
            .policy
            .is_terminal(ctx.problem, &child_prefix)
            .map_err(|source| SearchError::Backend { rollout, source })?;
        let answer = if terminal {
            ctx.policy.extract_answer(ctx.problem, &child_prefix)
        } else {
            None
        };
        out.push(ScoredCandidate {
            step,
            key,
            blocked: false,
            value: score.value,
            terminal,
            answer,
        });
    }
    Ok(out)
}

/// Attaches scored candidates under `parent`, writes threshold-qualified
/// steps to memory, and marks the parent fully expanded. A parent left with
/// no children becomes terminal (dead end). Returns attached ids.
#[allow(clippy::too_many_arguments)]
fn attach_candidates<P: PolicyBackend, R: PrmBackend>(
    ctx: &Ctx<'_, P, R>,
    tree: &mut SearchTree,
    memory: &mut MemoryStore,
    events: &mut Vec<EventRecord>,
    rollout: u64,
    parent: NodeId,
    digest: &MemoryDigest,
    scored: Vec<ScoredCandidate>,
) -> Result<Vec<NodeId>, SearchError> {
    let mut attached = Vec::new();
    for cand in scored {
        if cand.blocked {
            events.push(
                EventRecord::new(rollout, EventPhase::ExpandBlocked, parent, 0.0)
                    .with_step(&cand.step)
                    .with_normalized_key(&cand.key)
                    .with_digest_seq(digest.digest_seq),
            );
            continue;
        }
        let child = tree.add_child(parent, &cand.step, cand.value);
        events.push(
            EventRecord::new(rollout, EventPhase::ExpandAttach, child, cand.value)
                .with_step(&cand.step)
                .with_normalized_key(&cand.key)
                .with_digest_seq(digest.digest_seq),
        );
        if cand.terminal {
            tree.mark_terminal(child, cand.answer);
        }
        let mode = ctx.config.memory_mode;
        let kind = if cand.value >= ctx.config.tau_pos && mode.heuristics_enabled() {
            Some(MemoryKind::Heuristic)
        } else if cand.value <= ctx.config.tau_neg && mode.fallacies_enabled() {
            Some(MemoryKind::Fallacy)
        } else {
            None
        };
        if let Some(kind) = kind {
            let entry = MemoryEntry::new(
                &ctx.problem.id,
                &cand.step,
                cand.value,
                kind,
                rollout,
                child.0,
            );
            let outcome = memory.store(entry)?;
            events.push(
                EventRecord::new(rollout, EventPhase::MemoryWrite, child, cand.value)
                    .with_memory_action(outcome.as_str(), kind.as_str())
                    .with_normalized_key(&cand.key),
            );
        }
        attached.push(child);
    }
    tree.node_mut(parent).fully_expanded = true;
    if attached.is_empty() && tree.node(parent).children.is_empty() {
        let prefix = tree.prefix_steps(parent);
        let answer = ctx.policy.extract_answer(ctx.problem, &prefix);
        tree.mark_terminal(parent, answer);
    }
    Ok(attached)
}

fn best_child_by_prm(tree: &SearchTree, parent: NodeId) -> (NodeId, f64) {
    let mut best: Option<(NodeId, f64)> = None;
    for &child in &tree.node(parent).children {
        let v = tree.node(child).prm_value;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((child, v));
        }
    }
    best.expect("caller guarantees children")
}

/// One select -> simulate -> backpropagate pass over the tree.
fn rollout_once<P: PolicyBackend, R: PrmBackend>(
    ctx: &Ctx<'_, P, R>,
    tree: &mut SearchTree,
    memory: &mut MemoryStore,
    events: &mut Vec<EventRecord>,
    rollout: u64,
) -> Result<(), SearchError> {
    // Memory reads use one snapshot taken at rollout start.
    let digest = memory.snapshot(&ctx.problem.id, ctx.config.max_hints);
    events.push(
        EventRecord::new(rollout, EventPhase::Digest, tree.root_id(), 0.0)
            .with_digest_seq(digest.digest_seq)
            .with_blocklist(digest.fallacy_blocklist.iter().cloned().collect()),
    );

    let epsilon = ctx.config.exploration_weight;
    let times_two = ctx.config.uct_times_two;
    let path = select_path(tree, epsilon, times_two)?;
    for &id in path.iter().skip(1) {
        events.push(EventRecord::new(
            rollout,
            EventPhase::Select,
            id,
            tree.node(id).value,
        ));
    }
    let mut cur = *path.last().expect("selection path includes root");

    let terminal = loop {
        let node = tree.node(cur);
        if node.terminal {
            break cur;
        }
        if node.depth >= ctx.config.max_depth {
            let prefix = tree.prefix_steps(cur);
            let answer = ctx.policy.extract_answer(ctx.problem, &prefix);
            tree.mark_terminal(cur, answer);
            break cur;
        }
        if !node.fully_expanded {
            let prefix = tree.prefix_steps(cur);
            let scored = gather_candidates(ctx, &prefix, &digest, rollout)?;
            attach_candidates(ctx, tree, memory, events, rollout, cur, &digest, scored)?;
            continue;
        }
        if node.children.is_empty() {
            let prefix = tree.prefix_steps(cur);
            let answer = ctx.policy.extract_answer(ctx.problem, &prefix);
            tree.mark_terminal(cur, answer);
            break cur;
        }
        let (next, value) = best_child_by_prm(tree, cur);
        events.push(EventRecord::new(
            rollout,
            EventPhase::SimulateMove,
            next,
            value,
        ));
        cur = next;
    };

    let outcome = tree.node(terminal).prm_value;
    events.push(EventRecord::new(
        rollout,
        EventPhase::Terminal,
        terminal,
        outcome,
    ));
    for id in backpropagate(tree, terminal, outcome) {
        events.push(EventRecord::new(rollout, EventPhase::Backprop, id, outcome));
    }
    Ok(())
}

fn finalize(
    tree: SearchTree,
    memory: &MemoryStore,
    events: Vec<EventRecord>,
    error: Option<String>,
) -> SearchResult {
    let answer = answer_of(&tree).ok().map(|(answer, _)| answer);
    let (trajectories, depth) = structural_metrics(&tree);
    SearchResult {
        tree,
        answer,
        trajectories,
        depth,
        events,
        memory: memory.dump(),
        error,
    }
}

/// Runs a full search with a fresh per-run memory store.
pub fn run_search<P: PolicyBackend, R: PrmBackend>(
    problem: &Problem,
    config: &SearchConfig,
    policy: &P,
    prm: &R,
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    let mut memory = MemoryStore::new(
        config.memory_capacity,
        config.memory_scope,
        config.tau_pos,
        config.tau_neg,
    )?;
    run_search_in(problem, config, policy, prm, &mut memory)
}

/// Runs a full search against a caller-owned memory store, which is how
/// persistent-scope memory survives across problems. The store is prepared
/// via `begin_problem` (a no-op under persistent scope).
pub fn run_search_in<P: PolicyBackend, R: PrmBackend>(
    problem: &Problem,
    config: &SearchConfig,
    policy: &P,
    prm: &R,
    memory: &mut MemoryStore,
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    memory.begin_problem();
    let mut tree = SearchTree::new(&problem.id);
    let mut events = Vec::new();
    let ctx = Ctx {
        problem,
        config,
        policy,
        prm,
    };
    let mut error = None;
    for rollout in 0..config.num_rollouts {
        if let Err(e) = rollout_once(&ctx, &mut tree, memory, &mut events, rollout) {
            error = Some(e.to_string());
            break;
        }
    }
    Ok(finalize(tree, memory, events, error))
}

struct ParallelState {
    tree: SearchTree,
    memory: MemoryStore,
    events: Vec<EventRecord>,
    /// Nodes currently being expanded; exactly one worker may expand a node.
    claimed: BTreeSet<NodeId>,
    error: Option<String>,
}

/// Multi-worker search over one shared tree and memory store. Structural
/// invariants hold for any worker count; byte determinism only for
/// `workers <= 1`, which delegates to the sequential engine.
pub fn run_search_parallel<P, R>(
    problem: &Problem,
    config: &SearchConfig,
    policy: &P,
    prm: &R,
    workers: usize,
) -> Result<SearchResult, SearchError>
where
    P: PolicyBackend + Sync,
    R: PrmBackend + Sync,
{
    config.validate()?;
    if workers <= 1 {
        return run_search(problem, config, policy, prm);
    }
    let memory = MemoryStore::new(
        config.memory_capacity,
        config.memory_scope,
        config.tau_pos,
        config.tau_neg,
    )?;
    let state = Mutex::new(ParallelState {
        tree: SearchTree::new(&problem.id),
        memory,
        events: Vec::new(),
        claimed: BTreeSet::new(),
        error: None,
    });
    let available = Condvar::new();
    let next_rollout = AtomicU64::new(0);
    let ctx = Ctx {
        problem,
        config,
        policy,
        prm,
    };

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if state.lock().expect("search lock").error.is_some() {
                    return;
                }
                let rollout = next_rollout.fetch_add(1, Ordering::Relaxed);
                if rollout >= ctx.config.num_rollouts {
                    return;
                }
                if let Err(e) = parallel_rollout(&ctx, &state, &available, rollout) {
                    let mut guard = state.lock().expect("search lock");
                    if guard.error.is_none() {
                        guard.error = Some(e.to_string());
                    }
                    available.notify_all();
                    return;
                }
            });
        }
    });

    let ParallelState {
        tree,
        memory,
        events,
        error,
        ..
    } = state.into_inner().expect("workers joined");
    Ok(finalize(tree, &memory, events, error))
}

fn parallel_rollout<P, R>(
    ctx: &Ctx<'_, P, R>,
    state: &Mutex<ParallelState>,
    available: &Condvar,
    rollout: u64,
) -> Result<(), SearchError>
where
    P: PolicyBackend + Sync,
    R: PrmBackend + Sync,
{
    let mut guard = state.lock().expect("search lock");
    let digest = guard.memory.snapshot(&ctx.problem.id, ctx.config.max_hints);
    let root = guard.tree.root_id();
    guard.events.push(
        EventRecord::new(rollout, EventPhase::Digest, root, 0.0)
            .with_digest_seq(digest.digest_seq)
            .with_blocklist(digest.fallacy_blocklist.iter().cloned().collect()),
    );

    let epsilon = ctx.config.exploration_weight;
    let times_two = ctx.config.uct_times_two;

    // Selection, retried while the chosen leaf is claimed by another worker.
    let mut cur = loop {
        if guard.error.is_some() {
            return Ok(());
        }
        let path = select_path(&guard.tree, epsilon, times_two)?;
        let leaf = *path.last().expect("path includes root");
        if guard.claimed.contains(&leaf) {
            guard = available.wait(guard).expect("search lock");
            continue;
        }
        for &id in path.iter().skip(1) {
            let value = guard.tree.node(id).value;
            guard
                .events
                .push(EventRecord::new(rollout, EventPhase::Select, id, value));
        }
        break leaf;
    };

    let terminal = loop {
        if guard.error.is_some() {
            return Ok(());
        }
        let node = guard.tree.node(cur);
        if node.terminal {
            break cur;
        }
        if node.depth >= ctx.config.max_depth {
            let prefix = guard.tree.prefix_steps(cur);
            let answer = ctx.policy.extract_answer(ctx.problem, &prefix);
            guard.tree.mark_terminal(cur, answer);
            break cur;
        }
        if !node.fully_expanded {
            if guard.claimed.contains(&cur) {
                guard = available.wait(guard).expect("search lock");
                continue;
            }
            guard.claimed.insert(cur);
            let prefix = guard.tree.prefix_steps(cur);
            drop(guard);
            // Backend calls happen outside the lock.
            let scored = gather_candidates(ctx, &prefix, &digest, rollout);
            guard = state.lock().expect("search lock");
            guard.claimed.remove(&cur);
            available.notify_all();
            let scored = scored?;
            let st = &mut *guard;
            attach_candidates(
                ctx,
                &mut st.tree,
                &mut st.memory,
                &mut st.events,
                rollout,
                cur,
                &digest,
                scored,
            )?;
            continue;
        }
        if node.children.is_empty() {
            let prefix = guard.tree.prefix_steps(cur);
            let answer = ctx.policy.extract_answer(ctx.problem, &prefix);
            guard.tree.mark_terminal(cur, answer);
            break cur;
        }
        let (next, value) = best_child_by_prm(&guard.tree, cur);
        guard
            .events
            .push(EventRecord::new(rollout, EventPhase::SimulateMove, next, value));
        cur = next;
    };

    let outcome = guard.tree.node(terminal).prm_value;
    guard.events.push(EventRecord::new(
        rollout,
        EventPhase::Terminal,
        terminal,
        outcome,
    ));
    let st = &mut *guard;
    for id in backpropagate(&mut st.tree, terminal, outcome) {
        st.events
            .push(EventRecord::new(rollout, EventPhase::Backprop, id, outcome));
    }
    Ok(())
}
