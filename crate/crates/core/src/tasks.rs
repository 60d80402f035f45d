//! Deterministic synthetic reasoning tasks with enumerable steps, known
//! answers, and an exact ground-truth value oracle.
//!
//! Three families, graded by how much repeated errors cost:
//!
//! * `arithmetic_chain`: one numeric chain. Every candidate adds the true
//!   addend to the previously stated total; distractors miscompute the total
//!   by a positive offset, so a single slip makes the answer unreachable.
//! * `token_path`: several interchangeable correct tokens per level (many
//!   correct paths) ending in a single answer step.
//! * `distractor_tree`: one correct chain plus trap tokens drawn from a
//!   small global pool that recurs across every level, so remembering a trap
//!   once prunes it everywhere afterwards.
//!
//! All functions are pure in `(family, params)`; the params carry the seed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::backend::{BackendError, PolicyBackend};
use crate::det;
use crate::memory::MemoryDigest;
use crate::prm::{PrmBackend, PrmScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ArithmeticChain,
    TokenPath,
    DistractorTree,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::ArithmeticChain => "arithmetic_chain",
            Family::TokenPath => "token_path",
            Family::DistractorTree => "distractor_tree",
        }
    }

    pub const ALL: [Family; 3] = [
        Family::ArithmeticChain,
        Family::TokenPath,
        Family::DistractorTree,
    ];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arithmetic_chain" => Ok(Family::ArithmeticChain),
            "token_path" => Ok(Family::TokenPath),
            "distractor_tree" => Ok(Family::DistractorTree),
            other => Err(TaskError::UnknownFamily(other.to_string())),
        }
    }
}

/// Family-specific knobs. `depth` is the number of correct steps to the
/// answer; `distractors` is the wrong-continuation count per expansion
/// point; `correct_width` widens the correct front for `token_path`;
/// `trap_pool` sizes the shared trap vocabulary for `distractor_tree`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskParams {
    pub depth: u32,
    pub distractors: usize,
    pub correct_width: usize,
    pub trap_pool: usize,
    pub seed: u64,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams {
            depth: 3,
            distractors: 2,
            correct_width: 1,
            trap_pool: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub family: Family,
    pub statement: String,
    /// Ground-truth answer. Carried in memory for oracles and scoring; suite
    /// manifests persist only its hash.
    pub answer: String,
    pub params: TaskParams,
}

impl Problem {
    /// The widest continuation list any state of this problem can produce;
    /// search configs use it to avoid truncating the correct step away.
    pub fn max_branching(&self) -> usize {
        match self.family {
            Family::ArithmeticChain | Family::DistractorTree => self.params.distractors + 1,
            Family::TokenPath => self.params.correct_width + self.params.distractors,
        }
    }
}

/// Ground truth for one candidate step: its recurrence value, whether the
/// resulting prefix still reaches the answer, and how many steps remain
/// (`None` once unreachable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub value: f64,
    pub on_correct_path: bool,
    pub remaining_steps: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("invalid task params: {0}")]
    InvalidParams(String),
    #[error("illegal prefix at position {position}: step {step:?} is not a legal continuation")]
    IllegalPrefix { position: usize, step: String },
    #[error("prefix is already terminal")]
    PrefixTerminal,
    #[error("candidate {0:?} is not a legal continuation")]
    IllegalCandidate(String),
    #[error("unknown family {0:?}")]
    UnknownFamily(String),
}

impl From<TaskError> for BackendError {
    fn from(e: TaskError) -> Self {
        BackendError::IllegalInput(e.to_string())
    }
}

/// Builds a problem deterministically from its parameters.
pub fn generate(family: Family, params: TaskParams) -> Result<Problem, TaskError> {
    if params.depth < 1 {
        return Err(TaskError::InvalidParams("depth must be >= 1".into()));
    }
    match family {
        Family::TokenPath => {
            if params.correct_width < 1 {
                return Err(TaskError::InvalidParams(
                    "token_path needs correct_width >= 1".into(),
                ));
            }
        }
        Family::DistractorTree => {
            if params.distractors > 0 && params.trap_pool < params.distractors {
                return Err(TaskError::InvalidParams(format!(
                    "distractor_tree needs trap_pool >= distractors ({} < {})",
                    params.trap_pool, params.distractors
                )));
            }
        }
        Family::ArithmeticChain => {}
    }

    let seed = params.seed;
    let depth = params.depth;
    let (statement, answer) = match family {
        Family::ArithmeticChain => {
            let start = arith_start(seed);
            let total: i64 = start
                + (1..=depth)
                    .map(|k| arith_addend(seed, k))
                    .sum::<i64>();
            (
                format!("start at {start} and add {depth} numbers"),
                total.to_string(),
            )
        }
        Family::TokenPath => {
            let goal = goal_value(seed);
            (
                format!("reach the goal in {depth} steps"),
                goal.to_string(),
            )
        }
        Family::DistractorTree => {
            let goal = goal_value(seed);
            (
                format!("navigate {depth} moves without stepping on a trap"),
                goal.to_string(),
            )
        }
    };
    Ok(Problem {
        id: format!("{}-d{}-{:016x}", family.as_str(), depth, seed),
        family,
        statement,
        answer,
        params,
    })
}

fn arith_start(seed: u64) -> i64 {
    (det::bounded(det::mix(seed, &["arith", "start"]), 90) + 10) as i64
}

fn arith_addend(seed: u64, level: u32) -> i64 {
    (det::bounded(det::mix(seed, &["arith", "addend", &level.to_string()]), 9) + 1) as i64
}

fn goal_value(seed: u64) -> u64 {
    det::bounded(det::mix(seed, &["goal"]), 9000) + 1000
}

fn move_token(seed: u64, level: u32) -> String {
    format!(
        "move {}",
        det::bounded(det::mix(seed, &["trap", "move", &level.to_string()]), 900) + 100
    )
}

/// Walker state after consuming a prefix. `stated_total` tracks the last
/// stated arithmetic total (the start value for an empty prefix).
#[derive(Debug, Clone, Copy)]
struct PathState {
    level: u32,
    on_path: bool,
    stated_total: i64,
}

/// One enumerable continuation. `correct` means it extends a correct path.
#[derive(Debug, Clone)]
struct Continuation {
    content: String,
    correct: bool,
    stated_total: i64,
}

fn initial_state(problem: &Problem) -> PathState {
    PathState {
        level: 0,
        on_path: true,
        stated_total: match problem.family {
            Family::ArithmeticChain => arith_start(problem.params.seed),
            _ => 0,
        },
    }
}

/// All continuations of the state, in a seeded deterministic order. Empty
/// exactly when the state is terminal (`level == depth`).
fn continuations(problem: &Problem, state: &PathState) -> Vec<Continuation> {
    let params = &problem.params;
    if state.level >= params.depth {
        return Vec::new();
    }
    let level = state.level + 1;
    let seed = params.seed;
    let mut out = Vec::new();
    match problem.family {
        Family::ArithmeticChain => {
            let addend = arith_addend(seed, level);
            let consistent = state.stated_total + addend;
            out.push(Continuation {
                content: format!("+{addend} = {consistent}"),
                correct: state.on_path,
                stated_total: consistent,
            });
            for j in 0..params.distractors {
                // Positive offsets only: miscalculations never cancel, so a
                // wrong total can never drift back to the true answer.
                let wrong = consistent + (j as i64) + 1;
                out.push(Continuation {
                    content: format!("+{addend} = {wrong}"),
                    correct: false,
                    stated_total: wrong,
                });
            }
        }
        Family::TokenPath => {
            if state.on_path {
                if level == params.depth {
                    out.push(Continuation {
                        content: format!("answer {}", goal_value(seed)),
                        correct: true,
                        stated_total: 0,
                    });
                } else {
                    for i in 0..params.correct_width {
                        out.push(Continuation {
                            content: format!("t{level}.{i}"),
                            correct: true,
                            stated_total: 0,
                        });
                    }
                }
            }
            for j in 0..params.distractors {
                out.push(Continuation {
                    content: format!("x{level}.{j}"),
                    correct: false,
                    stated_total: 0,
                });
            }
        }
        Family::DistractorTree => {
            if state.on_path {
                let content = if level == params.depth {
                    format!("answer {}", goal_value(seed))
                } else {
                    move_token(seed, level)
                };
                out.push(Continuation {
                    content,
                    correct: true,
                    stated_total: 0,
                });
            }
            if params.distractors > 0 {
                let base = det::bounded(
                    det::mix(seed, &["trap", "pick", &level.to_string()]),
                    params.trap_pool as u64,
                ) as usize;
                for j in 0..params.distractors {
                    let q = (base + j) % params.trap_pool;
                    out.push(Continuation {
                        content: format!("trap {q}"),
                        correct: false,
                        stated_total: 0,
                    });
                }
            }
        }
    }
    out.sort_by_key(|c| {
        det::mix(seed, &["order", &level.to_string(), &c.content])
    });
    out
}

fn advance(state: PathState, cont: &Continuation) -> PathState {
    PathState {
        level: state.level + 1,
        on_path: cont.correct,
        stated_total: cont.stated_total,
    }
}

fn walk_prefix(problem: &Problem, prefix: &[String]) -> Result<PathState, TaskError> {
    let mut state = initial_state(problem);
    for (position, step) in prefix.iter().enumerate() {
        let conts = continuations(problem, &state);
        let Some(cont) = conts.iter().find(|c| &c.content == step) else {
            return Err(TaskError::IllegalPrefix {
                position,
                step: step.clone(),
            });
        };
        state = advance(state, cont);
    }
    Ok(state)
}

/// Enumerates all legal continuations of a legal prefix; empty exactly when
/// the prefix is terminal.
pub fn legal_steps(problem: &Problem, prefix: &[String]) -> Result<Vec<String>, TaskError> {
    let state = walk_prefix(problem, prefix)?;
    Ok(continuations(problem, &state)
        .into_iter()
        .map(|c| c.content)
        .collect())
}

/// Exact value recurrence on ground truth: from `v_0 = 0`, each consumed
/// step applies `w = (1 - v) / (m + 1)` while the answer stays reachable
/// (`m` = steps still required after the move) and `w = -(1 - v)` once it is
/// not, clamping at zero. The last step evaluated is `candidate`.
pub fn oracle(
    problem: &Problem,
    prefix: &[String],
    candidate: &str,
) -> Result<OracleVerdict, TaskError> {
    let mut state = initial_state(problem);
    let mut value = 0.0f64;
    let depth = problem.params.depth;
    let mut consume = |state: &mut PathState, step: &str, position: usize| -> Result<(), TaskError> {
        if state.level >= depth {
            return Err(TaskError::PrefixTerminal);
        }
        let conts = continuations(problem, state);
        let Some(cont) = conts.iter().find(|c| c.content == step) else {
            return if position < prefix.len() {
                Err(TaskError::IllegalPrefix {
                    position,
                    step: step.to_string(),
                })
            } else {
                Err(TaskError::IllegalCandidate(step.to_string()))
            };
        };
        *state = advance(*state, cont);
        let w = if state.on_path {
            let remaining = depth - state.level;
            (1.0 - value) / ((remaining + 1) as f64)
        } else {
            -(1.0 - value)
        };
        value = (value + w).max(0.0);
        Ok(())
    };
    for (position, step) in prefix.iter().enumerate() {
        consume(&mut state, step, position)?;
    }
    consume(&mut state, candidate, prefix.len())?;
    Ok(OracleVerdict {
        value,
        on_correct_path: state.on_path,
        remaining_steps: state.on_path.then(|| depth - state.level),
    })
}

/// Policy backend enumerating the task's legal continuations. The memory
/// digest is ignored: pruning is the engine's responsibility and hints do
/// not change what is legal.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticPolicy;

impl PolicyBackend for SyntheticPolicy {
    fn propose(
        &self,
        problem: &Problem,
        prefix: &[String],
        _digest: &MemoryDigest,
        max: usize,
    ) -> Result<Vec<String>, BackendError> {
        let mut steps = legal_steps(problem, prefix)?;
        steps.truncate(max);
        Ok(steps)
    }

    fn is_terminal(&self, problem: &Problem, prefix: &[String]) -> Result<bool, BackendError> {
        let state = walk_prefix(problem, prefix)?;
        Ok(state.level >= problem.params.depth)
    }

    fn extract_answer(&self, problem: &Problem, prefix: &[String]) -> Option<String> {
        if prefix.len() < problem.params.depth as usize {
            return None;
        }
        let last = prefix.last()?;
        match problem.family {
            Family::ArithmeticChain => last.rsplit("= ").next()?.trim().parse::<i64>().ok().map(|t| t.to_string()),
            Family::TokenPath | Family::DistractorTree => {
                last.strip_prefix("answer ").map(str::to_string)
            }
        }
    }
}

/// Reward backend returning the exact oracle value.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePrm;

impl PrmBackend for OraclePrm {
    fn score(
        &self,
        problem: &Problem,
        prefix: &[String],
        candidate: &str,
    ) -> Result<PrmScore, BackendError> {
        let verdict = oracle(problem, prefix, candidate)?;
        PrmScore::from_value(verdict.value).map_err(|e| BackendError::Parse {
            message: e.to_string(),
            raw: candidate.to_string(),
        })
    }
}

/// Oracle values plus seeded, bounded noise, clamped to `[0,1]`: the
/// imperfect-scorer stand-in that makes thresholds and memory matter. The
/// noise is a pure function of `(seed, problem, prefix, candidate)`.
#[derive(Debug, Clone, Copy)]
pub struct NoisyOraclePrm {
    pub seed: u64,
    pub amplitude: f64,
}

impl NoisyOraclePrm {
    pub fn new(seed: u64) -> Self {
        NoisyOraclePrm {
            seed,
            amplitude: 0.15,
        }
    }
}

impl PrmBackend for NoisyOraclePrm {
    fn score(
        &self,
        problem: &Problem,
        prefix: &[String],
        candidate: &str,
    ) -> Result<PrmScore, BackendError> {
        let verdict = oracle(problem, prefix, candidate)?;
        let mut parts: Vec<&str> = vec!["noise", &problem.id];
        parts.extend(prefix.iter().map(|s| s.as_str()));
        parts.push(candidate);
        let unit = det::unit_f64(det::mix(self.seed, &parts));
        let noise = (unit * 2.0 - 1.0) * self.amplitude;
        let value = (verdict.value + noise).clamp(0.0, 1.0);
        PrmScore::from_value(value).map_err(|e| BackendError::Parse {
            message: e.to_string(),
            raw: candidate.to_string(),
        })
    }
}

/// Hex SHA-256 of an answer payload, the only answer form manifests store.
pub fn answer_hash(answer: &str) -> String {
    let digest = Sha256::digest(answer.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One reproducible benchmark suite entry: everything needed to regenerate
/// the problem, plus the answer hash (never the answer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub problem_id: String,
    pub family: Family,
    pub params: TaskParams,
    pub answer_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub entries: Vec<SuiteEntry>,
}

/// Generates `count` problems of one family by deriving per-instance seeds
/// from `base.seed`.
pub fn generate_suite(
    family: Family,
    count: usize,
    base: TaskParams,
) -> Result<Vec<Problem>, TaskError> {
    (0..count)
        .map(|i| {
            let seed = det::mix(base.seed, &["suite", &i.to_string()]);
            generate(family, TaskParams { seed, ..base })
        })
        .collect()
}

pub fn suite_manifest(problems: &[Problem]) -> SuiteManifest {
    SuiteManifest {
        entries: problems
            .iter()
            .map(|p| SuiteEntry {
                problem_id: p.id.clone(),
                family: p.family,
                params: p.params,
                answer_hash: answer_hash(&p.answer),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn arith(seed: u64) -> Problem {
        generate(
            Family::ArithmeticChain,
            TaskParams {
                seed,
                ..TaskParams::default()
            },
        )
        .unwrap()
    }

    /// Follows correct continuations to the terminal; returns the prefix.
    fn correct_path(problem: &Problem) -> Vec<String> {
        let mut prefix = Vec::new();
        let mut state = initial_state(problem);
        while state.level < problem.params.depth {
            let conts = continuations(problem, &state);
            let cont = conts.iter().find(|c| c.correct).expect("correct step exists");
            prefix.push(cont.content.clone());
            state = advance(state, cont);
        }
        prefix
    }

    #[test]
    fn generation_is_deterministic() {
        for family in Family::ALL {
            let params = TaskParams {
                seed: 7,
                ..TaskParams::default()
            };
            let a = generate(family, params).unwrap();
            let b = generate(family, params).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn arithmetic_depth_three_reaches_answer_in_three_steps() {
        let problem = arith(11);
        let path = correct_path(&problem);
        assert_eq!(path.len(), 3);
        let policy = SyntheticPolicy;
        assert!(policy.is_terminal(&problem, &path).unwrap());
        assert_eq!(policy.extract_answer(&problem, &path).as_deref(), Some(problem.answer.as_str()));
    }

    #[test]
    fn all_families_satisfy_reachability_by_enumeration() {
        // Exhaustive DFS over small instances: some leaf extracts the answer.
        let mut checked = 0;
        for family in Family::ALL {
            for i in 0..34u64 {
                let params = TaskParams {
                    depth: 3,
                    distractors: 2,
                    correct_width: 2,
                    trap_pool: 3,
                    seed: det::mix(1000 + i, &["reach"]),
                };
                let problem = generate(family, params).unwrap();
                let policy = SyntheticPolicy;
                let mut stack = vec![Vec::<String>::new()];
                let mut reached = false;
                while let Some(prefix) = stack.pop() {
                    let steps = legal_steps(&problem, &prefix).unwrap();
                    if steps.is_empty() {
                        if policy.extract_answer(&problem, &prefix).as_deref()
                            == Some(problem.answer.as_str())
                        {
                            reached = true;
                            break;
                        }
                        continue;
                    }
                    for s in steps {
                        let mut next = prefix.clone();
                        next.push(s);
                        stack.push(next);
                    }
                }
                assert!(reached, "{family} seed {i} cannot reach its answer");
                checked += 1;
            }
        }
        assert_eq!(checked, 102);
    }

    #[test]
    fn terminal_prefix_has_no_continuations() {
        let problem = arith(3);
        let path = correct_path(&problem);
        assert!(legal_steps(&problem, &path).unwrap().is_empty());
    }

    #[test]
    fn two_distractors_give_three_continuations() {
        let problem = arith(5);
        assert_eq!(legal_steps(&problem, &[]).unwrap().len(), 3);
    }

    #[test]
    fn depth_three_branching_three_has_27_leaves() {
        let problem = arith(9);
        let mut leaves = 0;
        let mut stack = vec![Vec::<String>::new()];
        while let Some(prefix) = stack.pop() {
            let steps = legal_steps(&problem, &prefix).unwrap();
            if steps.is_empty() {
                leaves += 1;
                continue;
            }
            for s in steps {
                let mut next = prefix.clone();
                next.push(s);
                stack.push(next);
            }
        }
        assert_eq!(leaves, 27);
    }

    #[test]
    fn illegal_prefixes_rejected() {
        let problem = arith(2);
        let err = legal_steps(&problem, &["made up".to_string()]).unwrap_err();
        assert!(matches!(err, TaskError::IllegalPrefix { position: 0, .. }));

        let path = correct_path(&problem);
        let mut too_long = path.clone();
        too_long.push("extra".into());
        assert!(legal_steps(&problem, &too_long).is_err());
    }

    #[test]
    fn oracle_scores_final_correct_step_exactly_one() {
        for family in Family::ALL {
            for seed in [1u64, 17, 909] {
                let problem = generate(
                    family,
                    TaskParams {
                        seed,
                        ..TaskParams::default()
                    },
                )
                .unwrap();
                let path = correct_path(&problem);
                let (last, prefix) = path.split_last().unwrap();
                let verdict = oracle(&problem, prefix, last).unwrap();
                assert_eq!(verdict.value, 1.0, "{family} seed {seed}");
                assert_eq!(verdict.remaining_steps, Some(0));
                assert!(verdict.on_correct_path);
            }
        }
    }

    #[test]
    fn oracle_marks_distractors_off_path() {
        let problem = arith(13);
        let steps = legal_steps(&problem, &[]).unwrap();
        let correct = &correct_path(&problem)[0];
        for step in steps.iter().filter(|s| s != &correct) {
            let verdict = oracle(&problem, &[], step).unwrap();
            assert!(!verdict.on_correct_path);
            assert_eq!(verdict.remaining_steps, None);
            assert_eq!(verdict.value, 0.0);
        }
    }

    #[test]
    fn oracle_rejects_illegal_candidate() {
        let problem = arith(4);
        assert!(matches!(
            oracle(&problem, &[], "nonsense"),
            Err(TaskError::IllegalCandidate(_))
        ));
        let path = correct_path(&problem);
        assert!(matches!(
            oracle(&problem, &path, "anything"),
            Err(TaskError::PrefixTerminal)
        ));
    }

    /// Independent check over every (prefix, candidate) of small instances:
    /// reachability by brute-force DFS decides `r`, a replayed recurrence
    /// over those flags reproduces the value, and remaining-steps equals
    /// depth minus level on reachable states.
    #[test]
    fn oracle_agrees_with_brute_force_reachability() {
        for family in Family::ALL {
            let problem = generate(
                family,
                TaskParams {
                    depth: 3,
                    distractors: 2,
                    correct_width: 2,
                    trap_pool: 3,
                    seed: 77,
                },
            )
            .unwrap();
            let policy = SyntheticPolicy;

            // Can `prefix` still be extended to extract the true answer?
            fn reachable(problem: &Problem, policy: &SyntheticPolicy, prefix: &[String]) -> bool {
                let steps = legal_steps(problem, prefix).unwrap();
                if steps.is_empty() {
                    return policy.extract_answer(problem, prefix).as_deref()
                        == Some(problem.answer.as_str());
                }
                steps.iter().any(|s| {
                    let mut next = prefix.to_vec();
                    next.push(s.clone());
                    reachable(problem, policy, &next)
                })
            }

            let mut stack = vec![Vec::<String>::new()];
            let mut pairs = 0;
            while let Some(prefix) = stack.pop() {
                for candidate in legal_steps(&problem, &prefix).unwrap() {
                    let mut next = prefix.clone();
                    next.push(candidate.clone());

                    let verdict = oracle(&problem, &prefix, &candidate).unwrap();
                    assert_eq!(
                        verdict.on_correct_path,
                        reachable(&problem, &policy, &next),
                        "{family}: reachability mismatch at {next:?}"
                    );
                    if verdict.on_correct_path {
                        assert_eq!(
                            verdict.remaining_steps,
                            Some(problem.params.depth - next.len() as u32)
                        );
                    } else {
                        assert_eq!(verdict.remaining_steps, None);
                    }

                    // Replay the recurrence using only brute-force flags.
                    let mut value = 0.0f64;
                    for k in 1..=next.len() {
                        let sub = &next[..k];
                        if reachable(&problem, &policy, sub) {
                            let remaining = problem.params.depth - k as u32;
                            let w = (1.0 - value) / ((remaining + 1) as f64);
                            value = (value + w).max(0.0);
                        } else {
                            let w = -(1.0 - value);
                            value = (value + w).max(0.0);
                        }
                    }
                    assert_eq!(verdict.value, value, "{family}: value mismatch at {next:?}");

                    pairs += 1;
                    stack.push(next);
                }
            }
            // Narrowest case: distractor_tree, 3 + 3+4 + 3+12 pairs.
            assert!(pairs >= 25, "{family}: exhausted only {pairs} pairs");
        }
    }

    #[test]
    fn oracle_prm_matches_oracle_on_random_steps() {
        let problem = generate(
            Family::TokenPath,
            TaskParams {
                depth: 4,
                distractors: 2,
                correct_width: 2,
                trap_pool: 0,
                seed: 5,
            },
        )
        .unwrap();
        let prm = OraclePrm;
        let mut prefix = Vec::new();
        let mut scored = 0;
        for pick in 0..20u64 {
            let steps = legal_steps(&problem, &prefix).unwrap();
            if steps.is_empty() {
                prefix.clear();
                continue;
            }
            for candidate in &steps {
                let score = prm.score(&problem, &prefix, candidate).unwrap();
                let verdict = oracle(&problem, &prefix, candidate).unwrap();
                assert_eq!(score.value, verdict.value);
                scored += 1;
            }
            let chosen = det::bounded(det::mix(5, &["walk", &pick.to_string()]), steps.len() as u64);
            prefix.push(steps[chosen as usize].clone());
        }
        assert!(scored >= 20);
    }

    #[test]
    fn noisy_prm_is_bounded_and_deterministic() {
        let problem = arith(21);
        let prm = NoisyOraclePrm::new(9);
        let clean = OraclePrm;
        let steps = legal_steps(&problem, &[]).unwrap();
        let mut saw_difference = false;
        for candidate in &steps {
            let a = prm.score(&problem, &[], candidate).unwrap();
            let b = prm.score(&problem, &[], candidate).unwrap();
            assert_eq!(a, b);
            let base = clean.score(&problem, &[], candidate).unwrap();
            assert!((a.value - base.value).abs() <= 0.15 + 1e-12);
            assert!((0.0..=1.0).contains(&a.value));
            if a.value != base.value {
                saw_difference = true;
            }
        }
        assert!(saw_difference, "noise never moved any score");
    }

    #[test]
    fn token_path_has_width_many_correct_paths() {
        let problem = generate(
            Family::TokenPath,
            TaskParams {
                depth: 3,
                distractors: 1,
                correct_width: 2,
                trap_pool: 0,
                seed: 31,
            },
        )
        .unwrap();
        let policy = SyntheticPolicy;
        let mut correct_leaves = 0;
        let mut stack = vec![Vec::<String>::new()];
        while let Some(prefix) = stack.pop() {
            let steps = legal_steps(&problem, &prefix).unwrap();
            if steps.is_empty() {
                if policy.extract_answer(&problem, &prefix).as_deref()
                    == Some(problem.answer.as_str())
                {
                    correct_leaves += 1;
                }
                continue;
            }
            for s in steps {
                let mut next = prefix.clone();
                next.push(s);
                stack.push(next);
            }
        }
        // Two interchangeable tokens at each of the first two levels.
        assert_eq!(correct_leaves, 4);
    }

    #[test]
    fn distractor_tree_draws_traps_from_shared_pool() {
        let problem = generate(
            Family::DistractorTree,
            TaskParams {
                depth: 3,
                distractors: 2,
                correct_width: 1,
                trap_pool: 3,
                seed: 41,
            },
        )
        .unwrap();
        let mut trap_tokens = BTreeSet::new();
        let mut stack = vec![Vec::<String>::new()];
        while let Some(prefix) = stack.pop() {
            for s in legal_steps(&problem, &prefix).unwrap() {
                if s.starts_with("trap ") {
                    trap_tokens.insert(s.clone());
                }
                let mut next = prefix.clone();
                next.push(s);
                stack.push(next);
            }
        }
        assert!(!trap_tokens.is_empty());
        assert!(
            trap_tokens.len() <= problem.params.trap_pool,
            "trap vocabulary {trap_tokens:?} exceeds pool"
        );
    }

    #[test]
    fn off_path_states_offer_no_answer_step() {
        let problem = generate(
            Family::DistractorTree,
            TaskParams {
                depth: 2,
                distractors: 2,
                correct_width: 1,
                trap_pool: 4,
                seed: 51,
            },
        )
        .unwrap();
        let trap = legal_steps(&problem, &[])
            .unwrap()
            .into_iter()
            .find(|s| s.starts_with("trap "))
            .unwrap();
        let steps = legal_steps(&problem, &[trap]).unwrap();
        assert!(!steps.is_empty());
        assert!(steps.iter().all(|s| s.starts_with("trap ")));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(generate(
            Family::ArithmeticChain,
            TaskParams {
                depth: 0,
                ..TaskParams::default()
            }
        )
        .is_err());
        assert!(generate(
            Family::TokenPath,
            TaskParams {
                correct_width: 0,
                ..TaskParams::default()
            }
        )
        .is_err());
        assert!(generate(
            Family::DistractorTree,
            TaskParams {
                distractors: 5,
                trap_pool: 3,
                ..TaskParams::default()
            }
        )
        .is_err());
    }

    #[test]
    fn suite_manifest_hides_answers_behind_hashes() {
        let problems = generate_suite(
            Family::ArithmeticChain,
            5,
            TaskParams {
                seed: 99,
                ..TaskParams::default()
            },
        )
        .unwrap();
        let manifest = suite_manifest(&problems);
        assert_eq!(manifest.entries.len(), 5);
        let ids: BTreeSet<&str> = manifest
            .entries
            .iter()
            .map(|e| e.problem_id.as_str())
            .collect();
        assert_eq!(ids.len(), 5, "problem ids must be unique");
        let json = serde_json::to_string(&manifest).unwrap();
        for (problem, entry) in problems.iter().zip(&manifest.entries) {
            assert_eq!(entry.answer_hash, answer_hash(&problem.answer));
            assert_eq!(entry.answer_hash.len(), 64);
            assert!(!json.contains(&format!("\"{}\"", problem.answer)));
        }
        // Regeneration from the manifest reproduces the same problems.
        for (problem, entry) in problems.iter().zip(&manifest.entries) {
            let again = generate(entry.family, entry.params).unwrap();
            assert_eq!(&again, problem);
        }
    }

    #[test]
    fn answer_hash_is_sha256_hex() {
        // Published SHA-256 test vector.
        assert_eq!(
            answer_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    proptest! {
        /// The recurrence's terminal update is exact in floating point:
        /// v + (1 - v) == 1 for every v in [0,1].
        #[test]
        fn terminal_update_is_exactly_one(v in 0.0f64..=1.0) {
            prop_assert_eq!(v + (1.0 - v), 1.0);
        }

        /// Oracle determinism and range over random legal walks.
        #[test]
        fn oracle_values_stay_in_unit_interval(
            seed in 0u64..300,
            picks in proptest::collection::vec(0u64..100, 1..6),
        ) {
            let problem = generate(
                Family::DistractorTree,
                TaskParams { depth: 4, distractors: 2, correct_width: 1, trap_pool: 4, seed },
            ).unwrap();
            let mut prefix = Vec::new();
            for pick in picks {
                let steps = legal_steps(&problem, &prefix).unwrap();
                if steps.is_empty() { break; }
                let candidate = &steps[(pick % steps.len() as u64) as usize];
                let a = oracle(&problem, &prefix, candidate).unwrap();
                let b = oracle(&problem, &prefix, candidate).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert!((0.0..=1.0).contains(&a.value));
                prop_assert_eq!(a.on_correct_path, a.remaining_steps.is_some());
                if a.value == 1.0 {
                    prop_assert_eq!(a.remaining_steps, Some(0));
                }
                prefix.push(candidate.clone());
            }
        }
    }
}
