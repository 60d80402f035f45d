//! C ABI over the memtree engine.
//!
//! Conventions:
//! - Every object crosses the boundary as an opaque pointer created by a
//!   `memtree_*_new`/`*_generate` function and released by the matching
//!   `memtree_*_free`. Freeing NULL is a no-op.
//! - Every fallible call returns a [`MemtreeStatus`]; `MEMTREE_STATUS_OK` is 0.
//!   On failure a thread-local message is readable via
//!   [`memtree_last_error`].
//! - Strings are returned by a two-phase buffer protocol: the function
//!   always stores the required size (including the NUL terminator) in
//!   `*written`; if the caller's buffer is NULL or too small it returns
//!   `MEMTREE_STATUS_BUFFER_TOO_SMALL` and writes nothing else.
//! - Panics never unwind across the boundary; they surface as
//!   `MEMTREE_STATUS_PANIC`.
//!
//! Only the deterministic synthetic backend is exposed over C; remote
//! backends need callback plumbing that this ABI deliberately avoids.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use memtree::search::{run_search, SearchConfig, SearchResult};
use memtree::tasks::{generate, Family, NoisyOraclePrm, Problem, SyntheticPolicy, TaskParams};

/// Result of every fallible FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemtreeStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Arguments were syntactically fine but semantically rejected.
    InvalidArgument = 3,
    /// Problem generation failed.
    TaskError = 4,
    /// The search itself failed.
    SearchError = 5,
    /// The caller's buffer cannot hold the result; `*written` has the size.
    BufferTooSmall = 6,
    /// A panic was caught at the boundary.
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message.into());
}

fn fail(status: MemtreeStatus, message: impl Into<String>) -> MemtreeStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> MemtreeStatus) -> MemtreeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(MemtreeStatus::Panic, "panic caught at the FFI boundary"),
    }
}

/// Two-phase string return: always report the needed size, copy only when
/// the buffer fits, and always NUL-terminate what is copied.
fn write_str(s: &str, buf: *mut c_char, cap: usize, written: *mut usize) -> MemtreeStatus {
    if written.is_null() {
        return fail(MemtreeStatus::NullArgument, "written pointer is NULL");
    }
    let needed = s.len() + 1;
    unsafe { *written = needed };
    if buf.is_null() || cap < needed {
        return MemtreeStatus::BufferTooSmall;
    }
    unsafe {
        ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
        *buf.add(s.len()) = 0;
    }
    MemtreeStatus::Ok
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, MemtreeStatus> {
    if ptr.is_null() {
        return Err(fail(
            MemtreeStatus::NullArgument,
            format!("{what} is NULL"),
        ));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(MemtreeStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Copies the message of the most recent failure on this thread.
///
/// # Safety
/// `buf` must point to `cap` writable bytes (or be NULL for size probing);
/// `written` must point to a writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn memtree_last_error(
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> MemtreeStatus {
    LAST_ERROR.with(|slot| write_str(&slot.borrow(), buf, cap, written))
}

/// Copies the library version string.
///
/// # Safety
/// Same buffer contract as [`memtree_last_error`].
#[no_mangle]
pub unsafe extern "C" fn memtree_version(
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> MemtreeStatus {
    write_str(env!("CARGO_PKG_VERSION"), buf, cap, written)
}

/// A generated benchmark problem.
pub struct MemtreeProblem {
    inner: Problem,
}

/// Search configuration; starts from library defaults.
pub struct MemtreeConfig {
    inner: SearchConfig,
}

/// A finished search.
pub struct MemtreeResult {
    inner: SearchResult,
    success: bool,
}

/// Generates a problem. `family` is one of `arithmetic_chain`,
/// `token_path`, `distractor_tree`.
///
/// # Safety
/// `family` must be a NUL-terminated string; `out` must be a valid pointer.
/// The returned handle must be released with [`memtree_problem_free`].
#[no_mangle]
pub unsafe extern "C" fn memtree_problem_generate(
    family: *const c_char,
    depth: u32,
    distractors: usize,
    correct_width: usize,
    trap_pool: usize,
    seed: u64,
    out: *mut *mut MemtreeProblem,
) -> MemtreeStatus {
    guard(|| {
        if out.is_null() {
            return fail(MemtreeStatus::NullArgument, "out pointer is NULL");
        }
        let family = match read_str(family, "family") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let family: Family = match family.parse() {
            Ok(f) => f,
            Err(e) => return fail(MemtreeStatus::InvalidArgument, e.to_string()),
        };
        let params = TaskParams {
            depth,
            distractors,
            correct_width,
            trap_pool,
            seed,
        };
        match generate(family, params) {
            Ok(problem) => {
                unsafe {
                    *out = Box::into_raw(Box::new(MemtreeProblem { inner: problem }));
                }
                MemtreeStatus::Ok
            }
            Err(e) => fail(MemtreeStatus::TaskError, e.to_string()),
        }
    })
}

/// # Safety
/// `problem` must come from [`memtree_problem_generate`] (or be NULL) and
/// must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn memtree_problem_free(problem: *mut MemtreeProblem) {
    if !problem.is_null() {
        drop(unsafe { Box::from_raw(problem) });
    }
}

/// Copies the problem's stable identifier.
///
/// # Safety
/// `problem` must be a live handle; buffer contract as [`memtree_last_error`].
#[no_mangle]
pub unsafe extern "C" fn memtree_problem_id(
    problem: *const MemtreeProblem,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> MemtreeStatus {
    guard(|| {
        let Some(problem) = (unsafe { problem.as_ref() }) else {
            return fail(MemtreeStatus::NullArgument, "problem is NULL");
        };
        write_str(&problem.inner.id, buf, cap, written)
    })
}

/// Copies the problem statement shown to a solver.
///
/// # Safety
/// `problem` must be a live handle; buffer contract as [`memtree_last_error`].
#[no_mangle]
pub unsafe extern "C" fn memtree_problem_statement(
    problem: *const MemtreeProblem,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> MemtreeStatus {
    guard(|| {
        let Some(problem) = (unsafe { problem.as_ref() }) else {
            return fail(MemtreeStatus::NullArgument, "problem is NULL");
        };
        write_str(&problem.inner.statement, buf, cap, written)
    })
}

/// Creates a configuration with library defaults. Never fails.
#[no_mangle]
pub extern "C" fn memtree_config_new() -> *mut MemtreeConfig {
    Box::into_raw(Box::new(MemtreeConfig {
        inner: SearchConfig::default(),
    }))
}

/// # Safety
/// `config` must come from [`memtree_config_new`] (or be NULL) and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn memtree_config_free(config: *mut MemtreeConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

unsafe fn with_config(
    config: *mut MemtreeConfig,
    apply: impl FnOnce(&mut SearchConfig),
) -> MemtreeStatus {
    match unsafe { config.as_mut() } {
        Some(config) => {
            apply(&mut config.inner);
            MemtreeStatus::Ok
        }
        None => fail(MemtreeStatus::NullArgument, "config is NULL"),
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn memtree_config_set_rollouts(
    config: *mut MemtreeConfig,
    rollouts: u64,
) -> MemtreeStatus {
    unsafe { with_config(config, |c| c.num_rollouts = rollouts) }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn memtree_config_set_seed(
    config: *mut MemtreeConfig,
    seed: u64,
) -> MemtreeStatus {
    unsafe { with_config(config, |c| c.seed = seed) }
}

/// Sets the memory ablation: `full`, `no_heuristics`, `no_fallacies`, `none`.
///
/// # Safety
/// `config` must be a live handle; `mode` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn memtree_config_set_memory_mode(
    config: *mut MemtreeConfig,
    mode: *const c_char,
) -> MemtreeStatus {
    guard(|| {
        let mode = match unsafe { read_str(mode, "mode") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let parsed = match mode.parse() {
            Ok(m) => m,
            Err(e) => {
                return fail(MemtreeStatus::InvalidArgument, format!("{e}"));
            }
        };
        unsafe { with_config(config, |c| c.memory_mode = parsed) }
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn memtree_config_set_exploration(
    config: *mut MemtreeConfig,
    weight: f64,
) -> MemtreeStatus {
    unsafe { with_config(config, |c| c.exploration_weight = weight) }
}

/// Sets the heuristic (`tau_pos`) and fallacy (`tau_neg`) write thresholds.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn memtree_config_set_thresholds(
    config: *mut MemtreeConfig,
    tau_pos: f64,
    tau_neg: f64,
) -> MemtreeStatus {
    unsafe {
        with_config(config, |c| {
            c.tau_pos = tau_pos;
            c.tau_neg = tau_neg;
        })
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn memtree_config_set_limits(
    config: *mut MemtreeConfig,
    max_depth: u32,
    max_children: usize,
) -> MemtreeStatus {
    unsafe {
        with_config(config, |c| {
            c.max_depth = max_depth;
            c.max_children = max_children;
        })
    }
}

/// Sets memory capacity per kind and the hint budget per prompt.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn memtree_config_set_memory(
    config: *mut MemtreeConfig,
    capacity: usize,
    max_hints: usize,
) -> MemtreeStatus {
    unsafe {
        with_config(config, |c| {
            c.memory_capacity = capacity;
            c.max_hints = max_hints;
        })
    }
}

/// Switches the exploration term to `sqrt(2 ln N / n)`.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn memtree_config_set_uct_times_two(
    config: *mut MemtreeConfig,
    enabled: bool,
) -> MemtreeStatus {
    unsafe { with_config(config, |c| c.uct_times_two = enabled) }
}

/// Runs the synthetic-backend search. `noise_amplitude` perturbs the value
/// oracle deterministically; 0 makes it exact.
///
/// # Safety
/// `config` and `problem` must be live handles; `out` a valid pointer. The
/// returned handle must be released with [`memtree_result_free`].
#[no_mangle]
pub unsafe extern "C" fn memtree_search_run(
    config: *const MemtreeConfig,
    problem: *const MemtreeProblem,
    noise_amplitude: f64,
    out: *mut *mut MemtreeResult,
) -> MemtreeStatus {
    guard(|| {
        if out.is_null() {
            return fail(MemtreeStatus::NullArgument, "out pointer is NULL");
        }
        let Some(config) = (unsafe { config.as_ref() }) else {
            return fail(MemtreeStatus::NullArgument, "config is NULL");
        };
        let Some(problem) = (unsafe { problem.as_ref() }) else {
            return fail(MemtreeStatus::NullArgument, "problem is NULL");
        };
        if !(0.0..=1.0).contains(&noise_amplitude) {
            return fail(
                MemtreeStatus::InvalidArgument,
                format!("noise_amplitude must lie in [0,1], got {noise_amplitude}"),
            );
        }
        if let Err(e) = config.inner.validate() {
            return fail(MemtreeStatus::InvalidArgument, e.to_string());
        }
        let policy = SyntheticPolicy;
        let prm = NoisyOraclePrm {
            seed: config.inner.seed,
            amplitude: noise_amplitude,
        };
        match run_search(&problem.inner, &config.inner, &policy, &prm) {
            Ok(result) => {
                let success = result.error.is_none()
                    && result.answer.as_deref() == Some(problem.inner.answer.as_str());
                unsafe {
                    *out = Box::into_raw(Box::new(MemtreeResult {
                        inner: result,
                        success,
                    }));
                }
                MemtreeStatus::Ok
            }
            Err(e) => fail(MemtreeStatus::SearchError, e.to_string()),
        }
    })
}

/// # Safety
/// `result` must come from [`memtree_search_run`] (or be NULL) and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn memtree_result_free(result: *mut MemtreeResult) {
    if !result.is_null() {
        drop(unsafe { Box::from_raw(result) });
    }
}

/// Whether the extracted answer matched the problem's ground truth.
///
/// # Safety
/// `result` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn memtree_result_success(
    result: *const MemtreeResult,
    out: *mut bool,
) -> MemtreeStatus {
    guard(|| {
        let (Some(result), false) = (unsafe { result.as_ref() }, out.is_null()) else {
            return fail(MemtreeStatus::NullArgument, "result or out is NULL");
        };
        unsafe { *out = result.success };
        MemtreeStatus::Ok
    })
}

/// Number of distinct root-to-terminal paths the search materialized.
///
/// # Safety
/// `result` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn memtree_result_trajectories(
    result: *const MemtreeResult,
    out: *mut u64,
) -> MemtreeStatus {
    guard(|| {
        let (Some(result), false) = (unsafe { result.as_ref() }, out.is_null()) else {
            return fail(MemtreeStatus::NullArgument, "result or out is NULL");
        };
        unsafe { *out = result.inner.trajectories };
        MemtreeStatus::Ok
    })
}

/// Mean depth of the tree's terminal nodes.
///
/// # Safety
/// `result` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn memtree_result_depth(
    result: *const MemtreeResult,
    out: *mut f64,
) -> MemtreeStatus {
    guard(|| {
        let (Some(result), false) = (unsafe { result.as_ref() }, out.is_null()) else {
            return fail(MemtreeStatus::NullArgument, "result or out is NULL");
        };
        unsafe { *out = result.inner.depth };
        MemtreeStatus::Ok
    })
}

/// Copies the extracted answer; an answerless search yields an empty string.
///
/// # Safety
/// `result` must be a live handle; buffer contract as [`memtree_last_error`].
#[no_mangle]
pub unsafe extern "C" fn memtree_result_answer(
    result: *const MemtreeResult,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> MemtreeStatus {
    guard(|| {
        let Some(result) = (unsafe { result.as_ref() }) else {
            return fail(MemtreeStatus::NullArgument, "result is NULL");
        };
        write_str(result.inner.answer.as_deref().unwrap_or(""), buf, cap, written)
    })
}

/// Copies the canonical JSON of the full search tree.
///
/// # Safety
/// `result` must be a live handle; buffer contract as [`memtree_last_error`].
#[no_mangle]
pub unsafe extern "C" fn memtree_result_tree_json(
    result: *const MemtreeResult,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> MemtreeStatus {
    guard(|| {
        let Some(result) = (unsafe { result.as_ref() }) else {
            return fail(MemtreeStatus::NullArgument, "result is NULL");
        };
        write_str(&result.inner.tree.canonical_json(), buf, cap, written)
    })
}
