//! C ABI over `spo-core`.
//!
//! Every function returns a [`SpoStatus`]; on failure the message is kept in
//! a thread-local buffer readable with [`spo_last_error_message`]. Objects
//! cross the boundary as opaque handles owned by the caller and released
//! with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spo_core::game::{exact_minimax_winner, exploitability};
use spo_core::harness::{run_experiment, ExperimentConfig, Summary};
use spo_core::learners::{HedgeState, LearningRate};
use spo_core::spo::{run_selfplay_fullfeedback, RunOptions};
use spo_core::{MixedStrategy, PreferenceMatrix, SpoError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Config = 5,
    Io = 6,
    BufferTooSmall = 7,
    Internal = 8,
    Panic = 9,
}

/// Anti-symmetric preference matrix.
pub struct SpoMatrix {
    inner: PreferenceMatrix,
}

/// A finished experiment: summary and acceptance verdict.
pub struct SpoExperiment {
    summary: Summary,
    summary_json: String,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &SpoError) -> SpoStatus {
    match e {
        SpoError::DimensionMismatch { .. } | SpoError::IndexOutOfRange { .. } => {
            SpoStatus::DimensionMismatch
        }
        SpoError::NonFinite(_) | SpoError::Diverged(_) | SpoError::FitDiverged(_) => SpoStatus::NonFinite,
        SpoError::Config(_) | SpoError::Json(_) => SpoStatus::Config,
        SpoError::Io(_) => SpoStatus::Io,
        SpoError::Internal(_) => SpoStatus::Internal,
        SpoError::Run { source, .. } => status_of(source),
        _ => SpoStatus::InvalidInput,
    }
}

/// Run `f`, translating errors and panics into a status plus message.
fn guard<F: FnOnce() -> Result<(), SpoStatusError>>(f: F) -> SpoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SpoStatus::Ok
        }
        Ok(Err(SpoStatusError(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside spo-ffi");
            SpoStatus::Panic
        }
    }
}

struct SpoStatusError(SpoStatus, String);

impl From<SpoError> for SpoStatusError {
    fn from(e: SpoError) -> Self {
        SpoStatusError(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> SpoStatusError {
    SpoStatusError(SpoStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], SpoStatusError> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], SpoStatusError> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(len: usize, n: usize) -> Result<(), SpoStatusError> {
    if len != n {
        return Err(SpoError::DimensionMismatch { expected: n, got: len }.into());
    }
    Ok(())
}

/// Copy `s` with a NUL terminator into `buf` if it fits; the required size
/// (terminator included) is always written to `needed` when non-null.
unsafe fn write_str(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), SpoStatusError> {
    let bytes = s.as_bytes();
    if !needed.is_null() {
        *needed = bytes.len() + 1;
    }
    if buf.is_null() || cap < bytes.len() + 1 {
        return Err(SpoStatusError(
            SpoStatus::BufferTooSmall,
            format!("need {} bytes", bytes.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
    *buf.add(bytes.len()) = 0;
    Ok(())
}

/// Copies the calling thread's last error message (empty after a success).
/// Returns the number of bytes needed including the terminator; writes
/// nothing when `cap` is too small.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn spo_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && cap > bytes.len() {
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
            *buf.add(bytes.len()) = 0;
        }
        bytes.len() + 1
    })
}

/// Builds a matrix from `n * n` row-major entries. Anti-symmetry is checked.
///
/// # Safety
/// `entries` must point to `n * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spo_matrix_new(entries: *const f64, n: usize, out: *mut *mut SpoMatrix) -> SpoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let len = n.checked_mul(n).ok_or_else(|| SpoStatusError(SpoStatus::InvalidInput, "n overflows".into()))?;
        let flat = slice(entries, len, "entries")?;
        let rows = flat.chunks(n.max(1)).take(n).map(|r| r.to_vec()).collect();
        let inner = PreferenceMatrix::from_rows(rows)?;
        *out = Box::into_raw(Box::new(SpoMatrix { inner }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`spo_matrix_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spo_matrix_free(m: *mut SpoMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of options, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spo_matrix_size(m: *const SpoMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.n())
}

/// Exact minimax winner: writes the strategy (length `n`), the game value
/// and the strategy's exploitability.
///
/// # Safety
/// `m` must be a live handle, `strategy` must hold `len` doubles, and the
/// scalar outputs must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn spo_minimax_winner(
    m: *const SpoMatrix,
    strategy: *mut f64,
    len: usize,
    value: *mut f64,
    exploit: *mut f64,
) -> SpoStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        check_len(len, m.inner.n())?;
        let out = slice_mut(strategy, len, "strategy")?;
        let sol = exact_minimax_winner(&m.inner)?;
        out.copy_from_slice(sol.strategy.probs());
        if !value.is_null() {
            *value = sol.game_value;
        }
        if !exploit.is_null() {
            *exploit = sol.exploitability;
        }
        Ok(())
    })
}

/// `2 max_i (P p)_i` for a probability vector `p`.
///
/// # Safety
/// `m` must be a live handle, `p` must hold `len` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spo_exploitability(m: *const SpoMatrix, p: *const f64, len: usize, out: *mut f64) -> SpoStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        check_len(len, m.inner.n())?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = MixedStrategy::new(slice(p, len, "p")?.to_vec())?;
        *out = exploitability(&m.inner, &p)?;
        Ok(())
    })
}

/// Full-feedback Hedge self-play for `rounds` rounds. A non-positive `eta`
/// selects `sqrt(8 ln n / T)`. Writes the average strategy and, when
/// non-null, the learner's realized regret.
///
/// # Safety
/// `m` must be a live handle, `average` must hold `len` doubles, `regret`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn spo_selfplay_hedge(
    m: *const SpoMatrix,
    rounds: u64,
    eta: f64,
    average: *mut f64,
    len: usize,
    regret: *mut f64,
) -> SpoStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        let n = m.inner.n();
        check_len(len, n)?;
        let out = slice_mut(average, len, "average")?;
        let rate = if eta > 0.0 {
            LearningRate::fixed(eta)?
        } else {
            LearningRate::for_horizon(n, rounds)
        };
        let run = run_selfplay_fullfeedback(&m.inner, HedgeState::new(n, rate)?, RunOptions::new(rounds))?;
        out.copy_from_slice(run.average.probs());
        if !regret.is_null() {
            *regret = run.regret;
        }
        Ok(())
    })
}

/// Runs the experiment described by a TOML document (same format as
/// `spo-lab run --config`), writing its CSVs and summary. A failed
/// acceptance check is not an error; query it with
/// [`spo_experiment_passed`].
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spo_experiment_run(toml: *const c_char, out: *mut *mut SpoExperiment) -> SpoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|_| SpoStatusError(SpoStatus::InvalidInput, "config is not UTF-8".into()))?;
        let res = run_experiment(&ExperimentConfig::from_toml(text)?)?;
        let summary_json = serde_json::to_string(&res.summary).map_err(SpoError::from)?;
        *out = Box::into_raw(Box::new(SpoExperiment {
            summary: res.summary,
            summary_json,
        }));
        Ok(())
    })
}

/// 1 if the scenario's acceptance check passed, 0 if not, -1 for null.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spo_experiment_passed(e: *const SpoExperiment) -> c_int {
    e.as_ref().map_or(-1, |e| e.summary.check.passed as c_int)
}

/// Copies the JSON summary into `buf`; `needed` receives the size required.
///
/// # Safety
/// `e` must be a live handle; `buf` null or `cap` writable bytes; `needed`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn spo_experiment_summary_json(
    e: *const SpoExperiment,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> SpoStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("experiment"))?;
        write_str(&e.summary_json, buf, cap, needed)
    })
}

/// # Safety
/// `e` must be null or a handle from [`spo_experiment_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spo_experiment_free(e: *mut SpoExperiment) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}
