//! C ABI for `fairmine`.
//!
//! Every fallible function returns an [`FmStatus`]; on failure a description is
//! kept per thread and can be read with [`fm_last_error_message`]. Experiments
//! and reports are opaque heap handles released with their `_free` function.
//! Panics never cross the boundary: they are reported as `FM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fairmine::analytics;
use fairmine::protocols;
use fairmine::{
    ConvergenceTime, Error, ExperimentSpec, FairnessParams, FairnessReport, ProtocolKind,
    ProtocolSpec, ShareVector,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// Shares, protocol or experiment parameters were rejected.
    InvalidArgument = 2,
    /// A numeric argument was outside its mathematical domain.
    Domain = 3,
    /// An input exceeded a documented size limit.
    UnsupportedSize = 4,
    /// A numerical routine did not converge.
    NoConvergence = 5,
    /// The caller's buffer is too small; the required size was reported.
    BufferTooSmall = 6,
    /// An internal panic was caught.
    Panic = 7,
}

/// Protocol selector mirroring the core protocol kinds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmProtocol {
    Pow = 0,
    Mlpos = 1,
    Slpos = 2,
    Fslpos = 3,
    Cpos = 4,
}

impl From<FmProtocol> for ProtocolKind {
    fn from(p: FmProtocol) -> Self {
        match p {
            FmProtocol::Pow => ProtocolKind::Pow,
            FmProtocol::Mlpos => ProtocolKind::Mlpos,
            FmProtocol::Slpos => ProtocolKind::Slpos,
            FmProtocol::Fslpos => ProtocolKind::Fslpos,
            FmProtocol::Cpos => ProtocolKind::Cpos,
        }
    }
}

/// Opaque experiment description.
pub struct FmExperiment {
    spec: ExperimentSpec,
}

/// Opaque aggregated report.
pub struct FmReport {
    report: FairnessReport,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FmCheckpointStats {
    pub t: u64,
    pub mean: f64,
    /// Standard error of the mean.
    pub std_error: f64,
    pub p05: f64,
    pub p95: f64,
    pub unfair_prob: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FmBoundResult {
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// False when no finite horizon satisfies the bound.
    pub has_minimal_n: bool,
    pub minimal_n: u64,
}

impl From<analytics::BoundResult> for FmBoundResult {
    fn from(r: analytics::BoundResult) -> Self {
        FmBoundResult {
            satisfied: r.satisfied,
            lhs: r.lhs,
            rhs: r.rhs,
            has_minimal_n: r.minimal_n.is_some(),
            minimal_n: r.minimal_n.unwrap_or(0),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_last_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FmStatus {
    match e {
        Error::Domain { .. } | Error::UndefinedRatio => FmStatus::Domain,
        Error::UnsupportedSize { .. } => FmStatus::UnsupportedSize,
        Error::NoConvergence { .. } => FmStatus::NoConvergence,
        _ => FmStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (FmStatus, String)>) -> FmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            FmStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            FmStatus::Panic
        }
    }
}

fn core<T>(r: fairmine::Result<T>) -> Result<T, (FmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (FmStatus, String) {
    (FmStatus::NullPointer, format!("{name} is null"))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (FmStatus, String)> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn slice_arg<'a>(
    p: *const f64,
    len: usize,
    name: &str,
) -> Result<&'a [f64], (FmStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn horizon_arg(n: u64) -> Option<u64> {
    (n != 0).then_some(n)
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an experiment. `shares` are normalized if they do not sum to one.
/// `shards` and `inflation_reward` are only meaningful for C-PoS; pass 1 and 0
/// otherwise. Checkpoints default to {1,2,5}×10^j plus the horizon and the
/// fairness parameters to ε = δ = 0.1 for miner 0.
///
/// # Safety
/// `shares` must point to `n_shares` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_experiment_new(
    protocol: FmProtocol,
    shares: *const f64,
    n_shares: usize,
    proposer_reward: f64,
    inflation_reward: f64,
    shards: u32,
    withhold_period: u64,
    horizon: u64,
    trials: usize,
    base_seed: u64,
    out: *mut *mut FmExperiment,
) -> FmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let shares = core(ShareVector::normalized(slice_arg(
            shares, n_shares, "shares",
        )?))?;
        let mut p = ProtocolSpec::new(protocol.into(), proposer_reward, horizon);
        p.inflation_reward = inflation_reward;
        p.shards = shards;
        let spec = ExperimentSpec::new(p.with_withholding(withhold_period), shares, base_seed)
            .with_trials(trials);
        core(spec.validate())?;
        *out = Box::into_raw(Box::new(FmExperiment { spec }));
        Ok(())
    })
}

/// Sets ε, δ and the subject miner.
///
/// # Safety
/// `exp` must be a live handle from [`fm_experiment_new`].
#[no_mangle]
pub unsafe extern "C" fn fm_experiment_set_fairness(
    exp: *mut FmExperiment,
    epsilon: f64,
    delta: f64,
    subject: usize,
) -> FmStatus {
    guard(|| {
        let exp = out_ref(exp, "exp")?;
        let fairness = core(FairnessParams::new(epsilon, delta, subject))?;
        let candidate = exp.spec.clone().with_fairness(fairness);
        core(candidate.validate())?;
        exp.spec = candidate;
        Ok(())
    })
}

/// Replaces the checkpoint list; it must be strictly increasing and end at the horizon.
///
/// # Safety
/// `exp` must be a live handle; `checkpoints` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn fm_experiment_set_checkpoints(
    exp: *mut FmExperiment,
    checkpoints: *const u64,
    n: usize,
) -> FmStatus {
    guard(|| {
        let exp = out_ref(exp, "exp")?;
        if checkpoints.is_null() && n > 0 {
            return Err(null("checkpoints"));
        }
        let list = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(checkpoints, n).to_vec()
        };
        let candidate = exp.spec.clone().with_checkpoints(list);
        core(candidate.validate())?;
        exp.spec = candidate;
        Ok(())
    })
}

/// # Safety
/// `exp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_experiment_free(exp: *mut FmExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Runs the experiment on `threads` workers (0 uses the default pool).
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_experiment_run(
    exp: *const FmExperiment,
    threads: u32,
    out: *mut *mut FmReport,
) -> FmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let exp = exp.as_ref().ok_or_else(|| null("exp"))?;
        let report = if threads == 0 {
            core(fairmine::run_experiment(&exp.spec))?
        } else {
            core(fairmine::run_experiment_with_threads(
                &exp.spec,
                threads as usize,
            ))?
        };
        *out = Box::into_raw(Box::new(FmReport { report }));
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_report_free(report: *mut FmReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of checkpoints in a report (0 for a null handle).
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fm_report_checkpoint_count(report: *const FmReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.checkpoints.len())
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_report_checkpoint(
    report: *const FmReport,
    index: usize,
    out: *mut FmCheckpointStats,
) -> FmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let c = r.report.checkpoints.get(index).ok_or_else(|| {
            (
                FmStatus::InvalidArgument,
                format!("checkpoint index {index} out of range"),
            )
        })?;
        *out = FmCheckpointStats {
            t: c.t,
            mean: c.mean,
            std_error: c.stderr,
            p05: c.p05,
            p95: c.p95,
            unfair_prob: c.unfair_prob,
        };
        Ok(())
    })
}

/// Writes the convergence time to `out_t` and whether it exists to `out_converged`.
///
/// # Safety
/// `report` must be a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_report_convergence_time(
    report: *const FmReport,
    out_converged: *mut bool,
    out_t: *mut u64,
) -> FmStatus {
    guard(|| {
        let converged = out_ref(out_converged, "out_converged")?;
        let t = out_ref(out_t, "out_t")?;
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        (*converged, *t) = match r.report.convergence_time {
            ConvergenceTime::At(n) => (true, n),
            ConvergenceTime::Never => (false, 0),
        };
        Ok(())
    })
}

unsafe fn write_text(
    text: &str,
    buf: *mut c_char,
    len: usize,
    out_needed: *mut usize,
) -> Result<(), (FmStatus, String)> {
    if let Some(needed) = out_needed.as_mut() {
        *needed = text.len() + 1;
    }
    if buf.is_null() || len < text.len() + 1 {
        return Err((
            FmStatus::BufferTooSmall,
            format!("need {} bytes, have {len}", text.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(text.as_ptr().cast::<c_char>(), buf, text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

/// Serializes a report as CSV (`format_json = false`) or JSON into `buf`.
/// `out_needed` (optional) receives the size including the NUL terminator.
///
/// # Safety
/// `report` must be a live handle; `buf` must be null or hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn fm_report_write(
    report: *const FmReport,
    format_json: bool,
    buf: *mut c_char,
    len: usize,
    out_needed: *mut usize,
) -> FmStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let text = if format_json {
            r.report.to_json()
        } else {
            r.report.to_csv()
        };
        write_text(&text, buf, len, out_needed)
    })
}

/// Parses a JSON report previously produced by [`fm_report_write`].
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_report_from_json(
    json: *const c_char,
    out: *mut *mut FmReport,
) -> FmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (FmStatus::InvalidArgument, e.to_string()))?;
        let report = core(FairnessReport::from_json(text))?;
        *out = Box::into_raw(Box::new(FmReport { report }));
        Ok(())
    })
}

/// Smallest horizon from which PoW is (ε, δ)-fair.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_pow_bound_n(
    a: f64,
    epsilon: f64,
    delta: f64,
    out: *mut u64,
) -> FmStatus {
    guard(|| {
        *out_ref(out, "out")? = core(analytics::pow_bound_n(a, epsilon, delta))?;
        Ok(())
    })
}

/// ML-PoS sufficiency check; `n = 0` means the limit n → ∞.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_mlpos_bound_check(
    n: u64,
    proposer_reward: f64,
    a: f64,
    epsilon: f64,
    delta: f64,
    out: *mut FmBoundResult,
) -> FmStatus {
    guard(|| {
        let r = core(analytics::mlpos_bound_check(
            horizon_arg(n),
            proposer_reward,
            a,
            epsilon,
            delta,
        ))?;
        *out_ref(out, "out")? = r.into();
        Ok(())
    })
}

/// C-PoS sufficiency check; `n = 0` means the limit n → ∞.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_cpos_bound_check(
    n: u64,
    proposer_reward: f64,
    inflation_reward: f64,
    shards: u32,
    a: f64,
    epsilon: f64,
    delta: f64,
    out: *mut FmBoundResult,
) -> FmStatus {
    guard(|| {
        let r = core(analytics::cpos_bound_check(
            horizon_arg(n),
            proposer_reward,
            inflation_reward,
            shards,
            a,
            epsilon,
            delta,
        ))?;
        *out_ref(out, "out")? = r.into();
        Ok(())
    })
}

/// Exact PoW fair probability after `n` blocks.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_pow_fairness_exact(
    n: u64,
    a: f64,
    epsilon: f64,
    out: *mut f64,
) -> FmStatus {
    guard(|| {
        *out_ref(out, "out")? = core(analytics::pow_fairness_exact(n, a, epsilon))?;
        Ok(())
    })
}

/// Limiting ML-PoS fair probability.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_mlpos_limit_fairness(
    a: f64,
    proposer_reward: f64,
    epsilon: f64,
    out: *mut f64,
) -> FmStatus {
    guard(|| {
        *out_ref(out, "out")? = core(analytics::mlpos_limit_fairness(a, proposer_reward, epsilon))?;
        Ok(())
    })
}

/// Regularized incomplete beta function `I_x(alpha, beta)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_reg_inc_beta(x: f64, alpha: f64, beta: f64, out: *mut f64) -> FmStatus {
    guard(|| {
        *out_ref(out, "out")? = core(analytics::reg_inc_beta(x, alpha, beta))?;
        Ok(())
    })
}

/// Two-miner SL-PoS drift at stake share `z`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_drift(z: f64, out: *mut f64) -> FmStatus {
    guard(|| {
        *out_ref(out, "out")? = core(protocols::drift(z))?;
        Ok(())
    })
}

/// Analytic SL-PoS win probabilities for `n` stakes (at most 64), written to
/// `out`, which must hold `n` doubles.
///
/// # Safety
/// `stakes` and `out` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_slpos_win_probs(
    stakes: *const f64,
    n: usize,
    out: *mut f64,
) -> FmStatus {
    guard(|| {
        let stakes = slice_arg(stakes, n, "stakes")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let probs = core(protocols::slpos_win_probs_for(stakes))?;
        ptr::copy_nonoverlapping(probs.as_ptr(), out, probs.len());
        Ok(())
    })
}
