//! C ABI for `dyntrack`.
//!
//! Every function returns a [`DtStatus`]; results go through out-pointers.
//! On failure, [`dt_last_error`] describes the most recent error on the
//! calling thread. Bitstrings cross the boundary as one byte per bit (0 or 1).
//! Operators are given as the text specs the CLI accepts, e.g.
//! `"tournament:k=5"` or `"bitwise:chi=1"`; a null mutation means the default.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dyntrack::algorithms::{run_population, run_single, Trace, TraceOptions};
use dyntrack::analysis::{ruin_probability_closed, ruin_probability_exact, tracking_score};
use dyntrack::dynamics::stability_bound;
use dyntrack::operators::beta_closed_form;
use dyntrack::stats::poisson_tail_bound;
use dyntrack::{Bitstring, DynamicFunction, Error, MhbInstance, MhbParams, MutationOp, RngStream, SelectionSpec};

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DtStatus {
    Ok = 0,
    InvalidInput = 1,
    LengthMismatch = 2,
    FutureTime = 3,
    NullPointer = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A Moving Hamming Ball instance with its own evaluation clock.
pub struct DtMhb {
    inner: MhbInstance,
}

/// The trace of one algorithm run.
pub struct DtTrace {
    inner: Trace,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DtGeneration {
    pub generation: u64,
    pub clock: u64,
    pub in_opt_count: u64,
    pub population: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DtTracking {
    pub windows: u64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub tracks: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DtStability {
    pub kappa: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub multi_change_bound: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(DtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::LengthMismatch { .. } => DtStatus::LengthMismatch,
            Error::FutureTime { .. } => DtStatus::FutureTime,
            ref e if e.is_io() => DtStatus::Io,
            _ => DtStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> DtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DtStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure(DtStatus::InvalidInput, format!("`{what}` is not valid UTF-8")))
}

unsafe fn mutation(p: *const c_char) -> FfiResult<MutationOp> {
    Ok(match text(p, "mutation")? {
        Some(s) => s.parse()?,
        None => MutationOp::default(),
    })
}

unsafe fn selection(p: *const c_char) -> FfiResult<SelectionSpec> {
    Ok(text(p, "selection")?.ok_or_else(|| null("selection"))?.parse()?)
}

unsafe fn bits_in(p: *const u8, len: usize) -> FfiResult<Bitstring> {
    if p.is_null() {
        return Err(null("bits"));
    }
    let raw = std::slice::from_raw_parts(p, len);
    if let Some(b) = raw.iter().find(|&&b| b > 1) {
        return Err(Failure(DtStatus::InvalidInput, format!("bit values must be 0 or 1, got {b}")));
    }
    let v: Vec<bool> = raw.iter().map(|&b| b == 1).collect();
    Ok(Bitstring::from_bits(&v)?)
}

unsafe fn bits_out(x: &Bitstring, p: *mut u8, len: usize) -> FfiResult {
    if p.is_null() {
        return Err(null("out_bits"));
    }
    if len < x.len() {
        return Err(Failure(
            DtStatus::BufferTooSmall,
            format!("buffer holds {len} bits, need {}", x.len()),
        ));
    }
    let dst = std::slice::from_raw_parts_mut(p, x.len());
    for (d, b) in dst.iter_mut().zip(x.iter()) {
        *d = u8::from(b);
    }
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes.
#[no_mangle]
pub unsafe extern "C" fn dt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an instance with radius `r`, `l`-bit moves and mean change
/// interval `theta` (infinite for a frozen target). `seed`/`stream` select
/// the change schedule.
#[no_mangle]
pub unsafe extern "C" fn dt_mhb_new(
    n: usize,
    r: usize,
    l: usize,
    theta: f64,
    seed: u64,
    stream: u64,
    out_mhb: *mut *mut DtMhb,
) -> DtStatus {
    guard(|| {
        let slot = out(out_mhb, "out_mhb")?;
        let params = MhbParams::new(n, r, l, theta)?;
        let inner = MhbInstance::new(params, RngStream::new(seed, stream))?;
        *slot = Box::into_raw(Box::new(DtMhb { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dt_mhb_free(mhb: *mut DtMhb) {
    if !mhb.is_null() {
        drop(Box::from_raw(mhb));
    }
}

#[no_mangle]
pub unsafe extern "C" fn dt_mhb_dimension(mhb: *const DtMhb, out_n: *mut usize) -> DtStatus {
    guard(|| {
        *out(out_n, "out_n")? = handle(mhb, "mhb")?.inner.dimension();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dt_mhb_clock(mhb: *const DtMhb, out_clock: *mut u64) -> DtStatus {
    guard(|| {
        *out(out_clock, "out_clock")? = handle(mhb, "mhb")?.inner.clock();
        Ok(())
    })
}

/// Evaluates `bits` with the function as of time `at <= clock` and advances
/// the clock by one.
#[no_mangle]
pub unsafe extern "C" fn dt_mhb_evaluate(
    mhb: *mut DtMhb,
    bits: *const u8,
    len: usize,
    at: u64,
    out_value: *mut f64,
) -> DtStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        let f = &mut mhb.as_mut().ok_or_else(|| null("mhb"))?.inner;
        *slot = f.evaluate(&bits_in(bits, len)?, at)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dt_mhb_is_optimal_at(
    mhb: *const DtMhb,
    bits: *const u8,
    len: usize,
    t: u64,
    out_optimal: *mut bool,
) -> DtStatus {
    guard(|| {
        let slot = out(out_optimal, "out_optimal")?;
        *slot = handle(mhb, "mhb")?.inner.is_optimal_at(&bits_in(bits, len)?, t)?;
        Ok(())
    })
}

/// Writes the target in force at time `t <= clock` into `out_bits`.
#[no_mangle]
pub unsafe extern "C" fn dt_mhb_target_at(mhb: *const DtMhb, t: u64, out_bits: *mut u8, len: usize) -> DtStatus {
    guard(|| bits_out(handle(mhb, "mhb")?.inner.target_at(t)?, out_bits, len))
}

fn start_point(f: &MhbInstance) -> FfiResult<Bitstring> {
    if f.clock() != 0 {
        return Err(Failure(DtStatus::InvalidInput, "runs need a fresh instance (clock = 0)".into()));
    }
    Ok(f.target_at(0)?.clone())
}

/// Runs the (1+1) EA for `budget` evaluations from the initial target.
#[no_mangle]
pub unsafe extern "C" fn dt_run_single(
    mhb: *mut DtMhb,
    mutation_spec: *const c_char,
    budget: u64,
    seed: u64,
    stream: u64,
    out_trace: *mut *mut DtTrace,
) -> DtStatus {
    guard(|| {
        let slot = out(out_trace, "out_trace")?;
        let f = &mut mhb.as_mut().ok_or_else(|| null("mhb"))?.inner;
        let op = mutation(mutation_spec)?;
        let x0 = start_point(f)?;
        let inner = run_single(f, &op, x0, budget, TraceOptions::default(), &mut RngStream::new(seed, stream))?;
        *slot = Box::into_raw(Box::new(DtTrace { inner }));
        Ok(())
    })
}

/// Runs the population EA with `lambda` members, all starting at the
/// initial target.
#[no_mangle]
pub unsafe extern "C" fn dt_run_population(
    mhb: *mut DtMhb,
    selection_spec: *const c_char,
    mutation_spec: *const c_char,
    lambda: usize,
    budget: u64,
    seed: u64,
    stream: u64,
    out_trace: *mut *mut DtTrace,
) -> DtStatus {
    guard(|| {
        let slot = out(out_trace, "out_trace")?;
        let f = &mut mhb.as_mut().ok_or_else(|| null("mhb"))?.inner;
        let sel = selection(selection_spec)?;
        let op = mutation(mutation_spec)?;
        let p0 = vec![start_point(f)?; lambda];
        let inner = run_population(f, &sel, &op, p0, budget, TraceOptions::default(), &mut RngStream::new(seed, stream))?;
        *slot = Box::into_raw(Box::new(DtTrace { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dt_trace_free(trace: *mut DtTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of evaluations in the trace.
#[no_mangle]
pub unsafe extern "C" fn dt_trace_len(trace: *const DtTrace, out_len: *mut u64) -> DtStatus {
    guard(|| {
        *out(out_len, "out_len")? = handle(trace, "trace")?.inner.len() as u64;
        Ok(())
    })
}

/// Copies the per-evaluation optimality flags (0/1) into `out_hits`.
#[no_mangle]
pub unsafe extern "C" fn dt_trace_hits(trace: *const DtTrace, out_hits: *mut u8, len: usize) -> DtStatus {
    guard(|| {
        let hits = &handle(trace, "trace")?.inner.hits;
        if out_hits.is_null() {
            return Err(null("out_hits"));
        }
        if len < hits.len() {
            return Err(Failure(
                DtStatus::BufferTooSmall,
                format!("buffer holds {len} entries, need {}", hits.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(out_hits, hits.len());
        for (d, &h) in dst.iter_mut().zip(hits) {
            *d = u8::from(h);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dt_trace_generation_count(trace: *const DtTrace, out_count: *mut u64) -> DtStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(trace, "trace")?.inner.generations.len() as u64;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dt_trace_generation(trace: *const DtTrace, index: u64, out_gen: *mut DtGeneration) -> DtStatus {
    guard(|| {
        let slot = out(out_gen, "out_gen")?;
        let gens = &handle(trace, "trace")?.inner.generations;
        let g = gens.get(index as usize).ok_or_else(|| {
            Failure(DtStatus::InvalidInput, format!("generation index {index} out of range (count {})", gens.len()))
        })?;
        *slot = DtGeneration {
            generation: g.generation,
            clock: g.clock,
            in_opt_count: g.in_opt_count as u64,
            population: g.population as u64,
        };
        Ok(())
    })
}

/// Sliding-window optimal-hit fractions of a trace, reported as tracking at
/// level `threshold` when the minimum reaches it.
#[no_mangle]
pub unsafe extern "C" fn dt_tracking_score(
    trace: *const DtTrace,
    window: usize,
    t0: usize,
    threshold: f64,
    out_report: *mut DtTracking,
) -> DtStatus {
    guard(|| {
        let slot = out(out_report, "out_report")?;
        let rep = tracking_score(&handle(trace, "trace")?.inner, window, t0, threshold)?;
        *slot = DtTracking {
            windows: rep.windows as u64,
            min: rep.min,
            mean: rep.mean,
            max: rep.max,
            tracks: rep.tracks,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dt_beta_closed_form(
    selection_spec: *const c_char,
    gamma: f64,
    lambda: usize,
    out_beta: *mut f64,
) -> DtStatus {
    guard(|| {
        let slot = out(out_beta, "out_beta")?;
        *slot = beta_closed_form(&selection(selection_spec)?, gamma, lambda)?;
        Ok(())
    })
}

/// Stability constants for bitwise mutation with rate `chi / n`. A
/// non-positive `epsilon` selects the default.
#[no_mangle]
pub unsafe extern "C" fn dt_stability_bound(
    n: usize,
    r: usize,
    l: usize,
    theta: f64,
    chi: f64,
    epsilon: f64,
    d: f64,
    out_bound: *mut DtStability,
) -> DtStatus {
    guard(|| {
        let slot = out(out_bound, "out_bound")?;
        let params = MhbParams::new(n, r, l, theta)?;
        let eps = (epsilon > 0.0).then_some(epsilon);
        let b = stability_bound(&params, chi, eps, d)?;
        *slot = DtStability {
            kappa: b.kappa,
            rho: b.rho,
            epsilon: b.epsilon,
            multi_change_bound: b.multi_change_bound,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dt_ruin_closed(r: usize, d: usize, n: usize, x: usize, out_p: *mut f64) -> DtStatus {
    guard(|| {
        *out(out_p, "out_p")? = ruin_probability_closed(r, d, n, x)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dt_ruin_exact(r: usize, d: usize, n: usize, x: usize, out_p: *mut f64) -> DtStatus {
    guard(|| {
        *out(out_p, "out_p")? = ruin_probability_exact(r, d, n, x)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dt_poisson_tail_bound(theta: f64, x: f64, out_bound: *mut f64) -> DtStatus {
    guard(|| {
        *out(out_bound, "out_bound")? = poisson_tail_bound(theta, x)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let mut buf = [0 as c_char; 256];
        let n = unsafe { dt_last_error(buf.as_mut_ptr(), buf.len()) };
        let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
        assert_eq!(n, s.len());
        s
    }

    #[test]
    fn errors_map_to_codes_and_messages() {
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { dt_mhb_new(10, 10, 1, 5.0, 1, 0, &mut h) }, DtStatus::InvalidInput);
        assert!(h.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(unsafe { dt_mhb_new(10, 2, 1, 5.0, 1, 0, ptr::null_mut()) }, DtStatus::NullPointer);
        assert!(last_error().contains("out_mhb"));
        let mut p = 0.0;
        assert_eq!(unsafe { dt_ruin_exact(2, 4, 32, 3, &mut p) }, DtStatus::Ok);
        assert!(last_error().is_empty());
    }

    #[test]
    fn truncated_error_buffer_is_terminated() {
        let mut p = 0.0;
        unsafe { dt_poisson_tail_bound(5.0, 9.0, &mut p) };
        let mut buf = [1 as c_char; 4];
        let full = unsafe { dt_last_error(buf.as_mut_ptr(), buf.len()) };
        assert!(full > 3);
        assert_eq!(buf[3], 0);
    }

    #[test]
    fn bad_bit_values_are_rejected() {
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { dt_mhb_new(4, 1, 1, f64::INFINITY, 1, 0, &mut h) }, DtStatus::Ok);
        let mut v = 0.0;
        let bits = [1u8, 2, 1, 1];
        assert_eq!(unsafe { dt_mhb_evaluate(h, bits.as_ptr(), 4, 0, &mut v) }, DtStatus::InvalidInput);
        unsafe { dt_mhb_free(h) };
    }
}
