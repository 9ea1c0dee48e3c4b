//! C ABI over `seqmetro`.
//!
//! Every function returns an [`SmStatus`]. On failure the message is kept
//! per thread and can be read with [`sm_last_error_message`]. Instruments are
//! opaque handles released with [`sm_instrument_free`]. Output arrays are
//! caller-allocated; matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use seqmetro::asymptotics::{covariance_matrix, sigma2, FisherOptions};
use seqmetro::instrument::{build_generators, Instrument};
use seqmetro::linop::DensityMatrix;
use seqmetro::model::ModelSpec;
use seqmetro::thermometer::{fisher_standard, thermometer_instrument, ThermometerParams};
use seqmetro::trajectory::{sample_batch, sample_statistics};
use seqmetro::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    NotCptp = 4,
    NonErgodic = 5,
    NotMixing = 6,
    CapExceeded = 7,
    Numerical = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Instrument plus the initial state used for sampling.
pub struct SmInstrument {
    instrument: Instrument,
    initial: Option<DensityMatrix>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SmStatus {
    match e {
        Error::Parse(_) | Error::Io(_) => SmStatus::Parse,
        Error::NotCptp { .. } | Error::IncompletePovm { .. } => SmStatus::NotCptp,
        Error::NoUniqueFixedPoint => SmStatus::NonErgodic,
        Error::NotMixing => SmStatus::NotMixing,
        Error::CapExceeded { .. } => SmStatus::CapExceeded,
        Error::NonStationaryCentering { .. }
        | Error::DegenerateCovariance
        | Error::VanishingProbability
        | Error::NegativeProbability(_)
        | Error::Numerical(_) => SmStatus::Numerical,
        _ => SmStatus::InvalidArgument,
    }
}

enum Failure {
    Status(SmStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard<F>(f: F) -> SmStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SmStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            SmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(SmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a>(p: *const SmInstrument) -> Result<&'a SmInstrument, Failure> {
    p.as_ref().ok_or_else(|| null("instrument"))
}

unsafe fn out_slice<'a>(out: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < needed {
        return Err(Failure::Status(
            SmStatus::BufferTooSmall,
            format!("output buffer holds {len} values, {needed} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(out, needed))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

fn initial_state(h: &SmInstrument) -> Result<DensityMatrix, Error> {
    match &h.initial {
        Some(r) => Ok(r.clone()),
        None => Ok(h.instrument.spectral().fixed_point()?.clone()),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len - 1` bytes). Returns the full message
/// length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sm_last_error_message(buf: *mut c_char, len: usize) -> usize {
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

/// Qubit thermometer instrument (weak σ_z measurement of strength `eta`
/// followed by thermalization for time `tau`). Sampling starts from `|↓⟩`.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn sm_instrument_thermometer(
    gamma: f64,
    gamma_beta: f64,
    omega: f64,
    tau: f64,
    eta: f64,
    out: *mut *mut SmInstrument,
) -> SmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = ThermometerParams::new(gamma, gamma_beta, omega, tau, eta)?;
        let h = SmInstrument {
            instrument: thermometer_instrument(&p)?,
            initial: Some(p.initial_state()?),
        };
        out.write(Box::into_raw(Box::new(h)));
        Ok(())
    })
}

/// Instrument from a JSON model document. Sampling starts from the model's
/// `initial_state`, or from the fixed point when it is absent.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sm_instrument_from_json(json: *const c_char, out: *mut *mut SmInstrument) -> SmStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Error::Parse(format!("json is not UTF-8: {e}")))?;
        let model = ModelSpec::from_json(text)?.build()?;
        let h = SmInstrument {
            instrument: model.instrument,
            initial: model.initial_state,
        };
        out.write(Box::into_raw(Box::new(h)));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `p` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_instrument_free(p: *mut SmInstrument) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Hilbert-space dimension.
///
/// # Safety
/// `p` must be a live handle; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sm_instrument_dim(p: *const SmInstrument, out: *mut usize) -> SmStatus {
    guard(|| write_out(out, handle(p)?.instrument.dim()))
}

/// Stationary mean `⟨S⟩*`.
///
/// # Safety
/// `p` must be a live handle; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sm_stationary_mean(p: *const SmInstrument, out: *mut f64) -> SmStatus {
    guard(|| {
        let gen = build_generators(&handle(p)?.instrument, 1)?;
        write_out(out, gen.mean())
    })
}

/// Asymptotic variance `σ² = lim N Var(S)`; requires a mixing channel.
///
/// # Safety
/// `p` must be a live handle; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sm_sigma2(p: *const SmInstrument, out: *mut f64) -> SmStatus {
    guard(|| {
        let gen = build_generators(&handle(p)?.instrument, 1)?;
        write_out(out, sigma2(&gen)?)
    })
}

/// Asymptotic covariance of `(S, C_1..C_L)`, `(L+1)²` values row-major.
///
/// # Safety
/// `p` must be a live handle; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sm_covariance_matrix(p: *const SmInstrument, l: usize, out: *mut f64, len: usize) -> SmStatus {
    guard(|| {
        let h = handle(p)?;
        let dst = out_slice(out, len, (l + 1) * (l + 1))?;
        let gen = build_generators(&h.instrument, l.max(1))?;
        let rep = covariance_matrix(&gen, l)?;
        for i in 0..=l {
            for j in 0..=l {
                dst[i * (l + 1) + j] = rep.sigma[(i, j)];
            }
        }
        Ok(())
    })
}

/// One simulated record of length `n`, reduced to `(S, C_1..C_L)`.
///
/// # Safety
/// `p` must be a live handle; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sm_sample_statistics(
    p: *const SmInstrument,
    n: usize,
    l: usize,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> SmStatus {
    guard(|| {
        let h = handle(p)?;
        let dst = out_slice(out, len, l + 1)?;
        let rec = sample_statistics(&h.instrument, &initial_state(h)?, n, l, seed)?;
        dst.copy_from_slice(&rec.vector());
        Ok(())
    })
}

/// `batch` records; row `i` is `(S, C_1..C_L)` of trajectory `i`, using
/// the same per-index seeds as the command-line tool.
///
/// # Safety
/// `p` must be a live handle; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sm_sample_batch(
    p: *const SmInstrument,
    n: usize,
    l: usize,
    batch: usize,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> SmStatus {
    guard(|| {
        let h = handle(p)?;
        let needed = batch
            .checked_mul(l + 1)
            .ok_or_else(|| Failure::Status(SmStatus::InvalidArgument, "batch too large".into()))?;
        let dst = out_slice(out, len, needed)?;
        let rows = sample_batch(&h.instrument, &initial_state(h)?, n, l, batch, seed)?;
        for (chunk, (_, rec)) in dst.chunks_mut(l + 1).zip(&rows) {
            chunk.copy_from_slice(&rec.vector());
        }
        Ok(())
    })
}

/// Thermometer Fisher information per measurement with respect to `γβ`.
/// Writes `F_0/N .. F_L/N` of the sequential strategy, then the standard
/// strategy `F` and the quantum bound `F_Q`: `L + 3` values.
///
/// # Safety
/// `out` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sm_thermometer_fisher(
    gamma: f64,
    gamma_beta: f64,
    omega: f64,
    tau: f64,
    eta: f64,
    l: usize,
    out: *mut f64,
    len: usize,
) -> SmStatus {
    guard(|| {
        let dst = out_slice(out, len, l + 3)?;
        let p = ThermometerParams::new(gamma, gamma_beta, omega, tau, eta)?;
        let rep = seqmetro::asymptotics::fisher(
            |gb| thermometer_instrument(&p.with_gamma_beta(gb)),
            gamma_beta,
            l,
            1,
            FisherOptions::default(),
        )?;
        let (f, fq) = fisher_standard(&p)?;
        dst[..=l].copy_from_slice(&rep.per_n);
        dst[l + 1] = f;
        dst[l + 2] = fq;
        Ok(())
    })
}
