//! C ABI over the channel model, the position filter and the detector.
//!
//! Handles are opaque and owned by the caller once created; every `*_new`
//! has a matching `*_free`. Functions return an [`MmcStatus`] and write
//! results through out-pointers. The message of the most recent failure on
//! the calling thread is available from [`mmc_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use mmc_core::config::RunConfig;
use mmc_core::ekf::{EkfConfig, EkfState, ObservationMode, Phase, ProcessNoise};
use mmc_core::link::{self, SlotStatistics};
use mmc_core::physics::{self, PhysicalParams};
use mmc_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    NonPositiveTime = 3,
    UnusableChannel = 4,
    SingularInnovation = 5,
    UpdateWithoutPredict = 6,
    DegenerateStatistics = 7,
    Config = 8,
    BufferTooSmall = 9,
    InvalidArgument = 10,
    Internal = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmcObservationMode {
    Feedback = 0,
    Update = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MmcSlotStatistics {
    pub mu0: f64,
    pub var0: f64,
    pub mu1: f64,
    pub var1: f64,
}

impl From<SlotStatistics> for MmcSlotStatistics {
    fn from(s: SlotStatistics) -> Self {
        Self {
            mu0: s.mu0,
            var0: s.var0,
            mu1: s.mu1,
            var1: s.var1,
        }
    }
}

impl From<MmcSlotStatistics> for SlotStatistics {
    fn from(s: MmcSlotStatistics) -> Self {
        Self {
            mu0: s.mu0,
            var0: s.var0,
            mu1: s.mu1,
            var1: s.var1,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MmcOpCount {
    pub mults: u64,
    pub adds: u64,
}

/// Physical parameters of the vessel, fluid and terminals.
pub struct MmcParams(PhysicalParams);

/// Position filter for the receiver.
pub struct MmcEkf(EkfState);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: MmcStatus, msg: impl Into<String>) -> MmcStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> MmcStatus {
    match e {
        Error::InvalidParams(_) => MmcStatus::InvalidParams,
        Error::NonPositiveTime(_) => MmcStatus::NonPositiveTime,
        Error::UnusableChannel { .. } => MmcStatus::UnusableChannel,
        Error::SingularInnovation(_) => MmcStatus::SingularInnovation,
        Error::UpdateWithoutPredict => MmcStatus::UpdateWithoutPredict,
        Error::DegenerateStatistics(_) => MmcStatus::DegenerateStatistics,
        Error::Config(_) => MmcStatus::Config,
        _ => MmcStatus::Internal,
    }
}

fn from_error(e: Error) -> MmcStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, turning panics into `Internal` so none unwind into C.
fn guard(f: impl FnOnce() -> MmcStatus) -> MmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == MmcStatus::Ok {
                set_error(String::new());
            }
            s
        }
        Err(_) => fail(MmcStatus::Internal, "internal panic"),
    }
}

macro_rules! deref {
    ($p:expr, $name:literal) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => return fail(MmcStatus::NullPointer, concat!($name, " is null")),
        }
    };
}

macro_rules! deref_mut {
    ($p:expr, $name:literal) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(MmcStatus::NullPointer, concat!($name, " is null")),
        }
    };
}

/// Borrows `len` elements, allowing a null pointer only when `len == 0`.
unsafe fn input<'a>(p: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(p, len))
    }
}

/// Copies the message of the last failure on this thread into `buf` as a
/// NUL-terminated string, truncating to `cap - 1` bytes. Returns the full
/// message length in bytes (without the terminator).
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mmc_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Default parameter set.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mmc_params_new_default(out: *mut *mut MmcParams) -> MmcStatus {
    guard(|| {
        let out = deref_mut!(out, "out");
        *out = Box::into_raw(Box::new(MmcParams(PhysicalParams::default())));
        MmcStatus::Ok
    })
}

/// Parameters from TOML config text (only the `[physics]` table is used by
/// the handle; the whole document is validated).
///
/// # Safety
/// `toml` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmc_params_from_toml(
    toml: *const c_char,
    out: *mut *mut MmcParams,
) -> MmcStatus {
    guard(|| {
        if toml.is_null() {
            return fail(MmcStatus::NullPointer, "toml is null");
        }
        let out = deref_mut!(out, "out");
        let text = match CStr::from_ptr(toml).to_str() {
            Ok(t) => t,
            Err(_) => return fail(MmcStatus::Config, "config text is not UTF-8"),
        };
        match RunConfig::from_toml_str(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(MmcParams(cfg.params())));
                MmcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `p` must be null or a handle from `mmc_params_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmc_params_free(p: *mut MmcParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Bit interval `steps_per_bit * T` in seconds.
///
/// # Safety
/// `p` must be a live params handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmc_params_bit_interval(p: *const MmcParams, out: *mut f64) -> MmcStatus {
    guard(|| {
        let p = deref!(p, "params");
        *deref_mut!(out, "out") = p.0.bit_interval();
        MmcStatus::Ok
    })
}

/// Cross-section averaged flow velocity (m/s).
///
/// # Safety
/// `p` must be a live params handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmc_effective_velocity(p: *const MmcParams, out: *mut f64) -> MmcStatus {
    guard(|| {
        let p = deref!(p, "params");
        *deref_mut!(out, "out") = physics::effective_velocity(&p.0);
        MmcStatus::Ok
    })
}

/// Axial flow velocity at radial offset `r_perp`.
///
/// # Safety
/// `p` must be a live params handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmc_velocity_at(
    p: *const MmcParams,
    r_perp: f64,
    out: *mut f64,
) -> MmcStatus {
    guard(|| {
        let p = deref!(p, "params");
        *deref_mut!(out, "out") = physics::velocity_at(r_perp, &p.0);
        MmcStatus::Ok
    })
}

/// Probability that one molecule is inside the receiver at time `t` when
/// the terminals are `d_x` apart.
///
/// # Safety
/// `p` must be a live params handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmc_impulse_response(
    p: *const MmcParams,
    t: f64,
    d_x: f64,
    out: *mut f64,
) -> MmcStatus {
    guard(|| {
        let p = deref!(p, "params");
        let out = deref_mut!(out, "out");
        match physics::impulse_response(t, d_x, &p.0) {
            Ok(v) => {
                *out = v;
                MmcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Per-slot arrival probabilities `P_1, P_2, ...` at distance `d_x`.
/// The full length is always written to `len`; `BufferTooSmall` is
/// returned when it exceeds `cap`, with the first `cap` entries filled.
///
/// # Safety
/// `p` must be a live params handle, `buf` null or valid for `cap`
/// writes, and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmc_arrival_probabilities(
    p: *const MmcParams,
    d_x: f64,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> MmcStatus {
    guard(|| {
        let p = deref!(p, "params");
        let len = deref_mut!(len, "len");
        if !(d_x.is_finite() && d_x >= 0.0) {
            return fail(
                MmcStatus::InvalidArgument,
                format!("distance must be finite and non-negative, got {d_x}"),
            );
        }
        let probs = physics::arrival_probabilities(d_x, &p.0);
        *len = probs.len();
        let n = probs.len().min(cap);
        if n > 0 {
            if buf.is_null() {
                return fail(MmcStatus::NullPointer, "buf is null");
            }
            ptr::copy_nonoverlapping(probs.as_ptr(), buf, n);
        }
        if probs.len() > cap {
            return fail(
                MmcStatus::BufferTooSmall,
                format!("need {} entries, have {cap}", probs.len()),
            );
        }
        MmcStatus::Ok
    })
}

/// Filter started at `initial` (3 doubles) with per-axis observation
/// noise `sigma_obs`, using the variance form of the process noise.
///
/// # Safety
/// `p` must be a live params handle, `initial` valid for 3 reads and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmc_ekf_new(
    p: *const MmcParams,
    initial: *const f64,
    mode: MmcObservationMode,
    sigma_obs: f64,
    out: *mut *mut MmcEkf,
) -> MmcStatus {
    guard(|| {
        let p = deref!(p, "params");
        let out = deref_mut!(out, "out");
        let Some(init) = input(initial, 3) else {
            return fail(MmcStatus::NullPointer, "initial is null");
        };
        if !(sigma_obs.is_finite() && sigma_obs >= 0.0) {
            return fail(
                MmcStatus::InvalidArgument,
                format!("sigma_obs must be non-negative, got {sigma_obs}"),
            );
        }
        let cfg = EkfConfig {
            mode: match mode {
                MmcObservationMode::Feedback => ObservationMode::Feedback,
                MmcObservationMode::Update => ObservationMode::Update,
            },
            sigma_obs,
            process_noise: ProcessNoise::Variance,
        };
        *out = Box::into_raw(Box::new(MmcEkf(EkfState::new(
            [init[0], init[1], init[2]],
            &p.0,
            &cfg,
        ))));
        MmcStatus::Ok
    })
}

/// # Safety
/// `f` must be null or a handle from `mmc_ekf_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmc_ekf_free(f: *mut MmcEkf) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// # Safety
/// `f` must be a live filter handle.
#[no_mangle]
pub unsafe extern "C" fn mmc_ekf_predict(f: *mut MmcEkf) -> MmcStatus {
    guard(|| {
        deref_mut!(f, "ekf").0.predict();
        MmcStatus::Ok
    })
}

/// Corrects the prediction with observation `z` (3 doubles).
///
/// # Safety
/// `f` must be a live filter handle and `z` valid for 3 reads.
#[no_mangle]
pub unsafe extern "C" fn mmc_ekf_update(f: *mut MmcEkf, z: *const f64) -> MmcStatus {
    guard(|| {
        let f = deref_mut!(f, "ekf");
        let Some(z) = input(z, 3) else {
            return fail(MmcStatus::NullPointer, "z is null");
        };
        match f.0.update(&[z[0], z[1], z[2]]) {
            Ok(()) => MmcStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Writes the state estimate (3 doubles).
///
/// # Safety
/// `f` must be a live filter handle and `out` valid for 3 writes.
#[no_mangle]
pub unsafe extern "C" fn mmc_ekf_estimate(f: *const MmcEkf, out: *mut f64) -> MmcStatus {
    guard(|| {
        let f = deref!(f, "ekf");
        if out.is_null() {
            return fail(MmcStatus::NullPointer, "out is null");
        }
        ptr::copy_nonoverlapping(f.0.estimate.as_ptr(), out, 3);
        MmcStatus::Ok
    })
}

/// Writes the covariance row-major (9 doubles).
///
/// # Safety
/// `f` must be a live filter handle and `out` valid for 9 writes.
#[no_mangle]
pub unsafe extern "C" fn mmc_ekf_covariance(f: *const MmcEkf, out: *mut f64) -> MmcStatus {
    guard(|| {
        let f = deref!(f, "ekf");
        if out.is_null() {
            return fail(MmcStatus::NullPointer, "out is null");
        }
        for (i, row) in f.0.covariance.iter().enumerate() {
            ptr::copy_nonoverlapping(row.as_ptr(), out.add(3 * i), 3);
        }
        MmcStatus::Ok
    })
}

/// Cumulative operation counts: `phases` receives the five per-phase
/// counts in iteration order, `total` their sum. Either may be null.
///
/// # Safety
/// `f` must be a live filter handle; `phases` null or valid for 5 writes,
/// `total` null or valid.
#[no_mangle]
pub unsafe extern "C" fn mmc_ekf_op_counts(
    f: *const MmcEkf,
    phases: *mut MmcOpCount,
    total: *mut MmcOpCount,
) -> MmcStatus {
    guard(|| {
        let f = deref!(f, "ekf");
        let c = &f.0.counters;
        if !phases.is_null() {
            for (i, ph) in Phase::ALL.iter().enumerate() {
                let o = c.get(*ph);
                *phases.add(i) = MmcOpCount {
                    mults: o.mults,
                    adds: o.adds,
                };
            }
        }
        if let Some(t) = total.as_mut() {
            let o = c.total();
            *t = MmcOpCount {
                mults: o.mults,
                adds: o.adds,
            };
        }
        MmcStatus::Ok
    })
}

/// Molecules to emit so the expected bit-1 count equals `target`, given the
/// last `n_emitted` emissions (oldest first) and `n_probs` slot
/// probabilities.
///
/// # Safety
/// The arrays must be valid for their stated lengths (null allowed when
/// the length is zero); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmc_power_control(
    target: f64,
    emitted: *const f64,
    n_emitted: usize,
    probs: *const f64,
    n_probs: usize,
    p_min: f64,
    out: *mut u64,
) -> MmcStatus {
    guard(|| {
        let out = deref_mut!(out, "out");
        let (Some(e), Some(p)) = (input(emitted, n_emitted), input(probs, n_probs)) else {
            return fail(MmcStatus::NullPointer, "input array is null");
        };
        match link::power_control(target, e, p, p_min) {
            Ok(n) => {
                *out = n;
                MmcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Receiver statistics averaged over equiprobable past bits.
///
/// # Safety
/// The arrays must be valid for their stated lengths (null allowed when
/// the length is zero); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmc_slot_statistics(
    levels: *const f64,
    n_levels: usize,
    n_k: f64,
    probs: *const f64,
    n_probs: usize,
    noise_scale: f64,
    out: *mut MmcSlotStatistics,
) -> MmcStatus {
    guard(|| {
        let out = deref_mut!(out, "out");
        let (Some(l), Some(p)) = (input(levels, n_levels), input(probs, n_probs)) else {
            return fail(MmcStatus::NullPointer, "input array is null");
        };
        *out = link::slot_statistics(l, n_k, p, noise_scale).into();
        MmcStatus::Ok
    })
}

/// Threshold minimizing the error probability of `stats`.
///
/// # Safety
/// `stats` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mmc_optimal_threshold(
    stats: *const MmcSlotStatistics,
    out: *mut f64,
) -> MmcStatus {
    guard(|| {
        let s = *deref!(stats, "stats");
        let out = deref_mut!(out, "out");
        match link::optimal_threshold(&s.into()) {
            Ok(t) => {
                *out = t;
                MmcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Error probability of a threshold detector on `stats`.
///
/// # Safety
/// `stats` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mmc_error_probability(
    stats: *const MmcSlotStatistics,
    threshold: f64,
    out: *mut f64,
) -> MmcStatus {
    guard(|| {
        let s = *deref!(stats, "stats");
        *deref_mut!(out, "out") = link::error_probability(&s.into(), threshold);
        MmcStatus::Ok
    })
}
