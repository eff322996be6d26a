//! C ABI over the `fdisac` simulator.
//!
//! Objects are opaque handles created and destroyed by this library.
//! Every fallible function returns an [`FdisacStatus`]; on failure a message
//! is available from [`fdisac_last_error`] on the same thread. Strings handed
//! out by the library are released with [`fdisac_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fdisac::error::Error;
use fdisac::link_budget::{self, BudgetParams, ShadowMode};
use fdisac::scenario::Scenario;
use fdisac::simulator::{run_experiment, ExperimentOptions, ExperimentResult, SweepField};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdisacStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Infeasible = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Scenario description. Create with [`fdisac_scenario_default`] or
/// [`fdisac_scenario_from_toml`].
pub struct FdisacScenario {
    inner: Scenario,
}

/// Outcome of one optimized and simulated realization.
pub struct FdisacRun {
    inner: ExperimentResult,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FdisacEstimate {
    pub angle_deg: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub peak_power_db: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FdisacTarget {
    pub angle_deg: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub rcs_m2: f64,
}

/// Radar-equation parameters. `round_trip_shadowing` selects whether the
/// shadowing loss is applied once or on both legs.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdisacBudget {
    pub tx_power_dbm: f64,
    pub combined_gain_db: f64,
    pub sinr_target_db: f64,
    pub noise_floor_dbm: f64,
    pub nf_db: f64,
    pub rcs_m2: f64,
    pub ploss_exp: f64,
    pub shadow_db: f64,
    pub wavelength_m: f64,
    pub round_trip_shadowing: bool,
    pub min_range_m: f64,
    pub max_range_m: f64,
}

impl From<&BudgetParams> for FdisacBudget {
    fn from(p: &BudgetParams) -> Self {
        Self {
            tx_power_dbm: p.tx_power_dbm,
            combined_gain_db: p.combined_gain_db,
            sinr_target_db: p.sinr_target_db,
            noise_floor_dbm: p.noise_floor_dbm,
            nf_db: p.nf_db,
            rcs_m2: p.rcs_m2,
            ploss_exp: p.ploss_exp,
            shadow_db: p.shadow_db,
            wavelength_m: p.wavelength_m,
            round_trip_shadowing: p.shadow_mode == ShadowMode::RoundTrip,
            min_range_m: p.min_range_m,
            max_range_m: p.max_range_m,
        }
    }
}

impl From<&FdisacBudget> for BudgetParams {
    fn from(b: &FdisacBudget) -> Self {
        Self {
            tx_power_dbm: b.tx_power_dbm,
            combined_gain_db: b.combined_gain_db,
            sinr_target_db: b.sinr_target_db,
            noise_floor_dbm: b.noise_floor_dbm,
            nf_db: b.nf_db,
            rcs_m2: b.rcs_m2,
            ploss_exp: b.ploss_exp,
            shadow_db: b.shadow_db,
            wavelength_m: b.wavelength_m,
            shadow_mode: if b.round_trip_shadowing {
                ShadowMode::RoundTrip
            } else {
                ShadowMode::OneWay
            },
            min_range_m: b.min_range_m,
            max_range_m: b.max_range_m,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FdisacStatus {
    match e {
        Error::Infeasible(_) => FdisacStatus::Infeasible,
        Error::Config { .. } => FdisacStatus::Config,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => FdisacStatus::Io,
        Error::Domain(_) | Error::UnsupportedQamOrder(_) | Error::DimensionMismatch(_) => FdisacStatus::InvalidArgument,
    }
}

struct Failure(FdisacStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FdisacStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FdisacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FdisacStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(&format!("internal panic: {msg}"));
            FdisacStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(FdisacStatus::InvalidArgument, "string contains NUL".into()))
}

fn index(i: usize, len: usize) -> Result<usize, Failure> {
    if i < len {
        Ok(i)
    } else {
        Err(Failure(FdisacStatus::OutOfRange, format!("index {i} out of range (length {len})")))
    }
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn fdisac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fdisac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fdisac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn fdisac_scenario_default() -> *mut FdisacScenario {
    Box::into_raw(Box::new(FdisacScenario {
        inner: Scenario::default(),
    }))
}

/// Parses a TOML scenario; fields left out keep their defaults.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_scenario_from_toml(toml: *const c_char, out: *mut *mut FdisacScenario) -> FdisacStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|_| Failure(FdisacStatus::InvalidArgument, "toml is not UTF-8".into()))?;
        let inner = Scenario::from_toml_str(text)?;
        inner.validate()?;
        write(out, Box::into_raw(Box::new(FdisacScenario { inner })))
    })
}

/// # Safety
/// `s` must be a valid scenario handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_scenario_to_toml(s: *const FdisacScenario, out: *mut *mut c_char) -> FdisacStatus {
    guard(|| {
        let s = deref(s, "scenario")?;
        let text = s.inner.to_toml_string()?;
        write(out, into_c_string(text)?)
    })
}

/// # Safety
/// `s` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fdisac_scenario_free(s: *mut FdisacScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fdisac_scenario_set_seed(s: *mut FdisacScenario, seed: u64) -> FdisacStatus {
    guard(|| {
        deref_mut(s, "scenario")?.inner.seed = seed;
        Ok(())
    })
}

unsafe fn set_field(s: *mut FdisacScenario, field: SweepField, value: f64) -> FdisacStatus {
    guard(|| {
        let s = deref_mut(s, "scenario")?;
        let updated = field.apply(&s.inner, value)?;
        updated.validate()?;
        s.inner = updated;
        Ok(())
    })
}

/// # Safety
/// `s` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fdisac_scenario_set_tx_power_dbm(s: *mut FdisacScenario, dbm: f64) -> FdisacStatus {
    set_field(s, SweepField::TxPowerDbm, dbm)
}

/// Replaces the target list with `count` randomly drawn targets.
///
/// # Safety
/// `s` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fdisac_scenario_set_n_targets(s: *mut FdisacScenario, count: u32) -> FdisacStatus {
    set_field(s, SweepField::NTargets, f64::from(count))
}

/// # Safety
/// `s` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fdisac_scenario_set_lambda_s_db(s: *mut FdisacScenario, db: f64) -> FdisacStatus {
    set_field(s, SweepField::LambdaSDb, db)
}

/// # Safety
/// `s` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fdisac_scenario_set_lambda_sic_dbm(s: *mut FdisacScenario, dbm: f64) -> FdisacStatus {
    set_field(s, SweepField::LambdaSicDbm, dbm)
}

/// # Safety
/// `s` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fdisac_scenario_set_n_taps(s: *mut FdisacScenario, taps: u32) -> FdisacStatus {
    set_field(s, SweepField::NTaps, f64::from(taps))
}

/// Use the true target directions as the optimizer's priors.
///
/// # Safety
/// `s` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fdisac_scenario_set_genie_doa(s: *mut FdisacScenario, genie: bool) -> FdisacStatus {
    guard(|| {
        deref_mut(s, "scenario")?.inner.radar.genie_doa = genie;
        Ok(())
    })
}

/// Optimizes, simulates one frame and, when `sense` is set, runs the CPI
/// radar processing. Returns `Infeasible` when no operating point satisfies
/// the constraints.
///
/// # Safety
/// `s` must be a valid scenario handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_run(s: *const FdisacScenario, sense: bool, out: *mut *mut FdisacRun) -> FdisacStatus {
    guard(|| {
        let s = deref(s, "scenario")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let inner = run_experiment(&s.inner, ExperimentOptions { sense, keep_maps: false })?;
        write(out, Box::into_raw(Box::new(FdisacRun { inner })))
    })
}

/// # Safety
/// `r` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fdisac_run_free(r: *mut FdisacRun) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Achievable downlink rate (bits/s/Hz).
///
/// # Safety
/// `r` must be a valid run handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_run_rate(r: *const FdisacRun, out: *mut f64) -> FdisacStatus {
    guard(|| write(out, deref(r, "run")?.inner.config.achieved_rate))
}

/// Rate of the communication-only precoder through the same beams.
///
/// # Safety
/// `r` must be a valid run handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_run_waterfilling_rate(r: *const FdisacRun, out: *mut f64) -> FdisacStatus {
    guard(|| write(out, deref(r, "run")?.inner.config.waterfilling_rate))
}

/// # Safety
/// `r` must be a valid run handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_run_n_targets(r: *const FdisacRun, out: *mut usize) -> FdisacStatus {
    guard(|| write(out, deref(r, "run")?.inner.world.targets.len()))
}

/// # Safety
/// `r` must be a valid run handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_run_target(r: *const FdisacRun, i: usize, out: *mut FdisacTarget) -> FdisacStatus {
    guard(|| {
        let targets = &deref(r, "run")?.inner.world.targets;
        let t = &targets[index(i, targets.len())?];
        write(
            out,
            FdisacTarget {
                angle_deg: t.angle_deg,
                range_m: t.range_m,
                velocity_mps: t.velocity_mps,
                rcs_m2: t.rcs_m2,
            },
        )
    })
}

/// Predicted sensing SINR of target `i` (dB).
///
/// # Safety
/// `r` must be a valid run handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_run_target_sinr_db(r: *const FdisacRun, i: usize, out: *mut f64) -> FdisacStatus {
    guard(|| {
        let sinr = &deref(r, "run")?.inner.config.target_sinr_db;
        write(out, sinr[index(i, sinr.len())?])
    })
}

/// Number of radar estimates (zero when the run was made without sensing).
///
/// # Safety
/// `r` must be a valid run handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_run_n_estimates(r: *const FdisacRun, out: *mut usize) -> FdisacStatus {
    guard(|| write(out, deref(r, "run")?.inner.estimates.len()))
}

/// # Safety
/// `r` must be a valid run handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_run_estimate(r: *const FdisacRun, i: usize, out: *mut FdisacEstimate) -> FdisacStatus {
    guard(|| {
        let est = &deref(r, "run")?.inner.estimates;
        let e = &est[index(i, est.len())?];
        write(
            out,
            FdisacEstimate {
                angle_deg: e.angle_deg,
                range_m: e.range_m,
                velocity_mps: e.velocity_mps,
                peak_power_db: e.peak_power_db,
            },
        )
    })
}

/// Run metrics as a JSON document.
///
/// # Safety
/// `r` must be a valid run handle and `out` a writable pointer. Release the
/// string with [`fdisac_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fdisac_run_metrics_json(r: *const FdisacRun, out: *mut *mut c_char) -> FdisacStatus {
    guard(|| {
        let r = &deref(r, "run")?.inner;
        let doc = serde_json::json!({
            "rate_bps_hz": r.config.achieved_rate,
            "waterfilling_rate_bps_hz": r.config.waterfilling_rate,
            "rho": r.config.rho,
            "target_sinr_db": r.config.target_sinr_db,
            "constraints": r.config.constraint_report,
            "frame": r.frame,
            "estimates": r.estimates,
            "accuracy": r.accuracy,
        });
        write(out, into_c_string(doc.to_string())?)
    })
}

/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fdisac_budget_default(out: *mut FdisacBudget) -> FdisacStatus {
    guard(|| write(out, FdisacBudget::from(&BudgetParams::default())))
}

/// Largest range meeting the SINR target with the given combined gain.
///
/// # Safety
/// `b` must point to a budget and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn fdisac_sensing_range(b: *const FdisacBudget, out: *mut f64) -> FdisacStatus {
    guard(|| {
        let p = BudgetParams::from(deref(b, "budget")?);
        write(out, link_budget::sensing_range(&p)?)
    })
}

/// Combined TX+RX gain (dB) needed to reach `range_m` at `sinr_db`.
///
/// # Safety
/// `b` must point to a budget and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn fdisac_required_gain(
    b: *const FdisacBudget,
    range_m: f64,
    sinr_db: f64,
    out: *mut f64,
) -> FdisacStatus {
    guard(|| {
        let p = BudgetParams::from(deref(b, "budget")?);
        write(out, link_budget::required_gain(range_m, sinr_db, &p)?)
    })
}
