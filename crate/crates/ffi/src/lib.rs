//! C ABI for the fedcot engine.
//!
//! The surface is handle-based: build a simulation from a TOML configuration
//! string, run it, then read metrics either individually or as the full
//! report JSON. Every function returns a [`FedcotStatus`]; on failure the
//! thread-local message from [`fedcot_last_error_message`] explains why.
//!
//! Strings returned as `char*` are owned by the caller and must be released
//! with [`fedcot_string_free`]. Handles must be released with
//! [`fedcot_simulation_free`].

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fedcot::cli::{config_hash, run_simulation, RunConfig, SimulationRun};
use fedcot::corpus::extract_answer;

/// Status code returned by every API function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FedcotStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration failed to parse or validate.
    InvalidConfig = 3,
    /// The requested round, client, or state was out of range.
    OutOfRange = 4,
    /// The engine reported an error; see `fedcot_last_error_message`.
    RuntimeError = 5,
    /// A panic was caught at the boundary.
    InternalPanic = 6,
}

/// Per-client metric selector for `fedcot_simulation_metric`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FedcotMetric {
    Accuracy = 0,
    PAt1 = 1,
    PAtK = 2,
    Delta = 3,
    MajorityVoteAccuracy = 4,
    EpochLoss = 5,
}

/// Opaque simulation handle.
pub struct FedcotSimulation {
    cfg: RunConfig,
    run: Option<SimulationRun>,
}

thread_local! {
    static LAST_ERROR: std::cell::RefCell<CString> =
        std::cell::RefCell::new(CString::new("").unwrap());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn guard<F: FnOnce() -> FedcotStatus>(f: F) -> FedcotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            FedcotStatus::InternalPanic
        }
    }
}

/// # Safety
/// `ptr` must be null or point to a valid null-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, FedcotStatus> {
    if ptr.is_null() {
        set_last_error("null string argument");
        return Err(FedcotStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_last_error("string argument is not valid UTF-8");
        FedcotStatus::InvalidUtf8
    })
}

fn to_owned_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " "))
        .expect("nul bytes stripped")
        .into_raw()
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn fedcot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn fedcot_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be a pointer previously returned by a `fedcot_*` function that
/// documents `fedcot_string_free` as its deallocator, or null.
#[no_mangle]
pub unsafe extern "C" fn fedcot_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a simulation handle from a TOML configuration string. An empty
/// string selects the documented defaults.
///
/// # Safety
/// `config_toml` must be null or a valid null-terminated string; `out` must
/// point to writable pointer storage.
#[no_mangle]
pub unsafe extern "C" fn fedcot_simulation_new(
    config_toml: *const c_char,
    out: *mut *mut FedcotSimulation,
) -> FedcotStatus {
    guard(|| {
        if out.is_null() {
            set_last_error("null output handle");
            return FedcotStatus::NullArgument;
        }
        let text = match utf8_arg(config_toml) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let cfg = match fedcot::cli::config::parse_config_str(text) {
            Ok(cfg) => cfg,
            Err(e) => {
                set_last_error(&e.to_string());
                return FedcotStatus::InvalidConfig;
            }
        };
        *out = Box::into_raw(Box::new(FedcotSimulation { cfg, run: None }));
        FedcotStatus::Ok
    })
}

/// Releases a simulation handle.
///
/// # Safety
/// `sim` must be null or a handle from `fedcot_simulation_new` that has not
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn fedcot_simulation_free(sim: *mut FedcotSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs the configured federation. Idempotent: a second call re-runs from
/// scratch with identical results.
///
/// # Safety
/// `sim` must be a live handle from `fedcot_simulation_new`.
#[no_mangle]
pub unsafe extern "C" fn fedcot_simulation_run(sim: *mut FedcotSimulation) -> FedcotStatus {
    guard(|| {
        let Some(sim) = sim.as_mut() else {
            set_last_error("null simulation handle");
            return FedcotStatus::NullArgument;
        };
        match run_simulation(&sim.cfg) {
            Ok(run) => {
                sim.run = Some(run);
                FedcotStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                FedcotStatus::RuntimeError
            }
        }
    })
}

/// Number of completed rounds; zero before `fedcot_simulation_run`.
///
/// # Safety
/// `sim` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fedcot_simulation_rounds(
    sim: *const FedcotSimulation,
    out: *mut u32,
) -> FedcotStatus {
    guard(|| {
        let (Some(sim), false) = (sim.as_ref(), out.is_null()) else {
            set_last_error("null argument");
            return FedcotStatus::NullArgument;
        };
        *out = sim.run.as_ref().map(|r| r.global.round as u32).unwrap_or(0);
        FedcotStatus::Ok
    })
}

/// Number of clients in the configured federation.
///
/// # Safety
/// `sim` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fedcot_simulation_clients(
    sim: *const FedcotSimulation,
    out: *mut u32,
) -> FedcotStatus {
    guard(|| {
        let (Some(sim), false) = (sim.as_ref(), out.is_null()) else {
            set_last_error("null argument");
            return FedcotStatus::NullArgument;
        };
        *out = sim.cfg.ranks.len() as u32;
        FedcotStatus::Ok
    })
}

/// Reads one per-client metric from a completed round (rounds are 1-based).
///
/// # Safety
/// `sim` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fedcot_simulation_metric(
    sim: *const FedcotSimulation,
    round: u32,
    client: u32,
    metric: FedcotMetric,
    out: *mut f64,
) -> FedcotStatus {
    guard(|| {
        let (Some(sim), false) = (sim.as_ref(), out.is_null()) else {
            set_last_error("null argument");
            return FedcotStatus::NullArgument;
        };
        let Some(run) = &sim.run else {
            set_last_error("simulation has not been run");
            return FedcotStatus::OutOfRange;
        };
        let Some(report) = run
            .global
            .history
            .iter()
            .find(|r| r.round == round as usize)
        else {
            set_last_error(&format!("round {round} not in history"));
            return FedcotStatus::OutOfRange;
        };
        let Some(entry) = report.clients.get(client as usize) else {
            set_last_error(&format!("client index {client} out of range"));
            return FedcotStatus::OutOfRange;
        };
        *out = match metric {
            FedcotMetric::Accuracy => entry.metrics.accuracy,
            FedcotMetric::PAt1 => entry.metrics.p_at_1,
            FedcotMetric::PAtK => entry.metrics.p_at_k,
            FedcotMetric::Delta => entry.metrics.delta,
            FedcotMetric::MajorityVoteAccuracy => entry.metrics.majority_vote_accuracy,
            FedcotMetric::EpochLoss => entry.final_epoch_loss,
        };
        FedcotStatus::Ok
    })
}

/// Full run report as a JSON document. Free with `fedcot_string_free`.
///
/// # Safety
/// `sim` must be a live handle; `out` must point to writable pointer storage.
#[no_mangle]
pub unsafe extern "C" fn fedcot_simulation_report_json(
    sim: *const FedcotSimulation,
    out: *mut *mut c_char,
) -> FedcotStatus {
    guard(|| {
        let (Some(sim), false) = (sim.as_ref(), out.is_null()) else {
            set_last_error("null argument");
            return FedcotStatus::NullArgument;
        };
        let Some(run) = &sim.run else {
            set_last_error("simulation has not been run");
            return FedcotStatus::OutOfRange;
        };
        let json = fedcot::cli::commands::report_json_string(
            &config_hash(&sim.cfg),
            &run.global,
            &run.oracle,
        );
        *out = to_owned_c_string(json);
        FedcotStatus::Ok
    })
}

/// Extracts the final answer from a generation text given the option set.
/// Writes the matched option (free with `fedcot_string_free`) or null when
/// the candidate abstains.
///
/// # Safety
/// `text` must be a valid null-terminated string; `options` must point to
/// `n_options` valid null-terminated strings; `out` must point to writable
/// pointer storage.
#[no_mangle]
pub unsafe extern "C" fn fedcot_extract_answer(
    text: *const c_char,
    options: *const *const c_char,
    n_options: usize,
    out: *mut *mut c_char,
) -> FedcotStatus {
    guard(|| {
        if out.is_null() || (options.is_null() && n_options > 0) {
            set_last_error("null argument");
            return FedcotStatus::NullArgument;
        }
        let text = match utf8_arg(text) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let mut option_set = Vec::with_capacity(n_options);
        for i in 0..n_options {
            let opt = match utf8_arg(*options.add(i)) {
                Ok(o) => o,
                Err(status) => return status,
            };
            option_set.push(opt.to_string());
        }
        if option_set.is_empty() {
            set_last_error("option set is empty");
            return FedcotStatus::InvalidConfig;
        }
        *out = match extract_answer(text, &option_set) {
            Some(answer) => to_owned_c_string(answer),
            None => ptr::null_mut(),
        };
        FedcotStatus::Ok
    })
}
