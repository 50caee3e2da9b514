//! C ABI over `wella-core`.
//!
//! Every fallible function returns a [`WellaStatus`]; on failure the message
//! is available from [`wella_last_error`] on the same thread. Strings handed
//! out by the library are owned by the caller and released with
//! [`wella_string_free`]. Scenarios are opaque handles released with
//! [`wella_scenario_free`]. Structured results (sessions, Monte Carlo
//! results, parsed responses) cross the boundary as JSON text.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use wella_core::backend::MockBackend;
use wella_core::crew::{estimate_crew, CrewOptions};
use wella_core::goms::{run_monte_carlo_with, McOptions, PlantParams, Procedure};
use wella_core::metrics::{ev, mae, r2, rmse, MetricError};
use wella_core::scenario::{parse_scenario, role_view, RoleId, ScenarioSpec};
use wella_core::survey::{sart_dimensions, sart_sa, tlx_workload, SartRating, TlxRating};
use wella_core::trajectory::{parse_response, Instrument};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WellaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    ParseError = 4,
    MetricUndefined = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WellaRole {
    Ro1 = 0,
    Ro2 = 1,
    Ro3 = 2,
    Co = 3,
    So = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WellaInstrument {
    Both = 0,
    Tlx = 1,
    Sart = 2,
}

/// r2 and ev are NaN when the truth series has zero variance.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellaMetrics {
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub ev: f64,
}

/// Opaque parsed scenario.
pub struct WellaScenario(ScenarioSpec);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(WellaStatus, String);

impl Failure {
    fn input(msg: impl ToString) -> Self {
        Failure(WellaStatus::InvalidInput, msg.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "\u{FFFD}")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WellaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            WellaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            WellaStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(WellaStatus::NullArgument, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(s, name)?;
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Failure(WellaStatus::InvalidUtf8, format!("`{name}` is not UTF-8: {e}")))
}

/// # Safety
/// `out` must be null or valid for writing one pointer.
unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure::input("result contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

// Enum arguments arrive as plain integers so out-of-range values from C are
// rejected instead of being undefined behaviour.
fn role(r: u32) -> Result<RoleId, Failure> {
    RoleId::ALL.get(r as usize).copied().ok_or_else(|| Failure::input(format!("unknown role {r}")))
}

fn instrument(i: u32) -> Result<Instrument, Failure> {
    match i {
        x if x == WellaInstrument::Both as u32 => Ok(Instrument::Both),
        x if x == WellaInstrument::Tlx as u32 => Ok(Instrument::Tlx),
        x if x == WellaInstrument::Sart as u32 => Ok(Instrument::Sart),
        _ => Err(Failure::input(format!("unknown instrument {i}"))),
    }
}

/// Message for the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn wella_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn wella_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wella_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Unweighted NASA-TLX workload from MD, PD, TD, effort, performance,
/// frustration.
///
/// # Safety
/// `subscales` must point to 6 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wella_tlx_workload(subscales: *const f64, out: *mut f64) -> WellaStatus {
    guard(|| {
        non_null(subscales, "subscales")?;
        non_null(out, "out")?;
        let v = std::slice::from_raw_parts(subscales, 6);
        let rating = TlxRating::new(v[0], v[1], v[2], v[3], v[4], v[5]).map_err(Failure::input)?;
        *out = tlx_workload(&rating).map_err(Failure::input)?;
        Ok(())
    })
}

/// SART dimensions and SA from 10 item ratings in 1..=7. Any of the output
/// pointers may be null.
///
/// # Safety
/// `items` must point to 10 bytes; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn wella_sart_score(
    items: *const u8,
    demand: *mut u32,
    supply: *mut u32,
    understand: *mut u32,
    sa: *mut f64,
) -> WellaStatus {
    guard(|| {
        non_null(items, "items")?;
        let rating = SartRating::new(std::slice::from_raw_parts(items, 10)).map_err(Failure::input)?;
        let d = sart_dimensions(&rating);
        for (p, v) in [(demand, d.demand), (supply, d.supply), (understand, d.understand)] {
            if !p.is_null() {
                *p = v;
            }
        }
        if !sa.is_null() {
            *sa = sart_sa(&rating);
        }
        Ok(())
    })
}

/// Regression metrics over `n` paired values. Returns
/// `MetricUndefined` (with r2 and ev set to NaN) when truth is constant.
///
/// # Safety
/// `truth` and `pred` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wella_metrics(
    truth: *const f64,
    pred: *const f64,
    n: usize,
    out: *mut WellaMetrics,
) -> WellaStatus {
    guard(|| {
        non_null(truth, "truth")?;
        non_null(pred, "pred")?;
        non_null(out, "out")?;
        let t = std::slice::from_raw_parts(truth, n);
        let p = std::slice::from_raw_parts(pred, n);
        let rmse = rmse(t, p).map_err(Failure::input)?;
        let mae = mae(t, p).map_err(Failure::input)?;
        let (r2, ev) = (r2(t, p), ev(t, p));
        *out = WellaMetrics {
            r2: *r2.as_ref().unwrap_or(&f64::NAN),
            rmse,
            mae,
            ev: *ev.as_ref().unwrap_or(&f64::NAN),
        };
        match r2 {
            Err(e @ MetricError::ZeroVariance) => Err(Failure(WellaStatus::MetricUndefined, e.to_string())),
            Err(e) => Err(Failure::input(e)),
            Ok(_) => Ok(()),
        }
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wella_scenario_parse(json: *const c_char, out: *mut *mut WellaScenario) -> WellaStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let spec = parse_scenario(read_str(json, "json")?).map_err(Failure::input)?;
        *out = Box::into_raw(Box::new(WellaScenario(spec)));
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle from `wella_scenario_parse` not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn wella_scenario_free(scenario: *mut WellaScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wella_scenario_id(scenario: *const WellaScenario, out: *mut *mut c_char) -> WellaStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        non_null(out, "out")?;
        write_string(out, (*scenario).0.id.clone())
    })
}

/// Canonical JSON form of the scenario.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wella_scenario_to_json(scenario: *const WellaScenario, out: *mut *mut c_char) -> WellaStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        non_null(out, "out")?;
        write_string(out, (*scenario).0.to_json_string())
    })
}

/// The scenario as one role sees it, rendered as prompt text. `role_id` is
/// a `WellaRole` value.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wella_scenario_role_view(
    scenario: *const WellaScenario,
    role_id: u32,
    out: *mut *mut c_char,
) -> WellaStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        non_null(out, "out")?;
        write_string(out, role_view(&(*scenario).0, role(role_id)?).render())
    })
}

/// Runs all five roles against the deterministic mock backend and returns
/// the session as JSONL. `which` is a `WellaInstrument` value.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wella_crew_mock(
    scenario: *const WellaScenario,
    session_seed: u64,
    which: u32,
    out: *mut *mut c_char,
) -> WellaStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        non_null(out, "out")?;
        let options = CrewOptions::with_instrument(instrument(which)?).seeded(session_seed);
        let session = estimate_crew(&(*scenario).0, &MockBackend::new(session_seed), &options).map_err(Failure::input)?;
        write_string(out, session.to_jsonl())
    })
}

/// Parses a model response under the response grammar and returns
/// `{"trajectory": [...], "tlx": {...} | null, "sart": [...] | null}`.
/// On `ParseError` the last error holds the structured error as JSON.
///
/// # Safety
/// `raw` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wella_parse_response(
    raw: *const c_char,
    which: u32,
    out: *mut *mut c_char,
) -> WellaStatus {
    guard(|| {
        non_null(out, "out")?;
        let parsed = parse_response(read_str(raw, "raw")?, instrument(which)?).map_err(|e| {
            Failure(WellaStatus::ParseError, serde_json::to_string(&e).unwrap_or_else(|_| e.to_string()))
        })?;
        write_string(out, serde_json::to_string(&parsed).map_err(Failure::input)?)
    })
}

/// Monte Carlo baseline. `params_json` is a JSON object of plant
/// parameters and may be null. Returns the result as JSON.
///
/// # Safety
/// String arguments must be NUL-terminated (or null where allowed); `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn wella_goms_run(
    procedure_json: *const c_char,
    params_json: *const c_char,
    n_runs: u64,
    seed: u64,
    shards: u32,
    out: *mut *mut c_char,
) -> WellaStatus {
    guard(|| {
        non_null(out, "out")?;
        let procedure = Procedure::from_json(read_str(procedure_json, "procedure_json")?).map_err(Failure::input)?;
        let params: PlantParams = if params_json.is_null() {
            PlantParams::new()
        } else {
            serde_json::from_str(read_str(params_json, "params_json")?)
                .map_err(|e| Failure::input(format!("params_json: {e}")))?
        };
        let opts = McOptions { shards: shards.max(1) as usize, ..McOptions::new(n_runs, seed) };
        let result = run_monte_carlo_with(&procedure, &params, &opts).map_err(Failure::input)?;
        write_string(out, serde_json::to_string(&result).map_err(Failure::input)?)
    })
}
