//! C ABI over the metricguard scenarios: build a scenario, evaluate its
//! feedback, integrate it, and inspect the trajectory.
//!
//! Every function returns an [`MgStatus`]; on failure the message is kept per
//! thread and read back with [`mg_last_error`]. Handles are opaque and must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use metricguard::analysis::{analyze, Classification};
use metricguard::app::verify::{battery, VerifyOptions};
use metricguard::control::Feedback;
use metricguard::dynamics::{integrate, GuardKind, MechState, Status, Trajectory};
use metricguard::geometry::Point;
use metricguard::scenarios::{Scenario, ScenarioId};
use metricguard::Error;
use nalgebra::DVector;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownScenario = 3,
    UnknownParameter = 4,
    ParameterOutOfRange = 5,
    InfeasibleState = 6,
    IntegrationFailed = 7,
    NoConvergence = 8,
    NumericalError = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgRunStatus {
    HorizonReached = 0,
    PositionGuard = 1,
    SpeedGuard = 2,
    BoundaryGuard = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgClassification {
    AsymptoticallyStable = 0,
    CenterCandidate = 1,
    Unstable = 2,
    Degenerate = 3,
}

/// A configured scenario together with its synthesized feedback.
pub struct MgScenario {
    scenario: Scenario,
    feedback: Arc<dyn Feedback>,
}

/// A sampled trajectory; rows follow the CSV layout
/// `t, q1..qn, qd1..qdn, u1..um, E, E_Lf, phi`.
pub struct MgTrajectory {
    traj: Trajectory,
    width: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
}

fn status_of(e: &Error) -> MgStatus {
    match e {
        Error::UnknownParameter(_) => MgStatus::UnknownParameter,
        Error::ParameterOutOfRange { .. } => MgStatus::ParameterOutOfRange,
        Error::InfeasibleInitialState(_) | Error::OutsideFeasibleRegion { .. } => {
            MgStatus::InfeasibleState
        }
        Error::StepSizeUnderflow { .. } | Error::MaxStepsExceeded { .. } => {
            MgStatus::IntegrationFailed
        }
        Error::NoConvergence { .. } => MgStatus::NoConvergence,
        Error::DimensionMismatch { .. } | Error::Invalid(_) => MgStatus::InvalidArgument,
        _ => MgStatus::NumericalError,
    }
}

fn fail(e: Error) -> MgStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

fn guarded(body: impl FnOnce() -> MgStatus) -> MgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            MgStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, MgStatus> {
    if p.is_null() {
        set_error("null string");
        return Err(MgStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        MgStatus::InvalidArgument
    })
}

unsafe fn read_slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], MgStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        set_error("null array");
        return Err(MgStatus::NullPointer);
    }
    Ok(slice::from_raw_parts(p, len))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let message = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = message.len().min(len - 1);
            ptr::copy_nonoverlapping(message.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        message.len()
    })
}

/// Builds the named scenario with `count` parameter overrides.
///
/// # Safety
/// `name` must be a NUL-terminated string; `keys` and `values` must each point
/// to `count` elements (or be null when `count` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mg_scenario_new(
    name: *const c_char,
    keys: *const *const c_char,
    values: *const f64,
    count: usize,
    out: *mut *mut MgScenario,
) -> MgStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output handle");
            return MgStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let name = tri!(read_str(name));
        let id: ScenarioId = match name.parse() {
            Ok(id) => id,
            Err(e) => {
                set_error(format!("{e}"));
                return MgStatus::UnknownScenario;
            }
        };
        let values = tri!(read_slice(values, count));
        if count > 0 && keys.is_null() {
            set_error("null key array");
            return MgStatus::NullPointer;
        }
        let mut overrides = Vec::with_capacity(count);
        for (i, v) in values.iter().enumerate() {
            let key = tri!(read_str(*keys.add(i)));
            overrides.push((key.to_string(), *v));
        }
        let scenario = match Scenario::build(id, &overrides) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let feedback = match scenario.feedback(scenario.default_stack) {
            Ok(f) => f,
            Err(e) => return fail(e),
        };
        *out = Box::into_raw(Box::new(MgScenario { scenario, feedback }));
        MgStatus::Ok
    })
}

/// # Safety
/// `handle` must be null or come from [`mg_scenario_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn mg_scenario_free(handle: *mut MgScenario) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Configuration dimension `n`, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn mg_scenario_dim(handle: *const MgScenario) -> usize {
    handle.as_ref().map_or(0, |h| h.scenario.system.dim())
}

/// Number of controls `m`, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn mg_scenario_control_count(handle: *const MgScenario) -> usize {
    handle
        .as_ref()
        .map_or(0, |h| h.scenario.system.control_count())
}

/// Replaces the initial state; `q` and `qd` hold `n` values each.
///
/// # Safety
/// `handle` must be a live scenario handle; `q` and `qd` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn mg_scenario_set_initial(
    handle: *mut MgScenario,
    q: *const f64,
    qd: *const f64,
    n: usize,
) -> MgStatus {
    guarded(|| {
        let Some(h) = handle.as_mut() else {
            set_error("null scenario handle");
            return MgStatus::NullPointer;
        };
        let q = tri!(read_slice(q, n));
        let qd = tri!(read_slice(qd, n));
        let state = MechState::new(h.scenario.initial.t, q, qd);
        match h.scenario.clone().with_initial(state) {
            Ok(s) => {
                h.scenario = s;
                MgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Evaluates the scenario's feedback at `(q, qd)` into `u` (`m` values).
///
/// # Safety
/// `handle` must be a live scenario handle; `q`, `qd` must point to `n` values
/// and `u` to `m` writable values.
#[no_mangle]
pub unsafe extern "C" fn mg_scenario_control(
    handle: *const MgScenario,
    q: *const f64,
    qd: *const f64,
    n: usize,
    u: *mut f64,
    m: usize,
) -> MgStatus {
    guarded(|| {
        let Some(h) = handle.as_ref() else {
            set_error("null scenario handle");
            return MgStatus::NullPointer;
        };
        if n != h.scenario.system.dim() {
            return fail(Error::DimensionMismatch {
                expected: h.scenario.system.dim(),
                found: n,
            });
        }
        if m < h.feedback.count() {
            set_error(format!(
                "control buffer holds {m} values, {} needed",
                h.feedback.count()
            ));
            return MgStatus::BufferTooSmall;
        }
        if u.is_null() {
            set_error("null control buffer");
            return MgStatus::NullPointer;
        }
        let q = Point::from_column_slice(tri!(read_slice(q, n)));
        let qd = DVector::from_column_slice(tri!(read_slice(qd, n)));
        match h.feedback.evaluate(&q, &qd) {
            Ok(v) => {
                ptr::copy_nonoverlapping(v.as_ptr(), u, v.len());
                MgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Integrates the closed loop over `horizon` (the scenario default when not
/// positive). Guard events are successful runs; see [`mg_trajectory_status`].
///
/// # Safety
/// `handle` must be a live scenario handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mg_scenario_simulate(
    handle: *const MgScenario,
    horizon: f64,
    out: *mut *mut MgTrajectory,
) -> MgStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output handle");
            return MgStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let Some(h) = handle.as_ref() else {
            set_error("null scenario handle");
            return MgStatus::NullPointer;
        };
        let s = &h.scenario;
        let horizon = if horizon > 0.0 { horizon } else { s.horizon };
        let closed =
            match metricguard::dynamics::ClosedLoop::new(s.system.clone(), h.feedback.clone()) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
        match integrate(&closed, &s.initial, horizon, &s.integrator) {
            Ok(traj) => {
                let width = 1 + 2 * s.system.dim() + s.system.control_count() + 3;
                *out = Box::into_raw(Box::new(MgTrajectory { traj, width }));
                MgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `handle` must be null or come from [`mg_scenario_simulate`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn mg_trajectory_free(handle: *mut MgTrajectory) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn mg_trajectory_len(handle: *const MgTrajectory) -> usize {
    handle.as_ref().map_or(0, |h| h.traj.samples.len())
}

/// Values per sample row, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn mg_trajectory_width(handle: *const MgTrajectory) -> usize {
    handle.as_ref().map_or(0, |h| h.width)
}

/// Copies sample `index` into `row` (`len` must be at least the width).
///
/// # Safety
/// `handle` must be a live trajectory handle; `row` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn mg_trajectory_row(
    handle: *const MgTrajectory,
    index: usize,
    row: *mut f64,
    len: usize,
) -> MgStatus {
    guarded(|| {
        let Some(h) = handle.as_ref() else {
            set_error("null trajectory handle");
            return MgStatus::NullPointer;
        };
        let Some(s) = h.traj.samples.get(index) else {
            set_error(format!(
                "sample {index} out of range ({} samples)",
                h.traj.samples.len()
            ));
            return MgStatus::InvalidArgument;
        };
        if len < h.width {
            set_error(format!("row buffer holds {len} values, {} needed", h.width));
            return MgStatus::BufferTooSmall;
        }
        if row.is_null() {
            set_error("null row buffer");
            return MgStatus::NullPointer;
        }
        let values: Vec<f64> = std::iter::once(s.t)
            .chain(s.q.iter().copied())
            .chain(s.qd.iter().copied())
            .chain(s.u.iter().copied())
            .chain([s.energy, s.energy_lf, s.phi])
            .collect();
        ptr::copy_nonoverlapping(values.as_ptr(), row, values.len());
        MgStatus::Ok
    })
}

/// How the run ended; `event_time` receives the guard time or the final time.
///
/// # Safety
/// `handle` must be a live trajectory handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mg_trajectory_status(
    handle: *const MgTrajectory,
    status: *mut MgRunStatus,
    event_time: *mut f64,
) -> MgStatus {
    let Some(h) = handle.as_ref() else {
        set_error("null trajectory handle");
        return MgStatus::NullPointer;
    };
    if status.is_null() || event_time.is_null() {
        set_error("null output pointer");
        return MgStatus::NullPointer;
    }
    let (s, t) = match h.traj.status {
        Status::HorizonReached => (MgRunStatus::HorizonReached, h.traj.last().t),
        Status::Guard {
            kind: GuardKind::Position,
            t,
            ..
        } => (MgRunStatus::PositionGuard, t),
        Status::Guard {
            kind: GuardKind::Speed,
            t,
            ..
        } => (MgRunStatus::SpeedGuard, t),
        Status::Guard {
            kind: GuardKind::Boundary,
            t,
            ..
        } => (MgRunStatus::BoundaryGuard, t),
    };
    *status = s;
    *event_time = t;
    MgStatus::Ok
}

/// Linearizes the closed loop at the scenario's documented equilibrium.
/// Eigenvalues go to `re`/`im` (capacity `cap`, count in `count`).
///
/// # Safety
/// `handle` must be a live scenario handle; `re` and `im` must point to `cap`
/// writable values; `count` and `class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mg_scenario_stability(
    handle: *const MgScenario,
    re: *mut f64,
    im: *mut f64,
    cap: usize,
    count: *mut usize,
    class: *mut MgClassification,
) -> MgStatus {
    guarded(|| {
        let Some(h) = handle.as_ref() else {
            set_error("null scenario handle");
            return MgStatus::NullPointer;
        };
        if count.is_null() || class.is_null() {
            set_error("null output pointer");
            return MgStatus::NullPointer;
        }
        let Some(guess) = h.scenario.equilibrium_guess.clone() else {
            set_error(format!("{} has no documented equilibrium", h.scenario.id));
            return MgStatus::InvalidArgument;
        };
        let closed = match metricguard::dynamics::ClosedLoop::new(
            h.scenario.system.clone(),
            h.feedback.clone(),
        ) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let report = match analyze(&closed, &guess) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let eig = &report.spectrum.eigenvalues;
        *count = eig.len();
        if cap < eig.len() {
            set_error(format!(
                "eigenvalue buffers hold {cap} values, {} needed",
                eig.len()
            ));
            return MgStatus::BufferTooSmall;
        }
        if re.is_null() || im.is_null() {
            set_error("null eigenvalue buffer");
            return MgStatus::NullPointer;
        }
        for (i, l) in eig.iter().enumerate() {
            *re.add(i) = l.re;
            *im.add(i) = l.im;
        }
        *class = match report.spectrum.classification {
            Classification::AsymptoticallyStable => MgClassification::AsymptoticallyStable,
            Classification::CenterCandidate => MgClassification::CenterCandidate,
            Classification::Unstable => MgClassification::Unstable,
            Classification::Degenerate => MgClassification::Degenerate,
        };
        MgStatus::Ok
    })
}

/// Runs the verification battery on the named scenario with defaults.
///
/// # Safety
/// `name` must be a NUL-terminated string; `passed` and `total` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mg_verify(
    name: *const c_char,
    passed: *mut u32,
    total: *mut u32,
) -> MgStatus {
    guarded(|| {
        if passed.is_null() || total.is_null() {
            set_error("null output pointer");
            return MgStatus::NullPointer;
        }
        let name = tri!(read_str(name));
        let id: ScenarioId = match name.parse() {
            Ok(id) => id,
            Err(e) => {
                set_error(format!("{e}"));
                return MgStatus::UnknownScenario;
            }
        };
        let scenario = match Scenario::build(id, &[]) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let checks = battery(&scenario, &VerifyOptions::default());
        *total = checks.len() as u32;
        *passed = checks.iter().filter(|c| c.passed).count() as u32;
        MgStatus::Ok
    })
}
