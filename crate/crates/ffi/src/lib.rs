//! C interface to the mollification lab.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `mlf_*_free`. Every fallible call returns an
//! [`MlfStatus`]; the message of the last failure on the calling thread is
//! available from [`mlf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mollify::atlas::assemble_mollified;
use mollify::curvature::{curvature_report, CurvatureReport};
use mollify::kernels::mollify;
use mollify::lab::{
    cmd_cover_check, cmd_curvature, cmd_deviation, cmd_lemmas, cmd_norms, ExperimentConfig,
};
use mollify::lattice::{Field, MetricField};
use mollify::modelzoo::{parse_geometry, ModelGeometry};
use mollify::norms::check_n0;
use mollify::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Panic = 5,
}

/// A model geometry with its atlas.
pub struct MlfGeometry(ModelGeometry);

/// A metric sampled on a chart lattice.
pub struct MlfMetric(MetricField);

/// Per-node curvature summary of a metric.
pub struct MlfCurvature(CurvatureReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: MlfStatus, msg: &str) -> MlfStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> MlfStatus {
    let status = if e.is_config() {
        MlfStatus::Config
    } else {
        MlfStatus::Numerical
    };
    fail(status, &e.to_string())
}

fn guard(f: impl FnOnce() -> MlfStatus) -> MlfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == MlfStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(MlfStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, MlfStatus> {
    if s.is_null() {
        return Err(fail(MlfStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(MlfStatus::InvalidArgument, "string is not UTF-8"))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failure on this thread, empty after a success. The
/// pointer stays valid until the next `mlf_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mlf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a geometry such as `sphere:R=1` into a new handle.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlf_geometry_parse(
    spec: *const c_char,
    out: *mut *mut MlfGeometry,
) -> MlfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MlfStatus::NullPointer, "null output pointer");
        }
        let spec = match read_str(spec) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match parse_geometry(spec) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(MlfGeometry(g)));
                MlfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `geometry` must come from [`mlf_geometry_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mlf_geometry_free(geometry: *mut MlfGeometry) {
    if !geometry.is_null() {
        drop(Box::from_raw(geometry));
    }
}

/// Dimension and number of charts.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mlf_geometry_shape(
    geometry: *const MlfGeometry,
    dim: *mut usize,
    charts: *mut usize,
) -> MlfStatus {
    guard(|| {
        if geometry.is_null() || dim.is_null() || charts.is_null() {
            return fail(MlfStatus::NullPointer, "null pointer");
        }
        let atlas = &(*geometry).0.atlas;
        *dim = atlas.dim();
        *charts = atlas.charts().len();
        MlfStatus::Ok
    })
}

/// Samples chart `chart` of the geometry with `m` points per axis.
///
/// # Safety
/// `geometry` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlf_metric_sample(
    geometry: *const MlfGeometry,
    chart: usize,
    m: usize,
    out: *mut *mut MlfMetric,
) -> MlfStatus {
    guard(|| {
        if geometry.is_null() || out.is_null() {
            return fail(MlfStatus::NullPointer, "null pointer");
        }
        let atlas = &(*geometry).0.atlas;
        if chart >= atlas.charts().len() {
            return fail(MlfStatus::InvalidArgument, "chart index out of range");
        }
        let sampled = atlas
            .lattice(chart, m)
            .and_then(|l| atlas.charts()[chart].generator.sample(&l));
        match sampled {
            Ok(g) => {
                *out = Box::into_raw(Box::new(MlfMetric(g)));
                MlfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// The globally mollified metric `g^[t]` in chart `chart`, assembled from
/// every chart sampled with `m` points per axis.
///
/// # Safety
/// `geometry` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlf_metric_assemble(
    geometry: *const MlfGeometry,
    m: usize,
    t: f64,
    chart: usize,
    out: *mut *mut MlfMetric,
) -> MlfStatus {
    guard(|| {
        if geometry.is_null() || out.is_null() {
            return fail(MlfStatus::NullPointer, "null pointer");
        }
        let atlas = &(*geometry).0.atlas;
        if chart >= atlas.charts().len() {
            return fail(MlfStatus::InvalidArgument, "chart index out of range");
        }
        let assembled = atlas
            .sample(m)
            .and_then(|s| assemble_mollified(atlas, &s, t));
        match assembled {
            Ok(mut fields) => {
                *out = Box::into_raw(Box::new(MlfMetric(fields.swap_remove(chart))));
                MlfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Chart-wise convolution `P_t g` of a single sampled metric.
///
/// # Safety
/// `metric` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlf_metric_mollify(
    metric: *const MlfMetric,
    t: f64,
    out: *mut *mut MlfMetric,
) -> MlfStatus {
    guard(|| {
        if metric.is_null() || out.is_null() {
            return fail(MlfStatus::NullPointer, "null pointer");
        }
        match mollify(&(*metric).0, t) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(MlfMetric(g)));
                MlfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `metric` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mlf_metric_free(metric: *mut MlfMetric) {
    if !metric.is_null() {
        drop(Box::from_raw(metric));
    }
}

/// Number of lattice nodes and how many of them are valid.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mlf_metric_nodes(
    metric: *const MlfMetric,
    total: *mut usize,
    valid: *mut usize,
) -> MlfStatus {
    guard(|| {
        if metric.is_null() || total.is_null() || valid.is_null() {
            return fail(MlfStatus::NullPointer, "null pointer");
        }
        let g = &(*metric).0;
        *total = g.lattice().len();
        *valid = g.mask().iter().filter(|&&b| b).count();
        MlfStatus::Ok
    })
}

/// Copies the `n×n` metric matrix at `node` into `out` (row-major, `n²`
/// doubles).
///
/// # Safety
/// `out` must hold `n²` doubles.
#[no_mangle]
pub unsafe extern "C" fn mlf_metric_matrix(
    metric: *const MlfMetric,
    node: usize,
    out: *mut f64,
) -> MlfStatus {
    guard(|| {
        if metric.is_null() || out.is_null() {
            return fail(MlfStatus::NullPointer, "null pointer");
        }
        let g = &(*metric).0;
        if node >= g.lattice().len() || !g.mask()[node] {
            return fail(MlfStatus::InvalidArgument, "node outside the valid mask");
        }
        let m = g.matrix_vec(node);
        ptr::copy_nonoverlapping(m.as_ptr(), out, m.len());
        MlfStatus::Ok
    })
}

/// Smallest `Q` with eigenvalues in `[e^{-2Q}, e^{2Q}]` on the valid nodes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mlf_metric_n0(metric: *const MlfMetric, q: *mut f64) -> MlfStatus {
    guard(|| {
        if metric.is_null() || q.is_null() {
            return fail(MlfStatus::NullPointer, "null pointer");
        }
        match check_n0(&(*metric).0) {
            Ok(v) => {
                *q = v;
                MlfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Curvature summary with plane sampling seeded by `seed`.
///
/// # Safety
/// `metric` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlf_curvature_compute(
    metric: *const MlfMetric,
    seed: u64,
    out: *mut *mut MlfCurvature,
) -> MlfStatus {
    guard(|| {
        if metric.is_null() || out.is_null() {
            return fail(MlfStatus::NullPointer, "null pointer");
        }
        match curvature_report(&(*metric).0, seed) {
            Ok((_, rep)) => {
                *out = Box::into_raw(Box::new(MlfCurvature(rep)));
                MlfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `curvature` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mlf_curvature_free(curvature: *mut MlfCurvature) {
    if !curvature.is_null() {
        drop(Box::from_raw(curvature));
    }
}

/// Minimum and maximum sectional curvature over all valid nodes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mlf_curvature_range(
    curvature: *const MlfCurvature,
    min_sec: *mut f64,
    max_sec: *mut f64,
) -> MlfStatus {
    guard(|| {
        if curvature.is_null() || min_sec.is_null() || max_sec.is_null() {
            return fail(MlfStatus::NullPointer, "null pointer");
        }
        let rep = &(*curvature).0;
        let valid = || {
            rep.mask
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| i)
        };
        if valid().next().is_none() {
            return fail(MlfStatus::Numerical, "no valid curvature nodes");
        }
        *min_sec = valid()
            .map(|i| rep.min_sec[i])
            .fold(f64::INFINITY, f64::min);
        *max_sec = valid()
            .map(|i| rep.max_sec[i])
            .fold(f64::NEG_INFINITY, f64::max);
        MlfStatus::Ok
    })
}

/// Per-node values; NaN with `valid = false` outside the curvature mask.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mlf_curvature_node(
    curvature: *const MlfCurvature,
    node: usize,
    min_sec: *mut f64,
    max_sec: *mut f64,
    scalar: *mut f64,
    valid: *mut bool,
) -> MlfStatus {
    guard(|| {
        if curvature.is_null()
            || min_sec.is_null()
            || max_sec.is_null()
            || scalar.is_null()
            || valid.is_null()
        {
            return fail(MlfStatus::NullPointer, "null pointer");
        }
        let rep = &(*curvature).0;
        if node >= rep.mask.len() {
            return fail(MlfStatus::InvalidArgument, "node index out of range");
        }
        *valid = rep.mask[node];
        *min_sec = rep.min_sec[node];
        *max_sec = rep.max_sec[node];
        *scalar = rep.scalar[node];
        MlfStatus::Ok
    })
}

/// Runs a lab command (`curvature`, `deviation`, `norms`, `lemmas`,
/// `cover-check`) with a `key = value` configuration. On success `*csv` is
/// the CSV body (or NULL when the command has none) and `*summary` the
/// summary; both are released with [`mlf_string_free`]. `*violation` is set
/// when a checked inequality failed.
///
/// # Safety
/// Strings must be NUL-terminated; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mlf_run(
    command: *const c_char,
    config: *const c_char,
    csv: *mut *mut c_char,
    summary: *mut *mut c_char,
    violation: *mut bool,
) -> MlfStatus {
    guard(|| {
        if csv.is_null() || summary.is_null() || violation.is_null() {
            return fail(MlfStatus::NullPointer, "null output pointer");
        }
        let (command, text) = match (read_str(command), read_str(config)) {
            (Ok(c), Ok(t)) => (c, t),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let run = match command {
            "curvature" => cmd_curvature,
            "deviation" => cmd_deviation,
            "norms" => cmd_norms,
            "lemmas" => cmd_lemmas,
            "cover-check" => cmd_cover_check,
            other => {
                return fail(
                    MlfStatus::InvalidArgument,
                    &format!("unknown command '{other}'"),
                )
            }
        };
        let mut cfg = ExperimentConfig::default();
        if let Err(e) = cfg.apply_text(text) {
            return from_error(e);
        }
        match run(&cfg) {
            Ok(outcome) => {
                *csv = outcome
                    .table
                    .map_or(ptr::null_mut(), |t| into_c_string(t.to_csv()));
                *summary = into_c_string(outcome.summary);
                *violation = outcome.violation;
                MlfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mlf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
