//! C ABI for se3reg.
//!
//! Conventions:
//! * every fallible function returns an [`Se3regStatus`]; on failure a
//!   message is available from [`se3reg_last_error_message`] on the same
//!   thread;
//! * motions cross the boundary as 16 doubles, the row-major 4×4 matrix;
//!   twists as 6 doubles `(ω, u)`; point arrays as `n × 3` doubles;
//! * handles are opaque, created by `*_new`/`*_read_*` functions and
//!   released with the matching `*_free`, which accepts NULL.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use se3reg::liegroup::{exp_se3, log_se3, Twist};
use se3reg::multiview::{estimate_multiview, ViewEdge, ViewGraph};
use se3reg::pairwise::{
    estimate_pairwise, umeyama_closed_form, Correspondence, CorrespondenceSet, Parametrization,
    SolverConfig,
};
use se3reg::robust_loss::{AnnealSchedule, LossKind};
use se3reg::{Error, PointCloud, RigidMotion, Vec3};

/// Tolerance on the rotation block of motions passed in by callers.
const MOTION_TOLERANCE: f64 = 1e-6;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Se3regStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Parse = 3,
    Io = 4,
    UnsupportedFormat = 5,
    TooFewCorrespondences = 6,
    IndexOutOfRange = 7,
    DegenerateGeometry = 8,
    DisconnectedGraph = 9,
    EmptyAfterPrune = 10,
    /// The result was written but the solver hit `max_outer`.
    NotConverged = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Se3regLoss {
    LHalf = 0,
    L1 = 1,
    GemanMcclure = 2,
}

/// Solver settings. For Geman-McClure, `mu` is the initial scale and the
/// schedule divides it by 2 every 4 outer iterations down to
/// `(1e-4 · sqrt(mu))²`; a non-positive `mu` selects the squared extent of
/// the input.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se3regSolverOptions {
    pub loss: Se3regLoss,
    pub mu: f64,
    pub k_irls: u32,
    pub epsilon: f64,
    pub max_outer: u32,
    pub extrinsic: bool,
}

/// Correspondence set.
pub struct Se3regCorrespondences {
    inner: CorrespondenceSet,
}

/// View graph under construction or after estimation.
pub struct Se3regViewGraph {
    motions: Vec<RigidMotion>,
    edges: Vec<ViewEdge>,
}

pub struct Se3regPointCloud {
    inner: PointCloud,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> Se3regStatus {
    match e {
        Error::DegenerateGeometry(_) => Se3regStatus::DegenerateGeometry,
        Error::DisconnectedGraph(_) => Se3regStatus::DisconnectedGraph,
        Error::EmptyAfterPrune => Se3regStatus::EmptyAfterPrune,
        Error::TooFewCorrespondences { .. } => Se3regStatus::TooFewCorrespondences,
        Error::IndexOutOfRange { .. } => Se3regStatus::IndexOutOfRange,
        Error::Parse { .. } => Se3regStatus::Parse,
        Error::UnsupportedFormat(_) => Se3regStatus::UnsupportedFormat,
        Error::Io { .. } => Se3regStatus::Io,
        _ => Se3regStatus::InvalidInput,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<Se3regStatus, Error>) -> Se3regStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => {
            if status == Se3regStatus::Ok {
                set_error("");
            }
            status
        }
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            Se3regStatus::Panic
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            set_error(concat!("`", stringify!($p), "` is NULL"));
            return Se3regStatus::NullPointer;
        })+
    };
}

fn solver_config(opts: &Se3regSolverOptions, extent: f64) -> Result<SolverConfig, Error> {
    let mu0 = if opts.mu > 0.0 { opts.mu } else { extent * extent };
    let (loss, anneal) = match opts.loss {
        Se3regLoss::LHalf => (LossKind::LHalf, None),
        Se3regLoss::L1 => (LossKind::L1, None),
        Se3regLoss::GemanMcclure => (
            LossKind::GemanMcClure { mu: mu0 },
            Some(AnnealSchedule::for_diameter(mu0.sqrt())),
        ),
    };
    let cfg = SolverConfig {
        loss,
        anneal,
        k_irls: opts.k_irls as usize,
        epsilon: opts.epsilon,
        max_outer: opts.max_outer as usize,
        parametrization: if opts.extrinsic {
            Parametrization::Extrinsic
        } else {
            Parametrization::Intrinsic
        },
        residual_floor: None,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn options_from(cfg: SolverConfig) -> Se3regSolverOptions {
    Se3regSolverOptions {
        loss: Se3regLoss::LHalf,
        mu: 0.0,
        k_irls: cfg.k_irls as u32,
        epsilon: cfg.epsilon,
        max_outer: cfg.max_outer as u32,
        extrinsic: false,
    }
}

unsafe fn read_motion(m: *const f64) -> Result<RigidMotion, Error> {
    let vals = std::slice::from_raw_parts(m, 16);
    RigidMotion::from_row_major(vals, MOTION_TOLERANCE)
        .ok_or_else(|| Error::InvalidInput("matrix is not a rigid motion".into()))
}

unsafe fn write_motion(m: &RigidMotion, out: *mut f64) {
    let vals = m.to_row_major_4x4();
    ptr::copy_nonoverlapping(vals.as_ptr(), out, 16);
}

unsafe fn read_points(xyz: *const f64, n: usize) -> Vec<Vec3> {
    std::slice::from_raw_parts(xyz, 3 * n)
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

/// Message for the last failed call on this thread (empty after a
/// success). Valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn se3reg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn se3reg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Pairwise defaults: L½, K_IRLS = 2, ε = 1e-5, 100 outer iterations.
#[no_mangle]
pub extern "C" fn se3reg_solver_options_pairwise() -> Se3regSolverOptions {
    options_from(SolverConfig::pairwise())
}

/// Multiview defaults: L½, K_IRLS = 3, ε = 1e-7, 100 outer iterations.
#[no_mangle]
pub extern "C" fn se3reg_solver_options_multiview() -> Se3regSolverOptions {
    options_from(SolverConfig::multiview())
}

/// Builds a correspondence set from `n` target points `p` and source points
/// `q` (each `n × 3`).
///
/// # Safety
/// `p` and `q` must point to `3 n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se3reg_correspondences_new(
    p: *const f64,
    q: *const f64,
    n: usize,
    out: *mut *mut Se3regCorrespondences,
) -> Se3regStatus {
    non_null!(p, q, out);
    guard(|| {
        let (p, q) = (read_points(p, n), read_points(q, n));
        let inner = CorrespondenceSet::new(
            p.into_iter()
                .zip(q)
                .map(|(p, q)| Correspondence { p, q })
                .collect(),
        )?;
        *out = Box::into_raw(Box::new(Se3regCorrespondences { inner }));
        Ok(Se3regStatus::Ok)
    })
}

/// # Safety
/// `c` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn se3reg_correspondences_len(c: *const Se3regCorrespondences) -> usize {
    c.as_ref().map_or(0, |c| c.inner.len())
}

/// # Safety
/// `c` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn se3reg_correspondences_free(c: *mut Se3regCorrespondences) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Robust motion mapping `q` onto `p`, from the identity. Writes the motion
/// even when the status is `NotConverged`. `out_iterations` may be NULL.
///
/// # Safety
/// `c` must be a live handle, `opts` readable, `out_motion` writable for 16
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn se3reg_estimate_pairwise(
    c: *const Se3regCorrespondences,
    opts: *const Se3regSolverOptions,
    out_motion: *mut f64,
    out_iterations: *mut u32,
) -> Se3regStatus {
    non_null!(c, opts, out_motion);
    guard(|| {
        let corrs = &(*c).inner;
        let cfg = solver_config(&*opts, corrs.extent())?;
        let result = estimate_pairwise(corrs, &cfg)?;
        write_motion(&result.motion, out_motion);
        if !out_iterations.is_null() {
            *out_iterations = result.trace.len() as u32;
        }
        if result.converged {
            Ok(Se3regStatus::Ok)
        } else {
            set_error("solver reached max_outer without converging");
            Ok(Se3regStatus::NotConverged)
        }
    })
}

/// Closed-form least-squares motion mapping `q` onto `p`.
///
/// # Safety
/// `c` must be a live handle and `out_motion` writable for 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn se3reg_umeyama(
    c: *const Se3regCorrespondences,
    out_motion: *mut f64,
) -> Se3regStatus {
    non_null!(c, out_motion);
    guard(|| {
        let m = umeyama_closed_form(&(*c).inner)?;
        write_motion(&m, out_motion);
        Ok(Se3regStatus::Ok)
    })
}

/// Exponential map of the twist `(ω, u)`.
///
/// # Safety
/// `twist` must be readable for 6 doubles, `out_motion` writable for 16.
#[no_mangle]
pub unsafe extern "C" fn se3reg_exp(twist: *const f64, out_motion: *mut f64) -> Se3regStatus {
    non_null!(twist, out_motion);
    guard(|| {
        let v = std::slice::from_raw_parts(twist, 6);
        let t = Twist::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]));
        if !t.is_finite() {
            return Err(Error::InvalidInput("twist is not finite".into()));
        }
        write_motion(&exp_se3(&t), out_motion);
        Ok(Se3regStatus::Ok)
    })
}

/// Logarithm map, rotation angle in `[0, π]`.
///
/// # Safety
/// `motion` must be readable for 16 doubles, `out_twist` writable for 6.
#[no_mangle]
pub unsafe extern "C" fn se3reg_log(motion: *const f64, out_twist: *mut f64) -> Se3regStatus {
    non_null!(motion, out_twist);
    guard(|| {
        let v = log_se3(&read_motion(motion)?).to_vector();
        ptr::copy_nonoverlapping(v.as_ptr(), out_twist, 6);
        Ok(Se3regStatus::Ok)
    })
}

/// Empty view graph over `n` scans, all motions at the identity.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se3reg_view_graph_new(n: usize, out: *mut *mut Se3regViewGraph) -> Se3regStatus {
    non_null!(out);
    guard(|| {
        if n == 0 {
            return Err(Error::InvalidInput("a view graph needs at least one scan".into()));
        }
        *out = Box::into_raw(Box::new(Se3regViewGraph {
            motions: vec![RigidMotion::identity(); n],
            edges: Vec::new(),
        }));
        Ok(Se3regStatus::Ok)
    })
}

/// # Safety
/// `g` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn se3reg_view_graph_free(g: *mut Se3regViewGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Sets the scan-to-global motion of scan `i`.
///
/// # Safety
/// `g` must be a live handle and `motion` readable for 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn se3reg_view_graph_set_motion(
    g: *mut Se3regViewGraph,
    i: usize,
    motion: *const f64,
) -> Se3regStatus {
    non_null!(g, motion);
    guard(|| {
        let g = &mut *g;
        let n = g.motions.len();
        let slot = g
            .motions
            .get_mut(i)
            .ok_or_else(|| Error::InvalidInput(format!("scan {i} out of range for {n} scans")))?;
        *slot = read_motion(motion)?;
        Ok(Se3regStatus::Ok)
    })
}

/// # Safety
/// `g` must be a live handle and `out_motion` writable for 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn se3reg_view_graph_get_motion(
    g: *const Se3regViewGraph,
    i: usize,
    out_motion: *mut f64,
) -> Se3regStatus {
    non_null!(g, out_motion);
    guard(|| {
        let g = &*g;
        let m = g.motions.get(i).ok_or_else(|| {
            Error::InvalidInput(format!("scan {i} out of range for {} scans", g.motions.len()))
        })?;
        write_motion(m, out_motion);
        Ok(Se3regStatus::Ok)
    })
}

/// Adds edge `(i, j)`: `p` points live in scan `i`, `q` points in scan
/// `j`. The correspondences are copied.
///
/// # Safety
/// `g` and `c` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn se3reg_view_graph_add_edge(
    g: *mut Se3regViewGraph,
    i: usize,
    j: usize,
    c: *const Se3regCorrespondences,
) -> Se3regStatus {
    non_null!(g, c);
    guard(|| {
        let g = &mut *g;
        let n = g.motions.len();
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidInput(format!("edge ({i}, {j}) is invalid for {n} scans")));
        }
        g.edges.push(ViewEdge {
            i,
            j,
            corrs: (*c).inner.clone(),
        });
        Ok(Se3regStatus::Ok)
    })
}

/// Joint multiview registration. On success the graph's motions are
/// replaced by the estimate, gauge-fixed so scan 0 is the identity. They
/// are also replaced when the status is `NotConverged`.
///
/// # Safety
/// `g` must be a live handle and `opts` readable; `out_iterations` may be
/// NULL.
#[no_mangle]
pub unsafe extern "C" fn se3reg_estimate_multiview(
    g: *mut Se3regViewGraph,
    opts: *const Se3regSolverOptions,
    out_iterations: *mut u32,
) -> Se3regStatus {
    non_null!(g, opts);
    guard(|| {
        let handle = &mut *g;
        let graph = ViewGraph::new(handle.motions.clone(), handle.edges.clone())?;
        let extent = graph.edges.iter().map(|e| e.corrs.extent()).fold(0.0, f64::max);
        let cfg = solver_config(&*opts, extent)?;
        let result = estimate_multiview(&graph, &cfg)?;
        handle.motions = result.graph.motions;
        if !out_iterations.is_null() {
            *out_iterations = result.trace.len() as u32;
        }
        if result.converged {
            Ok(Se3regStatus::Ok)
        } else {
            set_error("solver reached max_outer without converging");
            Ok(Se3regStatus::NotConverged)
        }
    })
}

/// Reads an ascii or binary little-endian PLY file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se3reg_point_cloud_read_ply(
    path: *const c_char,
    out: *mut *mut Se3regPointCloud,
) -> Se3regStatus {
    non_null!(path, out);
    guard(|| {
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidInput("path is not UTF-8".into()))?;
        let inner = se3reg::io::read_ply(path)?;
        *out = Box::into_raw(Box::new(Se3regPointCloud { inner }));
        Ok(Se3regStatus::Ok)
    })
}

/// # Safety
/// `c` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn se3reg_point_cloud_len(c: *const Se3regPointCloud) -> usize {
    c.as_ref().map_or(0, |c| c.inner.len())
}

/// Copies the points into `out_xyz` (`capacity` points of 3 doubles).
///
/// # Safety
/// `c` must be a live handle and `out_xyz` writable for `3 capacity`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn se3reg_point_cloud_points(
    c: *const Se3regPointCloud,
    out_xyz: *mut f64,
    capacity: usize,
) -> Se3regStatus {
    non_null!(c, out_xyz);
    guard(|| {
        let pts = &(*c).inner.points;
        if capacity < pts.len() {
            return Err(Error::InvalidInput(format!(
                "buffer holds {capacity} points, cloud has {}",
                pts.len()
            )));
        }
        for (k, p) in pts.iter().enumerate() {
            ptr::copy_nonoverlapping(p.as_ptr(), out_xyz.add(3 * k), 3);
        }
        Ok(Se3regStatus::Ok)
    })
}

/// # Safety
/// `c` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn se3reg_point_cloud_free(c: *mut Se3regPointCloud) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}
