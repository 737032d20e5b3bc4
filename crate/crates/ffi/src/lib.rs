//! C ABI for pointsim.
//!
//! Objects are opaque handles created by `ps_*_new` and released with the
//! matching `ps_*_free`. Every fallible call returns a [`PsStatus`]; the
//! message of the most recent failure on the calling thread is available
//! through [`ps_last_error`]. Points are passed as packed `x, y, z` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pointsim::elasticity::elastic_energy;
use pointsim::forces::Pin;
use pointsim::harness::evaluate;
use pointsim::solver::solve_equilibrium;
use pointsim::warp::WarpField;
use pointsim::{build_reference, Error, ForceFrame, MaterialField, PointCloud, ReferenceModel, SolverConfig, Vec3};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SizeMismatch = 3,
    DegenerateInput = 4,
    Inverted = 5,
    SolverFailure = 6,
    Panic = 7,
}

/// Reference cloud with its stencils.
pub struct PsReference(ReferenceModel);

/// Per-point Lamé parameters.
pub struct PsMaterial(MaterialField);

/// Backward-warp interpolator over a correspondence pair.
pub struct PsWarp(WarpField);

/// Distance statistics in millimetres.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PsDistanceReport {
    pub average_mm: f64,
    pub p95_mm: f64,
    pub max_mm: f64,
}

/// Outcome of an equilibrium solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PsSolveInfo {
    pub energy: f64,
    pub grad_norm: f64,
    pub iters: usize,
    pub converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        Error::SizeMismatch { .. } => PsStatus::SizeMismatch,
        Error::InsufficientPoints { .. } | Error::NonFinitePoint { .. } | Error::DegenerateNeighborhood { .. } => {
            PsStatus::DegenerateInput
        }
        Error::Inverted { .. } => PsStatus::Inverted,
        e if e.is_solver_failure() => PsStatus::SolverFailure,
        _ => PsStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PsStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            PsStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn points(p: *const f64, n: usize, what: &'static str) -> Result<Vec<Vec3>, Fail> {
    Ok(slice(p, 3 * n, what)?
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect())
}

fn write_points(out: &mut [f64], pts: &[Vec3]) {
    for (c, p) in out.chunks_exact_mut(3).zip(pts) {
        c.copy_from_slice(p.as_slice());
    }
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds stencils for `n` rest points. `surface_mask` may be null (no
/// surface points) or hold `n` bytes, nonzero marking a surface point.
///
/// # Safety
/// `points_xyz` must hold `3 * n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_reference_new(
    points_xyz: *const f64,
    n: usize,
    total_mass: f64,
    surface_mask: *const u8,
    out: *mut *mut PsReference,
) -> PsStatus {
    guard(|| {
        let pts = points(points_xyz, n, "points")?;
        let mask = if surface_mask.is_null() {
            vec![false; n]
        } else {
            slice(surface_mask, n, "surface_mask")?.iter().map(|&m| m != 0).collect()
        };
        let model = build_reference(PointCloud::new(pts)?, total_mass, mask)?;
        put(out, PsReference(model))
    })
}

/// # Safety
/// `r` must be null or a handle from [`ps_reference_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_reference_free(r: *mut PsReference) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_reference_len(r: *const PsReference) -> usize {
    r.as_ref().map_or(0, |r| r.0.len())
}

/// Copies the per-point masses (kg) into `out_masses[n]`.
///
/// # Safety
/// `r` must be a live handle and `out_masses` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_reference_masses(r: *const PsReference, out_masses: *mut f64, n: usize) -> PsStatus {
    guard(|| {
        let r = handle(r, "reference")?;
        if n != r.0.len() {
            return Err(Error::SizeMismatch {
                what: "mass buffer".into(),
                expected: r.0.len(),
                actual: n,
            }
            .into());
        }
        slice_mut(out_masses, n, "out_masses")?.copy_from_slice(r.0.point_masses());
        Ok(())
    })
}

/// Per-point material from `mu[n]` and `lambda[n]` (Pa).
///
/// # Safety
/// Both arrays must hold `n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_material_new(
    mu: *const f64,
    lambda: *const f64,
    n: usize,
    out: *mut *mut PsMaterial,
) -> PsStatus {
    guard(|| {
        let m = MaterialField::from_lame(slice(mu, n, "mu")?, slice(lambda, n, "lambda")?)?;
        put(out, PsMaterial(m))
    })
}

/// # Safety
/// `m` must be null or a handle from [`ps_material_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_material_free(m: *mut PsMaterial) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Elastic energy (J) of deformed positions `y[n]`. Inverted stencils give
/// `+inf` with status `Ok`.
///
/// # Safety
/// Handles must be live, `y_xyz` must hold `3 * n` doubles and `out_energy`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_elastic_energy(
    r: *const PsReference,
    m: *const PsMaterial,
    y_xyz: *const f64,
    n: usize,
    out_energy: *mut f64,
) -> PsStatus {
    guard(|| {
        let (r, m) = (handle(r, "reference")?, handle(m, "material")?);
        let y = points(y_xyz, n, "y")?;
        if y.len() != r.0.len() {
            return Err(Error::SizeMismatch {
                what: "positions".into(),
                expected: r.0.len(),
                actual: y.len(),
            }
            .into());
        }
        let e = elastic_energy(&r.0, &m.0, &y)?;
        *out_energy.as_mut().ok_or(Fail::Null("out_energy"))? = e;
        Ok(())
    })
}

/// Static equilibrium under per-point forces `forces_xyz[n]` (may be null
/// for none) with `n_pins` points `pin_ids` held at `pin_xyz`. Starts from
/// `y_init_xyz` (null for the rest positions) and writes the result to
/// `y_out_xyz[n]`. A solve that stops without converging still writes its
/// last iterate and returns `SolverFailure`. Default solver settings apply.
///
/// # Safety
/// Handles must be live and every non-null array must have the stated size.
#[no_mangle]
pub unsafe extern "C" fn ps_solve_equilibrium(
    r: *const PsReference,
    m: *const PsMaterial,
    n: usize,
    forces_xyz: *const f64,
    pin_ids: *const usize,
    pin_xyz: *const f64,
    n_pins: usize,
    y_init_xyz: *const f64,
    y_out_xyz: *mut f64,
    out_info: *mut PsSolveInfo,
) -> PsStatus {
    guard(|| {
        let (r, m) = (handle(r, "reference")?, handle(m, "material")?);
        if n != r.0.len() {
            return Err(Error::SizeMismatch {
                what: "point count".into(),
                expected: r.0.len(),
                actual: n,
            }
            .into());
        }
        let mut frame = ForceFrame::empty(n);
        if !forces_xyz.is_null() {
            frame.forces = points(forces_xyz, n, "forces")?;
        }
        let ids = slice(pin_ids, n_pins, "pin_ids")?;
        let targets = points(pin_xyz, n_pins, "pin_xyz")?;
        frame.pins = ids
            .iter()
            .zip(&targets)
            .map(|(&id, p)| Pin {
                id,
                position: [p.x, p.y, p.z],
            })
            .collect();
        let y0 = if y_init_xyz.is_null() {
            r.0.rest_positions().to_vec()
        } else {
            points(y_init_xyz, n, "y_init")?
        };
        let out = slice_mut(y_out_xyz, 3 * n, "y_out")?;
        let state = solve_equilibrium(&r.0, &m.0, &frame, &y0, &SolverConfig::default())?;
        write_points(out, &state.y);
        if let Some(info) = out_info.as_mut() {
            *info = PsSolveInfo {
                energy: state.energy,
                grad_norm: state.grad_norm,
                iters: state.iters,
                converged: state.converged,
            };
        }
        if !state.converged {
            return Err(Error::Solver(state.message.unwrap_or_else(|| "did not converge".into())).into());
        }
        Ok(())
    })
}

/// Warp field from `n` corresponding rest/deformed points. `mask_radius <= 0`
/// selects the default radius.
///
/// # Safety
/// Both arrays must hold `3 * n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_warp_new(
    rest_xyz: *const f64,
    deformed_xyz: *const f64,
    n: usize,
    k: usize,
    mask_radius: f64,
    out: *mut *mut PsWarp,
) -> PsStatus {
    guard(|| {
        let rest = PointCloud::new(points(rest_xyz, n, "rest")?)?;
        let deformed = PointCloud::new(points(deformed_xyz, n, "deformed")?)?;
        let radius = (mask_radius > 0.0).then_some(mask_radius);
        put(out, PsWarp(WarpField::new(rest, deformed, k, radius)?))
    })
}

/// # Safety
/// `w` must be null or a handle from [`ps_warp_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_warp_free(w: *mut PsWarp) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Maps `m` deformed-space points to rest space. `out_masked` may be null;
/// otherwise it receives 1 for points outside the mask radius.
///
/// # Safety
/// `w` must be live, `query_xyz` and `out_xyz` must hold `3 * m` doubles and
/// `out_masked`, if non-null, `m` bytes.
#[no_mangle]
pub unsafe extern "C" fn ps_warp_backward(
    w: *const PsWarp,
    query_xyz: *const f64,
    m: usize,
    out_xyz: *mut f64,
    out_masked: *mut u8,
) -> PsStatus {
    guard(|| {
        let w = handle(w, "warp")?;
        let q = points(query_xyz, m, "query")?;
        let out = slice_mut(out_xyz, 3 * m, "out")?;
        let mut masked = if out_masked.is_null() {
            None
        } else {
            Some(slice_mut(out_masked, m, "out_masked")?)
        };
        for (i, p) in q.iter().enumerate() {
            let s = w.0.warp_backward(p);
            out[3 * i..3 * i + 3].copy_from_slice(s.point.as_slice());
            if let Some(mk) = masked.as_deref_mut() {
                mk[i] = s.masked as u8;
            }
        }
        Ok(())
    })
}

/// Distance statistics between `n_frames` simulated and observed frames of
/// `n_points` points each, stored frame after frame. `mask` may be null to
/// use every point.
///
/// # Safety
/// Both clouds must hold `3 * n_frames * n_points` doubles, `mask` (if
/// non-null) `n_points` bytes, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_distance_report(
    simulated_xyz: *const f64,
    observed_xyz: *const f64,
    n_frames: usize,
    n_points: usize,
    mask: *const u8,
    out: *mut PsDistanceReport,
) -> PsStatus {
    guard(|| {
        let total = n_frames * n_points;
        let frames = |p: *const f64, what: &'static str| -> Result<Vec<PointCloud>, Fail> {
            let pts = points(p, total, what)?;
            pts.chunks(n_points.max(1))
                .map(|c| PointCloud::new(c.to_vec()).map_err(Fail::from))
                .collect()
        };
        let sim = frames(simulated_xyz, "simulated")?;
        let obs = frames(observed_xyz, "observed")?;
        let mask: Vec<bool> = if mask.is_null() {
            vec![true; n_points]
        } else {
            slice(mask, n_points, "mask")?.iter().map(|&b| b != 0).collect()
        };
        let r = evaluate(&sim, &obs, &mask)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = PsDistanceReport {
            average_mm: r.average_mm,
            p95_mm: r.p95_mm,
            max_mm: r.max_mm,
        };
        Ok(())
    })
}
