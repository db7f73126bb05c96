//! C interface to ppkit.
//!
//! Objects are opaque handles created by `ppkit_*_new`-style functions and
//! released with the matching `_free`. Fallible calls return a
//! [`PpkitStatus`]; on failure [`ppkit_last_error_message`] describes the
//! error for the calling thread. Output values are written through
//! caller-provided pointers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use ppkit::fit::riemann_loglik;
use ppkit::geom::{GridSpec, Point, PointPattern, Projection, Window};
use ppkit::grf::{cross_corr_e, exp_correlation, ExpCovParams, LmcParams, Sign};
use ppkit::kernel::{default_bandwidth, kernel_intensity};
use ppkit::ripley::{cross_k_inhom, csr_test, isotropic_correction, k_inhom, poisson_envelope, EnvelopeIntensity};
use ppkit::sim::{simulate_lgcp, LgcpModel};
use ppkit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpkitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidWindow = 2,
    InvalidGrid = 3,
    OutsideGrid = 4,
    Parse = 5,
    InvalidParameter = 6,
    Degenerate = 7,
    CoincidentPoints = 8,
    Embedding = 9,
    Overflow = 10,
    NonFinite = 11,
    Mcmc = 12,
    Config = 13,
    Io = 14,
    GridMismatch = 15,
    Layer = 16,
    Panic = 99,
}

impl From<&Error> for PpkitStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidWindow(_) => PpkitStatus::InvalidWindow,
            Error::InvalidGrid(_) => PpkitStatus::InvalidGrid,
            Error::OutsideGrid { .. } => PpkitStatus::OutsideGrid,
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => PpkitStatus::Parse,
            Error::ConstantLayer(_) | Error::MissingLayer(_) => PpkitStatus::Layer,
            Error::GridMismatch(_) => PpkitStatus::GridMismatch,
            Error::InvalidParameter(_) => PpkitStatus::InvalidParameter,
            Error::Degenerate(_) => PpkitStatus::Degenerate,
            Error::CoincidentPoints => PpkitStatus::CoincidentPoints,
            Error::Embedding { .. } => PpkitStatus::Embedding,
            Error::Overflow(_) => PpkitStatus::Overflow,
            Error::NonFinite(_) => PpkitStatus::NonFinite,
            Error::Mcmc(_) => PpkitStatus::Mcmc,
            Error::Config(_) => PpkitStatus::Config,
            Error::Io { .. } => PpkitStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Runs `f`, recording the error message and mapping it to a status.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> PpkitStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PpkitStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PpkitStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            PpkitStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            PpkitStatus::Panic
        }
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn href<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next ppkit call on the same thread.
#[no_mangle]
pub extern "C" fn ppkit_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ppkit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Observation window.
pub struct PpkitWindow(Arc<Window>);

/// Regular grid with a window mask.
pub struct PpkitGrid(GridSpec);

/// Simple point pattern bound to a window.
pub struct PpkitPattern(PointPattern);

/// Exponential covariance components of the signed coregionalisation model.
/// `sign` is +1 or -1.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PpkitLmc {
    pub sigma_w1: f64,
    pub phi_w1: f64,
    pub sigma_w2: f64,
    pub phi_w2: f64,
    pub sigma_w: f64,
    pub phi_w: f64,
    pub sign: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PpkitCsrResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_sim: usize,
}

/// Axis-aligned rectangular window.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ppkit_window_rectangle(x0: f64, y0: f64, x1: f64, y1: f64, out: *mut *mut PpkitWindow) -> PpkitStatus {
    guard(|| {
        let w = Window::rectangle(x0, y0, x1, y1)?;
        put(out, Box::into_raw(Box::new(PpkitWindow(Arc::new(w)))), "out")
    })
}

/// Window from GeoJSON text. With `project` non-zero the coordinates are
/// lon/lat and are projected to km about the window centroid.
///
/// # Safety
/// `geojson` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppkit_window_from_geojson(geojson: *const c_char, project: bool, out: *mut *mut PpkitWindow) -> PpkitStatus {
    guard(|| {
        if geojson.is_null() {
            return Err(Failure::Null("geojson"));
        }
        let text = CStr::from_ptr(geojson)
            .to_str()
            .map_err(|e| Error::InvalidParameter(format!("geojson is not UTF-8: {e}")))?;
        let polys = Window::polygons_from_geojson(text)?;
        let w = if project {
            let pr = Projection::centered_on(&polys)?;
            Window::from_polygons(pr.project_polygons(&polys))?
        } else {
            Window::from_polygons(polys)?
        };
        put(out, Box::into_raw(Box::new(PpkitWindow(Arc::new(w)))), "out")
    })
}

/// # Safety
/// `w` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppkit_window_free(w: *mut PpkitWindow) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// # Safety
/// `w` must be a live window handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppkit_window_area(w: *const PpkitWindow, out: *mut f64) -> PpkitStatus {
    guard(|| put(out, href(w, "window")?.0.area(), "out"))
}

/// `nx` by `ny` grid over the window's bounding box, masked by cell centre.
///
/// # Safety
/// `w` must be a live window handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppkit_grid_covering(w: *const PpkitWindow, nx: usize, ny: usize, out: *mut *mut PpkitGrid) -> PpkitStatus {
    guard(|| {
        let w = &href(w, "window")?.0;
        let g = GridSpec::covering(w, nx, ny)?.with_window_mask(w);
        put(out, Box::into_raw(Box::new(PpkitGrid(g))), "out")
    })
}

/// # Safety
/// `g` must be NULL or a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn ppkit_grid_free(g: *mut PpkitGrid) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of cells (masked or not); the length of per-cell buffers.
///
/// # Safety
/// `g` must be a live grid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppkit_grid_n_cells(g: *const PpkitGrid, out: *mut usize) -> PpkitStatus {
    guard(|| put(out, href(g, "grid")?.0.n_cells(), "out"))
}

/// Pattern from coordinate arrays. Fails on points outside the window or
/// repeated locations.
///
/// # Safety
/// `xs` and `ys` must point to `n` readable doubles; `w` must be live;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppkit_pattern_new(
    w: *const PpkitWindow,
    xs: *const f64,
    ys: *const f64,
    n: usize,
    out: *mut *mut PpkitPattern,
) -> PpkitStatus {
    guard(|| {
        let w = href(w, "window")?.0.clone();
        let (xs, ys) = (slice(xs, n, "xs")?, slice(ys, n, "ys")?);
        let pts = xs.iter().zip(ys).map(|(x, y)| Point::new(*x, *y)).collect();
        let pp = PointPattern::new(pts, w)?.into_simple()?;
        put(out, Box::into_raw(Box::new(PpkitPattern(pp))), "out")
    })
}

/// # Safety
/// `p` must be NULL or a live pattern handle.
#[no_mangle]
pub unsafe extern "C" fn ppkit_pattern_free(p: *mut PpkitPattern) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live pattern handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppkit_pattern_len(p: *const PpkitPattern, out: *mut usize) -> PpkitStatus {
    guard(|| put(out, href(p, "pattern")?.0.len(), "out"))
}

/// Copies the coordinates into `xs` and `ys`, each of capacity `cap`
/// (at least the pattern length).
///
/// # Safety
/// `xs` and `ys` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ppkit_pattern_coords(p: *const PpkitPattern, xs: *mut f64, ys: *mut f64, cap: usize) -> PpkitStatus {
    guard(|| {
        let pp = &href(p, "pattern")?.0;
        if cap < pp.len() {
            return Err(Error::InvalidParameter(format!("capacity {cap} below pattern length {}", pp.len())).into());
        }
        let (xo, yo) = (slice_mut(xs, pp.len(), "xs")?, slice_mut(ys, pp.len(), "ys")?);
        for (i, q) in pp.points().iter().enumerate() {
            xo[i] = q.x;
            yo[i] = q.y;
        }
        Ok(())
    })
}

/// Isotropic edge-correction weight for the pair `(sx, sy)`, `(ux, uy)`.
///
/// # Safety
/// `w` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppkit_isotropic_correction(
    w: *const PpkitWindow,
    sx: f64,
    sy: f64,
    ux: f64,
    uy: f64,
    out: *mut f64,
) -> PpkitStatus {
    guard(|| {
        let g = isotropic_correction(&Point::new(sx, sy), &Point::new(ux, uy), &href(w, "window")?.0)?;
        put(out, g, "out")
    })
}

/// Inhomogeneous K at `n_radii` radii given one intensity per point.
///
/// # Safety
/// `intensity` must hold one double per point; `radii` and `out` must hold
/// `n_radii` doubles.
#[no_mangle]
pub unsafe extern "C" fn ppkit_k_inhom(
    p: *const PpkitPattern,
    intensity: *const f64,
    radii: *const f64,
    n_radii: usize,
    out: *mut f64,
) -> PpkitStatus {
    guard(|| {
        let pp = &href(p, "pattern")?.0;
        let k = k_inhom(pp, slice(intensity, pp.len(), "intensity")?, slice(radii, n_radii, "radii")?)?;
        slice_mut(out, n_radii, "out")?.copy_from_slice(&k);
        Ok(())
    })
}

/// Inhomogeneous cross-K of two patterns on the same window.
///
/// # Safety
/// Intensity arrays must match the pattern lengths; `radii` and `out` must
/// hold `n_radii` doubles.
#[no_mangle]
pub unsafe extern "C" fn ppkit_cross_k_inhom(
    p1: *const PpkitPattern,
    p2: *const PpkitPattern,
    intensity1: *const f64,
    intensity2: *const f64,
    radii: *const f64,
    n_radii: usize,
    out: *mut f64,
) -> PpkitStatus {
    guard(|| {
        let (a, b) = (&href(p1, "p1")?.0, &href(p2, "p2")?.0);
        let k = cross_k_inhom(
            a,
            b,
            slice(intensity1, a.len(), "intensity1")?,
            slice(intensity2, b.len(), "intensity2")?,
            slice(radii, n_radii, "radii")?,
        )?;
        slice_mut(out, n_radii, "out")?.copy_from_slice(&k);
        Ok(())
    })
}

/// Monte-Carlo CSR test of the kernel-intensity K function against
/// `n_sim` Poisson patterns from the same kernel estimate. A non-positive
/// `bandwidth` selects the default rule.
///
/// # Safety
/// `radii` must hold `n_radii` doubles; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn ppkit_csr_test(
    p: *const PpkitPattern,
    g: *const PpkitGrid,
    bandwidth: f64,
    n_sim: usize,
    radii: *const f64,
    n_radii: usize,
    seed: u64,
    out: *mut PpkitCsrResult,
) -> PpkitStatus {
    guard(|| {
        let pp = &href(p, "pattern")?.0;
        let grid = &href(g, "grid")?.0;
        let radii = slice(radii, n_radii, "radii")?;
        let h = if bandwidth > 0.0 { bandwidth } else { default_bandwidth(pp)? };
        let field = kernel_intensity(pp, h, grid)?;
        let lam = field.point_values.clone().unwrap_or_default();
        let khat = k_inhom(pp, &lam, radii)?;
        let env = poisson_envelope(&field, &pp.window_arc(), n_sim, radii, 0.95, seed, EnvelopeIntensity::Kernel)?;
        let t = csr_test(&khat, &env.curves, radii)?;
        put(
            out,
            PpkitCsrResult {
                statistic: t.statistic,
                p_value: t.p_value,
                n_sim: t.n_sim,
            },
            "out",
        )
    })
}

/// Homogeneous univariate LGCP, `log Lambda = beta0 + e`, on `g`. The
/// latent field `e` is written to `field_out` (one value per grid cell)
/// when it is not NULL.
///
/// # Safety
/// Handles must be live; `field_out` must be NULL or hold
/// `ppkit_grid_n_cells` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppkit_simulate_lgcp(
    w: *const PpkitWindow,
    g: *const PpkitGrid,
    beta0: f64,
    sigma: f64,
    phi: f64,
    seed: u64,
    field_out: *mut f64,
    out: *mut *mut PpkitPattern,
) -> PpkitStatus {
    guard(|| {
        let w = href(w, "window")?.0.clone();
        let grid = &href(g, "grid")?.0;
        let m = LgcpModel::homogeneous(grid, w, beta0, ExpCovParams::new(sigma, phi)?)?;
        let (pp, field) = simulate_lgcp(&m, seed)?;
        if !field_out.is_null() {
            slice_mut(field_out, grid.n_cells(), "field_out")?.copy_from_slice(&field.values);
        }
        put(out, Box::into_raw(Box::new(PpkitPattern(pp))), "out")
    })
}

/// `exp(-h / phi)`.
#[no_mangle]
pub extern "C" fn ppkit_exp_correlation(h: f64, phi: f64) -> f64 {
    exp_correlation(h, phi)
}

/// Cross-correlation of the two log-intensities at distance `h`.
///
/// # Safety
/// `lmc` must point to a valid struct; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppkit_cross_corr_e(h: f64, lmc: *const PpkitLmc, out: *mut f64) -> PpkitStatus {
    guard(|| {
        let l = href(lmc, "lmc")?;
        let p = LmcParams::new(
            ExpCovParams::new(l.sigma_w1, l.phi_w1)?,
            ExpCovParams::new(l.sigma_w2, l.phi_w2)?,
            ExpCovParams::new(l.sigma_w, l.phi_w)?,
            Sign::from_value(l.sign as f64)?,
        )?;
        put(out, cross_corr_e(h, &p)?, "out")
    })
}

/// Grid log-likelihood `sum n log(Lambda) - Lambda A` over `n` cells.
///
/// # Safety
/// The three arrays must each hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ppkit_riemann_loglik(
    counts: *const f64,
    log_intensity: *const f64,
    areas: *const f64,
    n: usize,
    out: *mut f64,
) -> PpkitStatus {
    guard(|| {
        let v = riemann_loglik(
            slice(counts, n, "counts")?,
            slice(log_intensity, n, "log_intensity")?,
            slice(areas, n, "areas")?,
        )?;
        put(out, v, "out")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = ppkit_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn window_lifecycle_and_errors() {
        unsafe {
            let mut w = ptr::null_mut();
            assert_eq!(ppkit_window_rectangle(0.0, 0.0, 2.0, 3.0, &mut w), PpkitStatus::Ok);
            assert!(ppkit_last_error_message().is_null());
            let mut a = 0.0;
            assert_eq!(ppkit_window_area(w, &mut a), PpkitStatus::Ok);
            assert_eq!(a, 6.0);
            ppkit_window_free(w);

            let mut bad = ptr::null_mut();
            assert_eq!(ppkit_window_rectangle(0.0, 0.0, 0.0, 1.0, &mut bad), PpkitStatus::InvalidWindow);
            assert!(bad.is_null());
            assert!(!last_error().is_empty());
            assert_eq!(ppkit_window_area(ptr::null(), &mut a), PpkitStatus::NullPointer);
            assert!(last_error().contains("window"));
        }
    }

    #[test]
    fn duplicate_points_are_rejected() {
        unsafe {
            let mut w = ptr::null_mut();
            ppkit_window_rectangle(0.0, 0.0, 1.0, 1.0, &mut w);
            let xs = [0.5, 0.5];
            let ys = [0.5, 0.5];
            let mut p = ptr::null_mut();
            let st = ppkit_pattern_new(w, xs.as_ptr(), ys.as_ptr(), 2, &mut p);
            assert_ne!(st, PpkitStatus::Ok);
            assert!(p.is_null());
            ppkit_window_free(w);
        }
    }

    #[test]
    fn reference_cross_correlation() {
        let l = PpkitLmc {
            sigma_w1: 1.29,
            phi_w1: 6.79,
            sigma_w2: 2.09,
            phi_w2: 10.0,
            sigma_w: 2.28,
            phi_w: 78.43,
            sign: -1,
        };
        let mut c = 0.0;
        assert_eq!(unsafe { ppkit_cross_corr_e(0.0, &l, &mut c) }, PpkitStatus::Ok);
        assert!((c + 0.64).abs() < 0.005);
        let bad = PpkitLmc { sign: 3, ..l };
        assert_eq!(unsafe { ppkit_cross_corr_e(0.0, &bad, &mut c) }, PpkitStatus::InvalidParameter);
    }
}
