//! C ABI for tetmorph.
//!
//! Grids and meshes are opaque handles created by `tm_*_new`/`tm_*_load`
//! functions and released with the matching `tm_*_free`. Every fallible
//! call returns a [`TmStatus`]; on failure [`tm_last_error`] describes the
//! problem for the calling thread. Point arrays are packed `x, y, z` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tetmorph::eval::{accuracy, epe};
use tetmorph::fit::chamfer;
use tetmorph::geometry::enclosed_volume;
use tetmorph::march::marching_tetrahedra;
use tetmorph::mesh::SurfaceMesh;
use tetmorph::tetgrid::{build_uniform_grid, TetGrid};
use tetmorph::{Error, Vec3};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmStatus {
    Ok = 0,
    InvalidArgument = 1,
    Numeric = 2,
    ContractViolation = 3,
    FitDiverged = 4,
    Format = 5,
    Io = 6,
    NullPointer = 7,
    Panic = 8,
}

/// Opaque tetrahedral grid.
pub struct TmGrid {
    grid: TetGrid,
}

/// Opaque triangle mesh.
pub struct TmMesh {
    mesh: SurfaceMesh,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TmStatus {
    match e {
        Error::InvalidArgument(_) => TmStatus::InvalidArgument,
        Error::Numeric(_) => TmStatus::Numeric,
        Error::ContractViolation(_) => TmStatus::ContractViolation,
        Error::FitDiverged(_) => TmStatus::FitDiverged,
        Error::Format(_) => TmStatus::Format,
        Error::Io(_) => TmStatus::Io,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard<F: FnOnce() -> FfiResult<()>>(f: F) -> TmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TmStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer passed for {what}"));
            TmStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic");
            TmStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn points<'a>(p: *const f64, count: usize, what: &'static str) -> FfiResult<Vec<Vec3>> {
    let s = slice(p, count * 3, what)?;
    Ok(s.chunks_exact(3).map(Vec3::from_column_slice).collect())
}

unsafe fn path(p: *const c_char) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Error::invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Copies `src` into a caller buffer of `capacity` elements.
unsafe fn fill<T: Copy>(src: &[T], out: *mut T, capacity: usize) -> FfiResult<()> {
    if capacity < src.len() {
        return Err(Error::invalid(format!("buffer holds {capacity} values, {} needed", src.len())).into());
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(Failure::Null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn flatten_points(p: &[Vec3]) -> Vec<f64> {
    p.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
}

/// Message for the last failed call on this thread; empty when none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an R×R×R grid over `[-1, 1]^3` with zero SDF and offsets.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn tm_grid_new(resolution: usize, out: *mut *mut TmGrid) -> TmStatus {
    guard(|| {
        let grid = build_uniform_grid(resolution)?;
        write_out(out, Box::into_raw(Box::new(TmGrid { grid })), "out")
    })
}

/// # Safety
/// `path_utf8` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_grid_load(path_utf8: *const c_char, out: *mut *mut TmGrid) -> TmStatus {
    guard(|| {
        let grid = TetGrid::load(&path(path_utf8)?)?;
        write_out(out, Box::into_raw(Box::new(TmGrid { grid })), "out")
    })
}

/// # Safety
/// `grid` must come from this library; `path_utf8` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tm_grid_save(grid: *const TmGrid, path_utf8: *const c_char) -> TmStatus {
    guard(|| {
        let g = borrow(grid, "grid")?;
        g.grid.save(&path(path_utf8)?)?;
        Ok(())
    })
}

/// Releases a grid; null is ignored.
///
/// # Safety
/// `grid` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tm_grid_free(grid: *mut TmGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Vertex count, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tm_grid_vertex_count(grid: *const TmGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.vertex_count())
}

/// # Safety
/// `grid` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tm_grid_tet_count(grid: *const TmGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.tet_count())
}

/// Copies the deformed vertex positions (3 per vertex).
///
/// # Safety
/// `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn tm_grid_vertices(grid: *const TmGrid, out: *mut f64, capacity: usize) -> TmStatus {
    guard(|| fill(&flatten_points(borrow(grid, "grid")?.grid.vertices()), out, capacity))
}

/// Replaces the SDF; `len` must equal the vertex count.
///
/// # Safety
/// `values` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tm_grid_set_sdf(grid: *mut TmGrid, values: *const f64, len: usize) -> TmStatus {
    guard(|| {
        let g = borrow_mut(grid, "grid")?;
        g.grid.set_sdf(slice(values, len, "values")?)?;
        Ok(())
    })
}

/// Sets the SDF to the signed distance of a sphere centred at the origin.
///
/// # Safety
/// `grid` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tm_grid_set_sdf_sphere(grid: *mut TmGrid, radius: f64) -> TmStatus {
    guard(|| {
        let g = borrow_mut(grid, "grid")?;
        let sdf: Vec<f64> = g.grid.vertices().iter().map(|p| p.norm() - radius).collect();
        g.grid.set_sdf(&sdf)?;
        Ok(())
    })
}

/// Replaces the vertex offsets (3 per vertex). Offsets are clamped to the
/// grid's bound and masked on the domain boundary.
///
/// # Safety
/// `offsets` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tm_grid_apply_offsets(grid: *mut TmGrid, offsets: *const f64, len: usize) -> TmStatus {
    guard(|| {
        let g = borrow_mut(grid, "grid")?;
        if len % 3 != 0 {
            return Err(Error::invalid("offset array length is not a multiple of 3").into());
        }
        g.grid.set_offsets(&points(offsets, len / 3, "offsets")?)?;
        Ok(())
    })
}

/// Extracts the zero level set of the grid.
///
/// # Safety
/// `grid` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tm_march(grid: *const TmGrid, out: *mut *mut TmMesh) -> TmStatus {
    guard(|| {
        let mesh = marching_tetrahedra(&borrow(grid, "grid")?.grid)?;
        write_out(out, Box::into_raw(Box::new(TmMesh { mesh })), "out")
    })
}

/// # Safety
/// `path_utf8` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_load_obj(path_utf8: *const c_char, out: *mut *mut TmMesh) -> TmStatus {
    guard(|| {
        let mesh = SurfaceMesh::load_obj(&path(path_utf8)?)?;
        write_out(out, Box::into_raw(Box::new(TmMesh { mesh })), "out")
    })
}

/// # Safety
/// `mesh` must come from this library; `path_utf8` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_save_obj(mesh: *const TmMesh, path_utf8: *const c_char) -> TmStatus {
    guard(|| {
        borrow(mesh, "mesh")?.mesh.save_obj(&path(path_utf8)?)?;
        Ok(())
    })
}

/// Releases a mesh; null is ignored.
///
/// # Safety
/// `mesh` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_free(mesh: *mut TmMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_vertex_count(mesh: *const TmMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.vertex_count())
}

/// # Safety
/// `mesh` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_triangle_count(mesh: *const TmMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.triangle_count())
}

/// Copies vertex positions (3 doubles per vertex).
///
/// # Safety
/// `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_positions(mesh: *const TmMesh, out: *mut f64, capacity: usize) -> TmStatus {
    guard(|| fill(&flatten_points(&borrow(mesh, "mesh")?.mesh.positions), out, capacity))
}

/// Copies triangle indices (3 per triangle, counter-clockwise from outside).
///
/// # Safety
/// `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_triangles(mesh: *const TmMesh, out: *mut u32, capacity: usize) -> TmStatus {
    guard(|| {
        let tris: Vec<u32> = borrow(mesh, "mesh")?.mesh.triangles.iter().flatten().copied().collect();
        fill(&tris, out, capacity)
    })
}

/// Enclosed volume of a closed mesh.
///
/// # Safety
/// `mesh` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_volume(mesh: *const TmMesh, out: *mut f64) -> TmStatus {
    guard(|| {
        let v = enclosed_volume(&borrow(mesh, "mesh")?.mesh)?;
        write_out(out, v, "out")
    })
}

/// 1 when every edge is shared by exactly two triangles, else 0.
///
/// # Safety
/// `mesh` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_is_watertight(mesh: *const TmMesh) -> i32 {
    mesh.as_ref().map_or(0, |m| m.mesh.is_watertight() as i32)
}

/// Squared chamfer distance between two point sets of `na` and `nb` points.
///
/// # Safety
/// `a` and `b` must hold `3 * na` and `3 * nb` doubles.
#[no_mangle]
pub unsafe extern "C" fn tm_chamfer(a: *const f64, na: usize, b: *const f64, nb: usize, out: *mut f64) -> TmStatus {
    guard(|| {
        let v = chamfer(&points(a, na, "a")?, &points(b, nb, "b")?)?;
        write_out(out, v, "out")
    })
}

/// Mean endpoint error between corresponding points.
///
/// # Safety
/// `pred` and `gt` must each hold `3 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn tm_epe(pred: *const f64, gt: *const f64, n: usize, out: *mut f64) -> TmStatus {
    guard(|| {
        let v = epe(&points(pred, n, "pred")?, &points(gt, n, "gt")?)?;
        write_out(out, v, "out")
    })
}

/// Fraction of correspondences closer than `threshold`.
///
/// # Safety
/// `pred` and `gt` must each hold `3 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn tm_accuracy(pred: *const f64, gt: *const f64, n: usize, threshold: f64, out: *mut f64) -> TmStatus {
    guard(|| {
        let v = accuracy(&points(pred, n, "pred")?, &points(gt, n, "gt")?, threshold)?;
        write_out(out, v, "out")
    })
}
