use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tetmorph_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tm_last_error()) }.to_string_lossy().into_owned()
}

fn sphere_grid(res: usize, radius: f64) -> *mut TmGrid {
    let mut grid = ptr::null_mut();
    unsafe {
        assert_eq!(tm_grid_new(res, &mut grid), TmStatus::Ok);
        assert_eq!(tm_grid_set_sdf_sphere(grid, radius), TmStatus::Ok);
    }
    grid
}

#[test]
fn grid_and_mesh_round_trip() {
    let grid = sphere_grid(8, 0.5);
    unsafe {
        assert_eq!(tm_grid_vertex_count(grid), 9 * 9 * 9);
        assert_eq!(tm_grid_tet_count(grid), 6 * 8 * 8 * 8);
        let mut mesh = ptr::null_mut();
        assert_eq!(tm_march(grid, &mut mesh), TmStatus::Ok);
        assert_eq!(tm_mesh_is_watertight(mesh), 1);
        let (nv, nt) = (tm_mesh_vertex_count(mesh), tm_mesh_triangle_count(mesh));
        assert!(nv > 0 && nt > 0);
        let mut pos = vec![0.0; 3 * nv];
        assert_eq!(tm_mesh_positions(mesh, pos.as_mut_ptr(), pos.len()), TmStatus::Ok);
        let mut tris = vec![0u32; 3 * nt];
        assert_eq!(tm_mesh_triangles(mesh, tris.as_mut_ptr(), tris.len()), TmStatus::Ok);
        assert!(tris.iter().all(|&i| (i as usize) < nv));
        assert_eq!(tm_mesh_positions(mesh, pos.as_mut_ptr(), 3), TmStatus::InvalidArgument);
        let mut vol = 0.0;
        assert_eq!(tm_mesh_volume(mesh, &mut vol), TmStatus::Ok);
        assert!(vol > 0.3 && vol < 0.6, "{vol}");

        let dir = tempfile::tempdir().unwrap();
        let gpath = CString::new(dir.path().join("g.bin").to_str().unwrap()).unwrap();
        let mpath = CString::new(dir.path().join("m.obj").to_str().unwrap()).unwrap();
        assert_eq!(tm_grid_save(grid, gpath.as_ptr()), TmStatus::Ok);
        assert_eq!(tm_mesh_save_obj(mesh, mpath.as_ptr()), TmStatus::Ok);
        let mut g2 = ptr::null_mut();
        assert_eq!(tm_grid_load(gpath.as_ptr(), &mut g2), TmStatus::Ok);
        let mut m2 = ptr::null_mut();
        assert_eq!(tm_march(g2, &mut m2), TmStatus::Ok);
        let mut pos2 = vec![0.0; 3 * nv];
        assert_eq!(tm_mesh_positions(m2, pos2.as_mut_ptr(), pos2.len()), TmStatus::Ok);
        assert_eq!(pos, pos2);
        let mut m3 = ptr::null_mut();
        assert_eq!(tm_mesh_load_obj(mpath.as_ptr(), &mut m3), TmStatus::Ok);
        assert_eq!(tm_mesh_vertex_count(m3), nv);

        tm_mesh_free(m3);
        tm_mesh_free(m2);
        tm_grid_free(g2);
        tm_mesh_free(mesh);
        tm_grid_free(grid);
    }
}

#[test]
fn offsets_are_clamped() {
    let grid = sphere_grid(4, 0.45);
    unsafe {
        let n = tm_grid_vertex_count(grid);
        let mut before = vec![0.0; 3 * n];
        assert_eq!(tm_grid_vertices(grid, before.as_mut_ptr(), before.len()), TmStatus::Ok);
        let offsets = vec![10.0; 3 * n];
        assert_eq!(tm_grid_apply_offsets(grid, offsets.as_ptr(), offsets.len()), TmStatus::Ok);
        let mut after = vec![0.0; 3 * n];
        assert_eq!(tm_grid_vertices(grid, after.as_mut_ptr(), after.len()), TmStatus::Ok);
        // Cell edge 0.5, bound 0.25.
        let max = before.iter().zip(&after).map(|(a, b)| (b - a).abs()).fold(0.0, f64::max);
        assert!((max - 0.25).abs() < 1e-12, "{max}");
        assert_eq!(tm_grid_apply_offsets(grid, offsets.as_ptr(), 4), TmStatus::InvalidArgument);
        tm_grid_free(grid);
    }
}

#[test]
fn metrics() {
    let a = [0.0, 0.0, 0.0];
    let b = [0.0, 0.0, 1.0];
    let mut out = -1.0;
    unsafe {
        assert_eq!(tm_chamfer(a.as_ptr(), 1, b.as_ptr(), 1, &mut out), TmStatus::Ok);
        assert_eq!(out, 2.0);
        assert_eq!(tm_epe(a.as_ptr(), b.as_ptr(), 1, &mut out), TmStatus::Ok);
        assert_eq!(out, 1.0);
        assert_eq!(tm_accuracy(a.as_ptr(), b.as_ptr(), 1, 0.5, &mut out), TmStatus::Ok);
        assert_eq!(out, 0.0);
        assert_eq!(tm_chamfer(a.as_ptr(), 1, b.as_ptr(), 0, &mut out), TmStatus::InvalidArgument);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut grid = ptr::null_mut();
        assert_eq!(tm_grid_new(0, &mut grid), TmStatus::InvalidArgument);
        assert!(grid.is_null());
        assert!(last_error().contains("resolution"), "{}", last_error());
        assert_eq!(tm_grid_new(4, ptr::null_mut()), TmStatus::NullPointer);
        assert_eq!(tm_march(ptr::null(), &mut ptr::null_mut()), TmStatus::NullPointer);
        let missing = CString::new("/nonexistent/grid.bin").unwrap();
        assert_eq!(tm_grid_load(missing.as_ptr(), &mut grid), TmStatus::Io);
        assert_eq!(tm_grid_vertex_count(ptr::null()), 0);
        tm_grid_free(ptr::null_mut());
        tm_mesh_free(ptr::null_mut());
    }
    assert!(!unsafe { CStr::from_ptr(tm_version()) }.to_bytes().is_empty());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tetmorph.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct TmGrid TmGrid;"));
    assert!(header.contains("TM_STATUS_NULL_POINTER = 7"));
}

fn static_lib() -> Option<PathBuf> {
    // target/<profile>/deps/<test binary> -> target/<profile>
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let lib = dir.join("libtetmorph_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_against_the_header() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let lib = static_lib().expect("static library is built alongside the tests");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("c_abi");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-D_DEFAULT_SOURCE")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c_abi.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
