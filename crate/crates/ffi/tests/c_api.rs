use std::ffi::{CStr, CString};
use std::ptr;

use logismos::columns::{build_columns, ColumnParams};
use logismos::graph::{build_graph, ConstraintSpec, CostTable};
use logismos::jei::GraphFile;
use logismos::mesh::icosphere;
use logismos::Vec3;
use logismos_ffi::*;

fn graph_bytes() -> Vec<u8> {
    let m = icosphere(1);
    let m = m.with_vertices(m.vertices.iter().map(|v| v * 10.0 + Vec3::new(20.0, 20.0, 20.0)).collect()).unwrap();
    let cs = build_columns(&m, &ColumnParams::new(9, 0.5), 0).unwrap();
    let n = cs.n_columns();
    // cheapest node is 4 everywhere
    let costs = (0..n * 9).map(|i| ((i % 9) as f64 - 4.0).abs()).collect();
    let table = CostTable { n_nodes: 9, costs: vec![vec![vec![costs]]] };
    let mut spec = ConstraintSpec::gradient();
    spec.node_spacing_mm = 0.5;
    spec.smoothness_mm = vec![1.0];
    let g = build_graph(&[vec![cs.clone()]], &table, &spec).unwrap();
    GraphFile::from_graph(&g, vec![vec![cs]]).to_bytes().unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        lgs_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(lgs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn graph_solve_and_edit() {
    let b = graph_bytes();
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(lgs_graph_from_bytes(b.as_ptr(), b.len(), &mut g), LgsStatus::Ok);
        let (mut nc, mut nn) = (0usize, 0usize);
        assert_eq!(lgs_graph_shape(g, 0, 0, &mut nc, &mut nn), LgsStatus::Ok);
        assert_eq!(nn, 9);
        let mut sol = ptr::null_mut();
        assert_eq!(lgs_graph_solve(g, &mut sol), LgsStatus::Ok);
        let mut len = 0usize;
        assert_eq!(lgs_solution_surface(sol, 0, 0, 0, ptr::null_mut(), 0, &mut len), LgsStatus::Ok);
        assert_eq!(len, nc);
        let mut ks = vec![0u32; len];
        assert_eq!(lgs_solution_surface(sol, 0, 0, 0, ks.as_mut_ptr(), ks.len(), &mut len), LgsStatus::Ok);
        assert!(ks.iter().all(|&k| k == 4));
        let mut nv = 1usize;
        assert_eq!(lgs_solution_violations(g, sol, &mut nv), LgsStatus::Ok);
        assert_eq!(nv, 0);

        // pull column 0 to node 6; smoothness of two nodes keeps neighbours within reach
        let c: Vec<f64> = (0..9).map(|k| if k == 6 { -100.0 } else { 0.0 }).collect();
        assert_eq!(lgs_graph_set_column_costs(g, 0, 0, 0, 0, c.as_ptr(), c.len()), LgsStatus::Ok);
        let mut sol2 = ptr::null_mut();
        assert_eq!(lgs_graph_solve(g, &mut sol2), LgsStatus::Ok);
        assert_eq!(lgs_solution_surface(sol2, 0, 0, 0, ks.as_mut_ptr(), ks.len(), &mut len), LgsStatus::Ok);
        assert_eq!(ks[0], 6);
        assert_eq!(lgs_solution_violations(g, sol2, &mut nv), LgsStatus::Ok);
        assert_eq!(nv, 0);

        let dir = tempfile::tempdir().unwrap();
        let p = CString::new(dir.path().join("s.json").to_str().unwrap()).unwrap();
        assert_eq!(lgs_solution_write_mesh(g, sol2, 0, 0, 0, p.as_ptr()), LgsStatus::Ok);
        let mesh = logismos::mesh::TriMesh::read_json(&dir.path().join("s.json")).unwrap();
        assert_eq!(mesh.n_vertices(), nc);

        lgs_solution_free(sol);
        lgs_solution_free(sol2);
        lgs_graph_free(g);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(lgs_graph_from_bytes(b"nope".as_ptr(), 4, &mut g), LgsStatus::Format);
        assert!(g.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(lgs_graph_solve(ptr::null_mut(), &mut ptr::null_mut()), LgsStatus::NullPointer);
        assert!(last_error().contains("null"));

        let b = graph_bytes();
        assert_eq!(lgs_graph_from_bytes(b.as_ptr(), b.len(), &mut g), LgsStatus::Ok);
        assert_eq!(last_error(), "");
        let mut sol = ptr::null_mut();
        assert_eq!(lgs_graph_solve(g, &mut sol), LgsStatus::Ok);
        let mut len = 0;
        assert_eq!(lgs_solution_surface(sol, 0, 3, 0, ptr::null_mut(), 0, &mut len), LgsStatus::OutOfRange);
        let mut small = [0u32; 2];
        assert_eq!(lgs_solution_surface(sol, 0, 0, 0, small.as_mut_ptr(), 2, &mut len), LgsStatus::OutOfRange);
        let c = [0.0; 3];
        assert_eq!(lgs_graph_set_column_costs(g, 0, 0, 0, 0, c.as_ptr(), 3), LgsStatus::InvalidInput);
        let missing = CString::new("/nonexistent/x.lgsg").unwrap();
        let mut g2 = ptr::null_mut();
        assert_eq!(lgs_graph_read(missing.as_ptr(), &mut g2), LgsStatus::Io);
        lgs_solution_free(sol);
        lgs_graph_free(g);
        lgs_graph_free(ptr::null_mut());
    }
}

#[test]
fn volume_handle() {
    let dims = [4usize, 3, 2];
    let data: Vec<f32> = (0..24).map(|i| i as f32).collect();
    unsafe {
        let mut v = ptr::null_mut();
        assert_eq!(lgs_volume_new(dims.as_ptr(), [1.0; 3].as_ptr(), [0.0; 3].as_ptr(), data.as_ptr(), data.len(), &mut v), LgsStatus::Ok);
        let mut d = [0usize; 3];
        assert_eq!(lgs_volume_dims(v, d.as_mut_ptr()), LgsStatus::Ok);
        assert_eq!(d, dims);
        let mut x = 0.0;
        assert_eq!(lgs_volume_sample(v, 1.0, 1.0, 1.0, &mut x), LgsStatus::Ok);
        assert!(x.is_finite());
        lgs_volume_free(v);
        let mut bad = ptr::null_mut();
        assert_eq!(lgs_volume_new(dims.as_ptr(), [1.0; 3].as_ptr(), [0.0; 3].as_ptr(), data.as_ptr(), 5, &mut bad), LgsStatus::InvalidInput);
    }
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/logismos.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(h.contains(&format!("{name}(")), "{name} missing from header");
        }
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", concat!(env!("CARGO_MANIFEST_DIR"), "/include/logismos.h")])
        .output()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
