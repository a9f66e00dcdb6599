//! C ABI over the segmentation core.
//!
//! Every entry point returns an [`LgsStatus`]. On failure the message is kept
//! per thread and can be fetched with [`lgs_last_error_message`]. Handles are
//! opaque; each `*_free` accepts null.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use logismos::graph::{check_solution, LogismosGraph, SurfaceSolution};
use logismos::jei::GraphFile;
use logismos::volume::Volume3D;
use logismos::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LgsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Format = 4,
    Infeasible = 5,
    Geometry = 6,
    OutOfRange = 7,
    Panic = 8,
    Other = 9,
}

pub struct LgsVolume(Volume3D);

pub struct LgsGraph {
    file: GraphFile,
    graph: LogismosGraph,
}

pub struct LgsSolution(SurfaceSolution);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> LgsStatus {
    match e {
        Error::Io(_) => LgsStatus::Io,
        Error::Format(_) => LgsStatus::Format,
        Error::InvalidInput(_) | Error::NotFound(_) | Error::Unsupported(_) => LgsStatus::InvalidInput,
        Error::Infeasible => LgsStatus::Infeasible,
        Error::GeometryMismatch(_) | Error::IntersectingColumns { .. } | Error::DegenerateField { .. } => LgsStatus::Geometry,
        _ => LgsStatus::Other,
    }
}

struct Fail(LgsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LgsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LgsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LgsStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {m}"));
            LgsStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(LgsStatus::InvalidInput, "path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lgs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lgs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let m = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = m.len().min(len - 1);
            ptr::copy_nonoverlapping(m.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        m.len()
    })
}

/// Builds a volume from `nx*ny*nz` samples in x-fastest order.
///
/// # Safety
/// `dims`, `spacing` and `origin` point to three values each; `data` to
/// `len` floats; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lgs_volume_new(
    dims: *const usize,
    spacing: *const f64,
    origin: *const f64,
    data: *const f32,
    len: usize,
    out: *mut *mut LgsVolume,
) -> LgsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if dims.is_null() || spacing.is_null() || origin.is_null() || data.is_null() {
            return Err(null("argument"));
        }
        let d = *(dims as *const [usize; 3]);
        let s = *(spacing as *const [f64; 3]);
        let o = *(origin as *const [f64; 3]);
        let v = std::slice::from_raw_parts(data, len).to_vec();
        *out = boxed(LgsVolume(Volume3D::new(d, s, o, v)?));
        Ok(())
    })
}

/// Reads a volume written by the toolkit (`.vol` payload with its `.json`
/// header next to it).
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lgs_volume_read(path: *const c_char, out: *mut *mut LgsVolume) -> LgsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = boxed(LgsVolume(Volume3D::read(path_arg(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `vol` is a live handle; `dims` points to three writable values.
#[no_mangle]
pub unsafe extern "C" fn lgs_volume_dims(vol: *const LgsVolume, dims: *mut usize) -> LgsStatus {
    guard(|| {
        let v = handle(vol, "volume")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let d = v.0.dims();
        ptr::copy_nonoverlapping(d.as_ptr(), dims, 3);
        Ok(())
    })
}

/// Trilinear sample at a world position in mm.
///
/// # Safety
/// `vol` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lgs_volume_sample(vol: *const LgsVolume, x: f64, y: f64, z: f64, out: *mut f64) -> LgsStatus {
    guard(|| {
        let v = handle(vol, "volume")?;
        *out_arg(out, "out")? = v.0.sample(&logismos::geom::Vec3::new(x, y, z));
        Ok(())
    })
}

/// # Safety
/// `vol` is null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn lgs_volume_free(vol: *mut LgsVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

fn graph_from_file(file: GraphFile) -> Result<LgsGraph, Fail> {
    let graph = file.build()?;
    Ok(LgsGraph { file, graph })
}

/// Loads a graph file (`graph.lgsg` from a segmentation run).
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lgs_graph_read(path: *const c_char, out: *mut *mut LgsGraph) -> LgsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let b = std::fs::read(path_arg(path)?).map_err(Error::from)?;
        *out = boxed(graph_from_file(GraphFile::from_bytes(&b)?)?);
        Ok(())
    })
}

/// # Safety
/// `bytes` points to `len` readable bytes; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lgs_graph_from_bytes(bytes: *const u8, len: usize, out: *mut *mut LgsGraph) -> LgsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let b = std::slice::from_raw_parts(bytes, len);
        *out = boxed(graph_from_file(GraphFile::from_bytes(b)?)?);
        Ok(())
    })
}

/// Number of columns and nodes per column of time-point `t`, object `o`.
///
/// # Safety
/// `g` is a live handle; `n_columns` and `n_nodes` are writable.
#[no_mangle]
pub unsafe extern "C" fn lgs_graph_shape(g: *const LgsGraph, t: usize, o: usize, n_columns: *mut usize, n_nodes: *mut usize) -> LgsStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        let cs = g
            .file
            .columns
            .get(t)
            .and_then(|v| v.get(o))
            .ok_or_else(|| Fail(LgsStatus::OutOfRange, format!("no columns for t={t}, object={o}")))?;
        *out_arg(n_columns, "n_columns")? = cs.n_columns();
        *out_arg(n_nodes, "n_nodes")? = cs.n_nodes;
        Ok(())
    })
}

/// Replaces the node costs of one column with `n_nodes` values. The next
/// solve reuses the previous flow.
///
/// # Safety
/// `g` is a live handle; `costs` points to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lgs_graph_set_column_costs(
    g: *mut LgsGraph,
    t: usize,
    o: usize,
    s: usize,
    column: usize,
    costs: *const f64,
    len: usize,
) -> LgsStatus {
    guard(|| {
        let g = g.as_mut().ok_or_else(|| null("graph"))?;
        if costs.is_null() {
            return Err(null("costs"));
        }
        let cs = g.file.columns.get(t).and_then(|v| v.get(o)).ok_or_else(|| Fail(LgsStatus::OutOfRange, "no such object".into()))?;
        let n_surfaces = g.graph.layout.n_surfaces;
        if column >= cs.n_columns() || s >= n_surfaces {
            return Err(Fail(LgsStatus::OutOfRange, format!("column {column} surface {s} out of range")));
        }
        let v = g.graph.var(t, o, s, column);
        g.graph.set_column_costs(v, std::slice::from_raw_parts(costs, len))?;
        Ok(())
    })
}

/// Solves for the minimum-cost surfaces.
///
/// # Safety
/// `g` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lgs_graph_solve(g: *mut LgsGraph, out: *mut *mut LgsSolution) -> LgsStatus {
    guard(|| {
        let g = g.as_mut().ok_or_else(|| null("graph"))?;
        let out = out_arg(out, "out")?;
        *out = boxed(LgsSolution(g.graph.solve()?));
        Ok(())
    })
}

/// # Safety
/// `g` is null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn lgs_graph_free(g: *mut LgsGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Copies the chosen node index of every column of surface `(t, o, s)` into
/// `buf`. `len_out` receives the column count; with a null `buf` only the
/// count is reported.
///
/// # Safety
/// `sol` is a live handle; `buf` is null or holds `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn lgs_solution_surface(
    sol: *const LgsSolution,
    t: usize,
    o: usize,
    s: usize,
    buf: *mut u32,
    cap: usize,
    len_out: *mut usize,
) -> LgsStatus {
    guard(|| {
        let sol = handle(sol, "solution")?;
        let ks = sol
            .0
            .k
            .get(t)
            .and_then(|v| v.get(o))
            .and_then(|v| v.get(s))
            .ok_or_else(|| Fail(LgsStatus::OutOfRange, format!("no surface t={t}, object={o}, surface={s}")))?;
        *out_arg(len_out, "len_out")? = ks.len();
        if !buf.is_null() {
            if cap < ks.len() {
                return Err(Fail(LgsStatus::OutOfRange, format!("buffer holds {cap}, need {}", ks.len())));
            }
            ptr::copy_nonoverlapping(ks.as_ptr(), buf, ks.len());
        }
        Ok(())
    })
}

/// Number of hard constraints the solution breaks; zero for solver output.
///
/// # Safety
/// Both handles are live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lgs_solution_violations(g: *const LgsGraph, sol: *const LgsSolution, out: *mut usize) -> LgsStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        let sol = handle(sol, "solution")?;
        *out_arg(out, "out")? = check_solution(&g.graph, &sol.0)?.len();
        Ok(())
    })
}

/// Writes surface `(t, o, s)` as a JSON mesh.
///
/// # Safety
/// Both handles are live; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lgs_solution_write_mesh(
    g: *const LgsGraph,
    sol: *const LgsSolution,
    t: usize,
    o: usize,
    s: usize,
    path: *const c_char,
) -> LgsStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        let sol = handle(sol, "solution")?;
        let path = path_arg(path)?;
        let cs = g.file.columns.get(t).and_then(|v| v.get(o)).ok_or_else(|| Fail(LgsStatus::OutOfRange, "no such object".into()))?;
        let ks = sol.0.k.get(t).and_then(|v| v.get(o)).and_then(|v| v.get(s)).ok_or_else(|| Fail(LgsStatus::OutOfRange, "no such surface".into()))?;
        cs.surface(ks)?.write_json(path)?;
        Ok(())
    })
}

/// # Safety
/// `sol` is null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn lgs_solution_free(sol: *mut LgsSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}
