//! Just-enough-interaction editing. A session holds a solved graph with its
//! residual flow; each correction point rewrites the costs of nearby columns
//! and the max-flow is re-solved from the previous residual.

pub mod server;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::columns::ColumnSet;
use crate::error::{Error, Result};
use crate::geom::{point_segment, v3, Vec3};
use crate::graph::{check_solution, GraphLayout, LogismosGraph, NodeDeltas, SurfaceSolution, COST_SCALE};
use crate::maxflow::FlowState;
use crate::session::{self, GRAPH_MAGIC, SESSION_MAGIC, SESSION_VERSION};
use crate::volume::{Volume3D, VolumeHeader};

pub const DEFAULT_RADIUS_MM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionPoint {
    pub position: [f64; 3],
    pub t: usize,
    pub object: usize,
    pub surface: usize,
    pub radius_mm: f64,
}

/// A correction with the costs it replaced, for undo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedCorrection {
    pub point: CorrectionPoint,
    pub previous: Vec<(u32, Vec<i64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeChange {
    pub t: usize,
    pub object: usize,
    pub surface: usize,
    pub column: usize,
    pub from: u32,
    pub to: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResult {
    pub solution_delta: Vec<NodeChange>,
    pub resolve_ms: f64,
    pub total_cost: f64,
}

/// Volume stored inside a session file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredVolume {
    pub header: VolumeHeader,
    pub data: Vec<f32>,
}

impl StoredVolume {
    pub fn from_volume(v: &Volume3D) -> Self {
        StoredVolume { header: v.header(), data: v.data().to_vec() }
    }

    pub fn to_volume(&self) -> Result<Volume3D> {
        Volume3D::new(self.header.dims, self.header.spacing_mm, self.header.origin_mm, self.data.clone())
    }
}

/// Everything needed to build and solve a graph from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub layout: GraphLayout,
    pub deltas: NodeDeltas,
    /// Scaled costs in variable order.
    pub costs: Vec<i64>,
    /// `columns[t][object]`.
    pub columns: Vec<Vec<ColumnSet>>,
}

impl GraphFile {
    pub fn from_graph(g: &LogismosGraph, columns: Vec<Vec<ColumnSet>>) -> Self {
        GraphFile { layout: g.layout.clone(), deltas: g.deltas.clone(), costs: g.costs_scaled().to_vec(), columns }
    }

    pub fn build(&self) -> Result<LogismosGraph> {
        if self.columns.len() != self.layout.n_times
            || self.columns.iter().any(|c| c.len() != self.layout.n_objects())
            || self.columns.iter().any(|per_t| per_t.iter().zip(&self.layout.n_columns).any(|(cs, &n)| cs.n_columns() != n || cs.n_nodes != self.layout.n_nodes))
        {
            return Err(Error::GeometryMismatch("graph columns do not match the layout".into()));
        }
        LogismosGraph::from_layout_scaled(self.layout.clone(), self.deltas.clone(), self.costs.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        session::encode(GRAPH_MAGIC, SESSION_VERSION, self)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        session::decode(GRAPH_MAGIC, SESSION_VERSION, b)
    }
}

/// Persistent part of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub graph: GraphFile,
    pub history: Vec<CorrectionPoint>,
    pub solution: SurfaceSolution,
    pub residual: FlowState,
    /// One volume per time-point, optional.
    pub volumes: Vec<StoredVolume>,
}

pub struct JeiSession {
    pub id: String,
    graph: LogismosGraph,
    base: GraphFile,
    solution: SurfaceSolution,
    history: Vec<AppliedCorrection>,
    volumes: Vec<Volume3D>,
}

fn diff(a: &SurfaceSolution, b: &SurfaceSolution) -> Vec<NodeChange> {
    let mut out = Vec::new();
    for (t, (pa, pb)) in a.k.iter().zip(&b.k).enumerate() {
        for (o, (oa, ob)) in pa.iter().zip(pb).enumerate() {
            for (s, (sa, sb)) in oa.iter().zip(ob).enumerate() {
                for (c, (&x, &y)) in sa.iter().zip(sb).enumerate() {
                    if x != y {
                        out.push(NodeChange { t, object: o, surface: s, column: c, from: x, to: y });
                    }
                }
            }
        }
    }
    out
}

/// Distance from `p` to the polyline of column `c`, with the nearest node.
fn column_distance(cs: &ColumnSet, c: usize, p: &Vec3) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for k in 0..cs.n_nodes - 1 {
        let (a, b) = (cs.node(c, k), cs.node(c, k + 1));
        let (d, t) = point_segment(p, &a, &b);
        if d < best.0 {
            best = (d, if t < 0.5 { k } else { k + 1 });
        }
    }
    if cs.n_nodes == 1 {
        best = ((cs.node(c, 0) - p).norm(), 0);
    }
    best
}

/// New scaled costs for the columns a correction touches: the nearest column
/// is forced to its node nearest the point, and columns within the radius
/// are blended toward the same node index with weight `1 - d / radius`.
pub fn correction_costs(g: &LogismosGraph, columns: &[Vec<ColumnSet>], cp: &CorrectionPoint) -> Result<Vec<(u32, Vec<i64>)>> {
    let l = &g.layout;
    if !(cp.radius_mm > 0.0) || !cp.radius_mm.is_finite() {
        return Err(Error::InvalidInput("correction radius must be positive".into()));
    }
    if cp.t >= l.n_times || cp.object >= l.n_objects() || cp.surface >= l.n_surfaces {
        return Err(Error::InvalidInput("correction target is not in the session graph".into()));
    }
    if cp.position.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("correction position must be finite".into()));
    }
    let cs = &columns[cp.t][cp.object];
    let p = v3(cp.position);
    let dists: Vec<(f64, usize)> = (0..cs.n_columns()).map(|c| column_distance(cs, c, &p)).collect();
    let (nearest, &(dmin, m)) = dists
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .ok_or_else(|| Error::InvalidInput("graph has no columns".into()))?;
    if dmin > cp.radius_mm {
        return Err(Error::InvalidInput(format!("correction point is {dmin:.2} mm from the nearest column, beyond the radius")));
    }
    let kk = cs.n_nodes;
    let mut out = Vec::new();
    for (c, &(d, _)) in dists.iter().enumerate() {
        if c != nearest && d > cp.radius_mm {
            continue;
        }
        let v = g.var(cp.t, cp.object, cp.surface, c);
        let old = g.column_costs(v);
        let top = old.iter().copied().max().unwrap_or(0).max(COST_SCALE as i64);
        let attract: Vec<i64> = (0..kk).map(|k| if k == m { 0 } else { top }).collect();
        let new = if c == nearest {
            attract
        } else {
            let w = 1.0 - d / cp.radius_mm;
            old.iter().zip(&attract).map(|(&a, &b)| ((1.0 - w) * a as f64 + w * b as f64).round() as i64).collect()
        };
        out.push((v as u32, new));
    }
    Ok(out)
}

impl JeiSession {
    /// Solves `graph` cold and opens a session on it.
    pub fn create(id: String, graph: GraphFile, volumes: Vec<Volume3D>) -> Result<Self> {
        let mut g = graph.build()?;
        let solution = g.solve_cold()?;
        Self::check_volumes(&graph, &volumes)?;
        Ok(JeiSession { id, graph: g, base: graph, solution, history: Vec::new(), volumes })
    }

    fn check_volumes(graph: &GraphFile, volumes: &[Volume3D]) -> Result<()> {
        if !volumes.is_empty() && volumes.len() != graph.layout.n_times {
            return Err(Error::InvalidInput("one volume per time-point required".into()));
        }
        Ok(())
    }

    /// Restores a saved session. The stored solution must be optimal for the
    /// replayed costs and satisfy every constraint.
    pub fn from_file(id: String, f: SessionFile) -> Result<Self> {
        let mut s = JeiSession { id, graph: f.graph.build()?, base: f.graph.clone(), solution: f.solution.clone(), history: Vec::new(), volumes: Vec::new() };
        for cp in &f.history {
            s.apply_costs(cp)?;
        }
        s.graph.network_mut().restore(f.residual)?;
        let check = s.graph.solve()?;
        if check.total_cost_scaled != f.solution.total_cost_scaled || !check_solution(&s.graph, &f.solution)?.is_empty() {
            return Err(Error::InvalidInput("stored solution is not optimal for the session costs".into()));
        }
        s.volumes = f.volumes.iter().map(|v| v.to_volume()).collect::<Result<_>>()?;
        Self::check_volumes(&s.base, &s.volumes)?;
        Ok(s)
    }

    pub fn to_file(&self) -> SessionFile {
        SessionFile {
            graph: self.base.clone(),
            history: self.history.iter().map(|h| h.point).collect(),
            solution: self.solution.clone(),
            residual: self.graph.network().state(),
            volumes: self.volumes.iter().map(StoredVolume::from_volume).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        session::encode(SESSION_MAGIC, SESSION_VERSION, &self.to_file())
    }

    pub fn from_bytes(id: String, b: &[u8]) -> Result<Self> {
        Self::from_file(id, session::decode(SESSION_MAGIC, SESSION_VERSION, b)?)
    }

    /// Hash over the graph, history, solution and volumes.
    pub fn state_hash(&self) -> Result<String> {
        let f = self.to_file();
        session::state_hash(&(&f.graph, &f.history, &f.solution, &f.volumes))
    }

    pub fn solution(&self) -> &SurfaceSolution {
        &self.solution
    }

    pub fn graph(&self) -> &LogismosGraph {
        &self.graph
    }

    pub fn columns(&self) -> &[Vec<ColumnSet>] {
        &self.base.columns
    }

    pub fn volumes(&self) -> &[Volume3D] {
        &self.volumes
    }

    pub fn history(&self) -> Vec<CorrectionPoint> {
        self.history.iter().map(|h| h.point).collect()
    }

    fn apply_costs(&mut self, cp: &CorrectionPoint) -> Result<()> {
        let changes = correction_costs(&self.graph, &self.base.columns, cp)?;
        let mut previous = Vec::with_capacity(changes.len());
        for (v, new) in changes {
            previous.push((v, self.graph.column_costs(v as usize).to_vec()));
            self.graph.set_column_costs_scaled(v as usize, &new)?;
        }
        self.history.push(AppliedCorrection { point: *cp, previous });
        Ok(())
    }

    fn resolve(&mut self, start: Instant) -> Result<EditResult> {
        let sol = self.graph.solve()?;
        let resolve_ms = start.elapsed().as_secs_f64() * 1e3;
        let delta = diff(&self.solution, &sol);
        self.solution = sol;
        Ok(EditResult { solution_delta: delta, resolve_ms, total_cost: self.solution.total_cost })
    }

    pub fn apply_correction(&mut self, cp: &CorrectionPoint) -> Result<EditResult> {
        let start = Instant::now();
        self.apply_costs(cp)?;
        match self.resolve(start) {
            Ok(r) => Ok(r),
            Err(e) => {
                self.revert_last()?;
                Err(e)
            }
        }
    }

    fn revert_last(&mut self) -> Result<()> {
        let last = self.history.pop().ok_or_else(|| Error::InvalidInput("no correction to undo".into()))?;
        for (v, old) in last.previous.iter().rev() {
            self.graph.set_column_costs_scaled(*v as usize, old)?;
        }
        Ok(())
    }

    pub fn undo(&mut self) -> Result<EditResult> {
        let start = Instant::now();
        self.revert_last()?;
        self.resolve(start)
    }

    /// Cold solve of the current costs on a copy of the graph.
    pub fn cold_solution(&self) -> Result<SurfaceSolution> {
        let mut g = self.graph.clone();
        g.solve_cold()
    }

    /// 8-bit windowed slice with contours of every surface at time `t`.
    pub fn slice(&self, t: usize, axis: usize, index: usize, window: Option<(f64, f64)>) -> Result<Slice> {
        let vol = self.volumes.get(t).ok_or_else(|| Error::NotFound(format!("no volume for time-point {t}")))?;
        let mut img = slice_image(vol, axis, index, window)?;
        let value = vol.origin()[axis] + index as f64 * vol.spacing()[axis];
        let (ua, va) = plane_axes(axis);
        let meshes = crate::graph::solution_to_meshes(&self.solution, &self.base.columns)?;
        for ((tt, o, s), m) in meshes {
            if tt != t {
                continue;
            }
            for line in m.slice_polylines(axis, value) {
                img.contours.push(Contour { object: o, surface: s, points: line.iter().map(|p| [p[ua], p[va]]).collect() });
            }
        }
        Ok(img)
    }
}

/// In-plane axes for a slice normal to `axis`.
pub fn plane_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub object: usize,
    pub surface: usize,
    /// In-plane coordinates in mm.
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub contours: Vec<Contour>,
}

impl Slice {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
            w.write_image_data(&self.pixels).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(out)
    }
}

/// Windowed 8-bit slice; the default window is the volume's range.
pub fn slice_image(vol: &Volume3D, axis: usize, index: usize, window: Option<(f64, f64)>) -> Result<Slice> {
    let d = vol.dims();
    if axis > 2 || index >= d[axis] {
        return Err(Error::InvalidInput(format!("slice {index} on axis {axis} is out of range")));
    }
    let (lo, hi) = match window {
        Some(w) => w,
        None => {
            let (a, b) = vol.min_max();
            (a as f64, b as f64)
        }
    };
    if !(hi > lo) {
        return Err(Error::InvalidInput("window maximum must exceed its minimum".into()));
    }
    let (ua, va) = plane_axes(axis);
    let (w, h) = (d[ua], d[va]);
    let mut pixels = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let mut ijk = [0usize; 3];
            ijk[axis] = index;
            ijk[ua] = i;
            ijk[va] = j;
            let v = vol.get(ijk[0], ijk[1], ijk[2]) as f64;
            pixels.push(((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(Slice { width: w, height: h, pixels, contours: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, ConstraintSpec, CostTable};
    use crate::mesh::icosphere;

    pub(crate) fn toy_graph(seed: u64) -> GraphFile {
        toy_graph_with(seed, 0.4)
    }

    fn toy_graph_with(seed: u64, smoothness_mm: f64) -> GraphFile {
        use rand::Rng;
        let mesh = icosphere(1);
        let m = mesh.with_vertices(mesh.vertices.iter().map(|v| v * 10.0 + Vec3::new(20.0, 20.0, 20.0)).collect()).unwrap();
        let cs = crate::columns::build_columns(&m, &crate::columns::ColumnParams::new(11, 0.5), 0).unwrap();
        let mut rng = crate::rng::stream(seed, "toy");
        let costs = CostTable { n_nodes: 11, costs: vec![vec![vec![(0..cs.n_columns() * 11).map(|_| rng.gen::<f64>()).collect()]]] };
        let mut spec = ConstraintSpec::gradient();
        spec.node_spacing_mm = 0.5;
        spec.smoothness_mm = vec![smoothness_mm];
        let g = build_graph(&[vec![cs.clone()]], &costs, &spec).unwrap();
        GraphFile::from_graph(&g, vec![vec![cs]])
    }

    #[test]
    fn correction_forces_node_and_undo_restores() {
        // loose smoothness so columns are effectively independent
        let gf = toy_graph_with(1, 10.0);
        let mut s = JeiSession::create("a".into(), gf.clone(), vec![]).unwrap();
        let before = s.solution().clone();
        let cs = &gf.columns[0][0];
        let p = cs.node(3, 9);
        let cp = CorrectionPoint { position: [p.x, p.y, p.z], t: 0, object: 0, surface: 0, radius_mm: 0.5 };
        s.apply_correction(&cp).unwrap();
        assert_eq!(s.solution().k[0][0][0][3], 9);
        assert_eq!(s.solution().total_cost_scaled, s.cold_solution().unwrap().total_cost_scaled);
        s.undo().unwrap();
        assert_eq!(s.solution().total_cost_scaled, before.total_cost_scaled);
        assert!(s.undo().is_err());
    }

    #[test]
    fn far_point_rejected_and_locality() {
        let gf = toy_graph(2);
        let mut s = JeiSession::create("a".into(), gf.clone(), vec![]).unwrap();
        let cp = CorrectionPoint { position: [500.0, 0.0, 0.0], t: 0, object: 0, surface: 0, radius_mm: 5.0 };
        assert!(s.apply_correction(&cp).is_err());
        let p = gf.columns[0][0].node(0, 5);
        let cp = CorrectionPoint { position: [p.x, p.y, p.z], t: 0, object: 0, surface: 0, radius_mm: 3.0 };
        let ch = correction_costs(s.graph(), &gf.columns, &cp).unwrap();
        for (v, _) in &ch {
            assert!(column_distance(&gf.columns[0][0], *v as usize, &p).0 <= 3.0);
        }
    }

    #[test]
    fn session_roundtrip_keeps_hash() {
        let gf = toy_graph(3);
        let vol = Volume3D::from_fn([8, 8, 8], [5.0; 3], [0.0; 3], |i, _, _| i as f32).unwrap();
        let mut s = JeiSession::create("a".into(), gf.clone(), vec![vol]).unwrap();
        let p = gf.columns[0][0].node(2, 2);
        s.apply_correction(&CorrectionPoint { position: [p.x, p.y, p.z], t: 0, object: 0, surface: 0, radius_mm: 4.0 }).unwrap();
        let b = s.to_bytes().unwrap();
        let s2 = JeiSession::from_bytes("b".into(), &b).unwrap();
        assert_eq!(s.state_hash().unwrap(), s2.state_hash().unwrap());
        assert_eq!(s.solution(), s2.solution());
    }

    #[test]
    fn slice_windowing() {
        let vol = Volume3D::from_fn([16, 4, 3], [1.0; 3], [0.0; 3], |i, _, _| (i * 17) as f32).unwrap();
        let sl = slice_image(&vol, 2, 1, Some((0.0, 255.0))).unwrap();
        for j in 0..4 {
            for i in 0..16 {
                assert_eq!(sl.pixels[j * 16 + i] as usize, i * 17);
            }
        }
        let flat = Volume3D::filled([5, 5, 5], [1.0; 3], [0.0; 3], 3.0).unwrap();
        let sl = slice_image(&flat, 2, 0, Some((0.0, 10.0))).unwrap();
        assert!(sl.pixels.iter().all(|&p| p == sl.pixels[0]));
        assert!(slice_image(&flat, 2, 5, None).is_err());
        assert!(sl.to_png().unwrap().starts_with(&[0x89, b'P', b'N', b'G']));
    }
}
