//! Triangle meshes: construction, topology queries, ray hits and plane slices.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{arr, v3, Affine, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Optional per-vertex integer labels.
    pub labels: Option<Vec<i32>>,
}

#[derive(Serialize, Deserialize)]
struct MeshFile {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<i32>>,
}

impl TriMesh {
    /// Validates indices and rejects degenerate (zero area) triangles.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for (f, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::InvalidInput(format!("triangle {f} references a missing vertex")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidInput(format!("triangle {f} repeats a vertex")));
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput("non-finite vertex".into()));
        }
        let m = TriMesh { vertices, triangles, labels: None };
        for f in 0..m.triangles.len() {
            if m.triangle_area(f) <= 1e-14 {
                return Err(Error::InvalidInput(format!("triangle {f} is degenerate")));
            }
        }
        Ok(m)
    }

    /// Like [`TriMesh::new`] but also requires a closed 2-manifold.
    pub fn new_watertight(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let m = Self::new(vertices, triangles)?;
        if !m.is_watertight() {
            return Err(Error::InvalidInput("mesh is not watertight".into()));
        }
        Ok(m)
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != self.vertices.len() {
            return Err(Error::InvalidInput("label count differs from vertex count".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn corners(&self, f: usize) -> (Vec3, Vec3, Vec3) {
        let t = self.triangles[f];
        (self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize])
    }

    pub fn triangle_area(&self, f: usize) -> f64 {
        let (a, b, c) = self.corners(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Every undirected edge must be shared by exactly two oppositely oriented triangles.
    pub fn is_watertight(&self) -> bool {
        let mut count: HashMap<(u32, u32), i32> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *count.entry((a, b)).or_default() += 1;
            }
        }
        count.iter().all(|(&(a, b), &c)| c == 1 && count.get(&(b, a)) == Some(&1))
    }

    /// Sorted unique undirected edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut e: Vec<(u32, u32)> = Vec::with_capacity(self.triangles.len() * 3);
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                e.push((a.min(b), a.max(b)));
            }
        }
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Sorted neighbour lists per vertex.
    pub fn neighbors(&self) -> Vec<Vec<u32>> {
        let mut nb = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            nb[a as usize].push(b);
            nb[b as usize].push(a);
        }
        for l in &mut nb {
            l.sort_unstable();
        }
        nb
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut n = vec![Vec3::zeros(); self.vertices.len()];
        for t in &self.triangles {
            let (a, b, c) = (self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]);
            let fnrm = (b - a).cross(&(c - a));
            for &i in t {
                n[i as usize] += fnrm;
            }
        }
        for v in &mut n {
            let l = v.norm();
            if l > 0.0 {
                *v /= l;
            }
        }
        n
    }

    /// One third of the incident triangle areas per vertex.
    pub fn vertex_areas(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.vertices.len()];
        for f in 0..self.triangles.len() {
            let ar = self.triangle_area(f) / 3.0;
            for &i in &self.triangles[f] {
                a[i as usize] += ar;
            }
        }
        a
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|f| self.triangle_area(f)).sum()
    }

    /// Signed enclosed volume; positive for outward-oriented closed meshes.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn centroid(&self) -> Vec3 {
        let s: Vec3 = self.vertices.iter().sum();
        s / self.vertices.len().max(1) as f64
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn transformed(&self, t: &Affine) -> TriMesh {
        let flip = t.m.determinant() < 0.0;
        TriMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            triangles: if flip { self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect() } else { self.triangles.clone() },
            labels: self.labels.clone(),
        }
    }

    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<TriMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::InvalidInput("vertex count differs".into()));
        }
        Ok(TriMesh { vertices, triangles: self.triangles.clone(), labels: self.labels.clone() })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = MeshFile {
            vertices: self.vertices.iter().map(arr).collect(),
            triangles: self.triangles.clone(),
            labels: self.labels.clone(),
        };
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, serde_json::to_vec(&f)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<TriMesh> {
        let f: MeshFile = serde_json::from_slice(&fs::read(path)?)?;
        let m = TriMesh::new(f.vertices.iter().map(|a| v3(*a)).collect(), f.triangles)?;
        match f.labels {
            Some(l) => m.with_labels(l),
            None => Ok(m),
        }
    }

    /// Line segments where the mesh crosses the plane `p[axis] == value`.
    pub fn slice_segments(&self, axis: usize, value: f64) -> Vec<(Vec3, Vec3)> {
        let mut out = Vec::new();
        for t in &self.triangles {
            let p = [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]];
            // nudge exact hits so every vertex is strictly on one side
            let d: Vec<f64> = p.iter().map(|q| { let s = q[axis] - value; if s == 0.0 { 1e-12 } else { s } }).collect();
            let mut pts = Vec::with_capacity(2);
            for e in 0..3 {
                let (i, j) = (e, (e + 1) % 3);
                if (d[i] > 0.0) != (d[j] > 0.0) {
                    let s = d[i] / (d[i] - d[j]);
                    pts.push(p[i] + (p[j] - p[i]) * s);
                }
            }
            if pts.len() == 2 {
                out.push((pts[0], pts[1]));
            }
        }
        out
    }

    /// Plane slice chained into polylines.
    pub fn slice_polylines(&self, axis: usize, value: f64) -> Vec<Vec<Vec3>> {
        chain_segments(&self.slice_segments(axis, value), 1e-9)
    }

    /// First intersection of segment `a-b` with the mesh, as the parameter
    /// along the segment. Brute force; use [`TriangleGrid`] for many queries.
    pub fn segment_hit(&self, a: &Vec3, b: &Vec3) -> Option<f64> {
        let mut best: Option<f64> = None;
        for f in 0..self.triangles.len() {
            let (p, q, r) = self.corners(f);
            if let Some(t) = segment_triangle(a, b, &p, &q, &r) {
                if best.map_or(true, |bt| t < bt) {
                    best = Some(t);
                }
            }
        }
        best
    }
}

/// Möller–Trumbore segment/triangle intersection; returns parameter in `[0,1]`.
pub fn segment_triangle(a: &Vec3, b: &Vec3, p: &Vec3, q: &Vec3, r: &Vec3) -> Option<f64> {
    let dir = b - a;
    let e1 = q - p;
    let e2 = r - p;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = a - p;
    let u = inv * s.dot(&h);
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qv = s.cross(&e1);
    let v = inv * dir.dot(&qv);
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = inv * e2.dot(&qv);
    if (0.0..=1.0).contains(&t) {
        Some(t)
    } else {
        None
    }
}

/// Joins segments sharing endpoints (within `tol`) into polylines.
pub fn chain_segments(segs: &[(Vec3, Vec3)], tol: f64) -> Vec<Vec<Vec3>> {
    let key = |p: &Vec3| {
        let q = 1.0 / tol.max(1e-12);
        ((p.x * q).round() as i64, (p.y * q).round() as i64, (p.z * q).round() as i64)
    };
    let mut by_end: BTreeMap<(i64, i64, i64), Vec<(usize, bool)>> = BTreeMap::new();
    for (i, (a, b)) in segs.iter().enumerate() {
        by_end.entry(key(a)).or_default().push((i, false));
        by_end.entry(key(b)).or_default().push((i, true));
    }
    let mut used = vec![false; segs.len()];
    let mut lines = Vec::new();
    for s in 0..segs.len() {
        if used[s] {
            continue;
        }
        used[s] = true;
        let mut line = vec![segs[s].0, segs[s].1];
        // extend forward, then backward
        for dir in 0..2 {
            loop {
                let end = if dir == 0 { *line.last().unwrap() } else { line[0] };
                let next = by_end.get(&key(&end)).and_then(|c| c.iter().find(|(i, _)| !used[*i]).copied());
                match next {
                    Some((i, at_b)) => {
                        used[i] = true;
                        let other = if at_b { segs[i].0 } else { segs[i].1 };
                        if dir == 0 {
                            line.push(other);
                        } else {
                            line.insert(0, other);
                        }
                    }
                    None => break,
                }
            }
        }
        lines.push(line);
    }
    lines
}

/// Geodesic sphere of unit radius by repeated subdivision of an icosahedron.
/// Level `l` has `10 * 4^l + 2` vertices.
pub fn icosphere(level: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|a| v3(*a).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let k = (a.min(b), a.max(b));
            *mid.entry(k).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        for f in &faces {
            let a = midpoint(f[0], f[1], &mut verts);
            let b = midpoint(f[1], f[2], &mut verts);
            let c = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], a, c]);
            next.push([f[1], b, a]);
            next.push([f[2], c, b]);
            next.push([a, b, c]);
        }
        faces = next;
    }
    TriMesh { vertices: verts, triangles: faces, labels: None }
}

/// Uniform grid over triangle bounding boxes for fast segment queries.
pub struct TriangleGrid<'a> {
    mesh: &'a TriMesh,
    lo: Vec3,
    cell: f64,
    n: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl<'a> TriangleGrid<'a> {
    pub fn new(mesh: &'a TriMesh, cell: f64) -> Self {
        let (lo, hi) = mesh.bounds();
        let lo = lo - Vec3::repeat(cell);
        let hi = hi + Vec3::repeat(cell);
        let n = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).ceil() as usize).max(1));
        let mut cells = vec![Vec::new(); n[0] * n[1] * n[2]];
        let g = TriangleGrid { mesh, lo, cell, n, cells: Vec::new() };
        for f in 0..mesh.triangles.len() {
            let (a, b, c) = mesh.corners(f);
            let (l, h) = (a.inf(&b).inf(&c), a.sup(&b).sup(&c));
            let (il, ih) = (g.cell_of(&l), g.cell_of(&h));
            for k in il[2]..=ih[2] {
                for j in il[1]..=ih[1] {
                    for i in il[0]..=ih[0] {
                        cells[i + n[0] * (j + n[1] * k)].push(f as u32);
                    }
                }
            }
        }
        TriangleGrid { cells, ..g }
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| (((p[a] - self.lo[a]) / self.cell).floor().max(0.0) as usize).min(self.n[a] - 1))
    }

    /// Smallest segment parameter of a hit, if any.
    pub fn segment_hit(&self, a: &Vec3, b: &Vec3) -> Option<f64> {
        let (il, ih) = (self.cell_of(&a.inf(b)), self.cell_of(&a.sup(b)));
        let mut best: Option<f64> = None;
        for k in il[2]..=ih[2] {
            for j in il[1]..=ih[1] {
                for i in il[0]..=ih[0] {
                    for &f in &self.cells[i + self.n[0] * (j + self.n[1] * k)] {
                        let (p, q, r) = self.mesh.corners(f as usize);
                        if let Some(t) = segment_triangle(a, b, &p, &q, &r) {
                            if best.map_or(true, |bt| t < bt) {
                                best = Some(t);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_closure() {
        for (l, nv) in [(0, 12), (1, 42), (3, 642)] {
            let m = icosphere(l);
            assert_eq!(m.n_vertices(), nv);
            assert_eq!(m.triangles.len(), 20 * 4usize.pow(l));
            assert!(m.is_watertight());
            assert!(m.signed_volume() > 0.0);
        }
    }

    #[test]
    fn rejects_degenerate() {
        let v = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 2]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let v = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        assert!(TriMesh::new_watertight(v, vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn sphere_slice_is_closed_circle() {
        let m = icosphere(3).transformed(&Affine { m: nalgebra::Matrix3::identity() * 10.0, t: Vec3::zeros() });
        let lines = m.slice_polylines(2, 0.3);
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        assert!((l[0] - l[l.len() - 1]).norm() < 1e-6);
        for p in l {
            assert!((p.z - 0.3).abs() < 1e-9);
            assert!((p.norm() - 10.0).abs() < 0.2);
        }
    }

    #[test]
    fn grid_hits_match_brute_force() {
        let m = icosphere(2).transformed(&Affine { m: nalgebra::Matrix3::identity() * 5.0, t: Vec3::new(1.0, 0.0, 0.0) });
        let g = TriangleGrid::new(&m, 1.0);
        for i in 0..50 {
            let d = Vec3::new((i as f64 * 0.37).sin(), (i as f64 * 0.91).cos(), (i as f64 * 0.13).sin()).normalize();
            let a = Vec3::new(1.0, 0.0, 0.0);
            let b = a + d * 7.0;
            let (x, y) = (m.segment_hit(&a, &b), g.segment_hit(&a, &b));
            assert_eq!(x.is_some(), y.is_some());
            assert!((x.unwrap() - y.unwrap()).abs() < 1e-12);
        }
    }
}
