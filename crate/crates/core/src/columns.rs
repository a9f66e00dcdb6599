//! Non-intersecting columns traced along electric lines of force.
//!
//! Unit charges sit on every mesh vertex. Field lines leave each charge in
//! all directions; the column follows the one that starts along the outward
//! normal and the one that starts along the inward normal. Field lines do
//! not cross, so neither do the columns. The traced polyline is resampled
//! at equal chord length into `K` nodes with the vertex at node `k0`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{segment_distance, Vec3};
use crate::mesh::TriMesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnParams {
    /// Nodes per column.
    pub n_nodes: usize,
    /// Arc length between consecutive nodes (mm).
    pub spacing_mm: f64,
    /// Fraction of the column inside the mesh.
    pub inner_fraction: f64,
    /// Field exponent `m` in `E ~ r / |r|^(m+1)`. With the Coulomb value 2 the
    /// field inside a closed shell nearly cancels and inward lines escape
    /// between the charges; steeper fields keep them pointing inward.
    pub field_exponent: f64,
    /// Integration step as a fraction of the node spacing.
    pub step_fraction: f64,
    /// Minimum allowed distance between columns (mm).
    pub min_separation_mm: f64,
    /// Start offset along the normal, as a fraction of the node spacing.
    pub start_offset_fraction: f64,
}

impl ColumnParams {
    pub fn new(n_nodes: usize, spacing_mm: f64) -> Self {
        ColumnParams {
            n_nodes,
            spacing_mm,
            inner_fraction: 1.0 / 3.0,
            field_exponent: 4.0,
            step_fraction: 0.25,
            min_separation_mm: 1e-6,
            start_offset_fraction: 0.25,
        }
    }

    /// Column length in mm, `K * spacing`.
    pub fn length_mm(&self) -> f64 {
        self.n_nodes as f64 * self.spacing_mm
    }

    /// Node index of the mesh vertex.
    pub fn vertex_node(&self) -> usize {
        ((self.n_nodes - 1) as f64 * self.inner_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::InvalidInput("columns need at least two nodes".into()));
        }
        if !(self.spacing_mm > 0.0) || !(self.field_exponent > 0.0) || !(self.step_fraction > 0.0) {
            return Err(Error::InvalidInput("spacing, exponent and step must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.inner_fraction) {
            return Err(Error::InvalidInput("inner fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Columns of one object: `K` node positions per mesh vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSet {
    pub object: usize,
    pub n_nodes: usize,
    pub spacing_mm: f64,
    /// Node index at which each column crosses its base mesh.
    pub vertex_node: usize,
    /// Node positions, column-major: `nodes[c * K + k]`.
    pub nodes: Vec<[f64; 3]>,
    /// Column adjacency inherited from the mesh edges, `a < b`.
    pub edges: Vec<(u32, u32)>,
    /// Base mesh triangles, used to rebuild surfaces from node choices.
    pub triangles: Vec<[u32; 3]>,
}

impl ColumnSet {
    pub fn n_columns(&self) -> usize {
        self.nodes.len() / self.n_nodes
    }

    #[inline]
    pub fn node(&self, c: usize, k: usize) -> Vec3 {
        let p = self.nodes[c * self.n_nodes + k];
        Vec3::new(p[0], p[1], p[2])
    }

    pub fn column(&self, c: usize) -> Vec<Vec3> {
        (0..self.n_nodes).map(|k| self.node(c, k)).collect()
    }

    /// Unit vector from the innermost to the outermost node.
    pub fn direction(&self, c: usize) -> Vec3 {
        (self.node(c, self.n_nodes - 1) - self.node(c, 0)).normalize()
    }

    /// Position along the column at fractional node index `f`.
    pub fn point_at(&self, c: usize, f: f64) -> Vec3 {
        let f = f.clamp(0.0, (self.n_nodes - 1) as f64);
        let k = (f.floor() as usize).min(self.n_nodes - 2);
        let t = f - k as f64;
        self.node(c, k) * (1.0 - t) + self.node(c, k + 1) * t
    }

    /// Surface through node `ks[c]` of every column.
    pub fn surface(&self, ks: &[u32]) -> Result<TriMesh> {
        if ks.len() != self.n_columns() {
            return Err(Error::InvalidInput("one node index per column required".into()));
        }
        let v = ks.iter().enumerate().map(|(c, &k)| self.node(c, k as usize)).collect();
        Ok(TriMesh { vertices: v, triangles: self.triangles.clone(), labels: None })
    }

    /// Surface at fractional node positions.
    pub fn surface_at(&self, f: &[f64]) -> TriMesh {
        let v = f.iter().enumerate().map(|(c, &x)| self.point_at(c, x)).collect();
        TriMesh { vertices: v, triangles: self.triangles.clone(), labels: None }
    }

    /// Fractional node index where each column first crosses `mesh`
    /// (searching outward from the innermost node), if it does.
    pub fn intersect_mesh(&self, mesh: &TriMesh) -> Vec<Option<f64>> {
        let grid = crate::mesh::TriangleGrid::new(mesh, 2.0);
        (0..self.n_columns())
            .map(|c| {
                for k in 0..self.n_nodes - 1 {
                    if let Some(t) = grid.segment_hit(&self.node(c, k), &self.node(c, k + 1)) {
                        return Some(k as f64 + t);
                    }
                }
                None
            })
            .collect()
    }

    /// Smallest distance between any two distinct columns, with the pair.
    pub fn min_pair_distance(&self, within_mm: f64) -> Option<(usize, usize, f64)> {
        columns_min_distance(self, within_mm)
    }
}

/// Field at `x` from unit charges at `charges`, with the squared distance
/// to the nearest charge.
#[inline]
fn field(charges: &[Vec3], x: &Vec3, m: f64) -> Option<(Vec3, f64)> {
    let mut e = Vec3::zeros();
    let half = (m + 1.0) / 2.0;
    let mut near = f64::INFINITY;
    for c in charges {
        let d = x - c;
        let r2 = d.norm_squared();
        if r2 < 1e-20 {
            return None;
        }
        near = near.min(r2);
        let w = if m == 4.0 {
            1.0 / (r2 * r2 * r2.sqrt())
        } else if m == 2.0 {
            1.0 / (r2 * r2.sqrt())
        } else {
            r2.powf(-half)
        };
        e += d * w;
    }
    Some((e, near))
}

/// Largest integration step (mm). Steps also stay below a quarter of the
/// distance to the nearest charge.
const MAX_STEP_MM: f64 = 0.2;

/// Follows the normalised field from `start` (sign +1 along the field, -1
/// against it) until the accumulated arc length reaches `length`. `h` is
/// the smallest step.
fn trace(charges: &[Vec3], start: Vec3, sign: f64, length: f64, h: f64, m: f64, init_dir: Vec3) -> Option<Vec<Vec3>> {
    let mut pts = vec![start];
    let mut x = start;
    let mut last = init_dir;
    let mut travelled = 0.0;
    let dir = |p: &Vec3, last: &Vec3| -> Option<(Vec3, f64)> {
        let (e, near) = field(charges, p, m)?;
        let e = e * sign;
        let n = e.norm();
        if n < 1e-9 || !n.is_finite() {
            Some((*last, near))
        } else {
            Some((e / n, near))
        }
    };
    let h_max = h.max(MAX_STEP_MM);
    let max_steps = (length / h).ceil() as usize * 4 + 16;
    for _ in 0..max_steps {
        if travelled >= length {
            break;
        }
        let (k1, near) = dir(&x, &last)?;
        let h = (0.25 * near.sqrt()).clamp(h, h_max);
        let (k2, _) = dir(&(x + k1 * (h / 2.0)), &k1)?;
        let (k3, _) = dir(&(x + k2 * (h / 2.0)), &k2)?;
        let (k4, _) = dir(&(x + k3 * h), &k3)?;
        let step = (k1 + k2 * 2.0 + k3 * 2.0 + k4) / 6.0;
        let nx = x + step * h;
        let seg = (nx - x).norm();
        if seg < 1e-12 {
            return None;
        }
        travelled += seg;
        last = (nx - x) / seg;
        x = nx;
        pts.push(x);
    }
    Some(pts)
}

/// Walks along a polyline emitting `n` points whose consecutive chord
/// distances are exactly `s`, extending past the end along the last segment.
fn resample(poly: &[Vec3], s: f64, n: usize) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(n);
    let mut q = poly[0];
    out.push(q);
    let mut seg = 0usize;
    let mut from = poly[0];
    // positive root of |a + u d - q| = s
    let exit = |a: &Vec3, d: &Vec3, q: &Vec3| -> f64 {
        let w = a - q;
        let qa = d.dot(d);
        let qb = 2.0 * w.dot(d);
        let qc = w.dot(&w) - s * s;
        (-qb + (qb * qb - 4.0 * qa * qc).max(0.0).sqrt()) / (2.0 * qa)
    };
    while out.len() < n {
        let mut next = None;
        while seg + 1 < poly.len() {
            let b = poly[seg + 1];
            if (b - q).norm() >= s {
                let d = b - from;
                let u = exit(&from, &d, &q).clamp(0.0, 1.0);
                next = Some(from + d * u);
                from = next.unwrap();
                break;
            }
            seg += 1;
            from = poly[seg];
        }
        let p = match next {
            Some(p) => p,
            None => {
                let m = poly.len();
                let mut d = if m >= 2 { poly[m - 1] - poly[m - 2] } else { Vec3::zeros() };
                if d.norm() == 0.0 {
                    d = if out.len() >= 2 { out[out.len() - 1] - out[out.len() - 2] } else { Vec3::x() };
                }
                let d = d.normalize();
                let a = if (poly[m - 1] - q).norm() < s { poly[m - 1] } else { q };
                let p = a + d * exit(&a, &d, &q);
                seg = m;
                from = p;
                p
            }
        };
        out.push(p);
        q = p;
    }
    out
}

/// Axis-aligned scale and translation taking the bounding box of `mean`
/// onto `target` (min, max corners).
pub fn fit_mean_shape(mean: &TriMesh, target: (Vec3, Vec3)) -> Result<TriMesh> {
    let (lo, hi) = mean.bounds();
    let (tlo, thi) = target;
    let mut scale = [0.0; 3];
    for a in 0..3 {
        let (e, te) = (hi[a] - lo[a], thi[a] - tlo[a]);
        if !(te > 0.0) || !(e > 0.0) {
            return Err(Error::InvalidInput(format!("bounding box has zero extent along axis {a}")));
        }
        scale[a] = te / e;
    }
    let verts = mean
        .vertices
        .iter()
        .map(|v| Vec3::new(
            tlo.x + (v.x - lo.x) * scale[0],
            tlo.y + (v.y - lo.y) * scale[1],
            tlo.z + (v.z - lo.z) * scale[2],
        ))
        .collect();
    mean.with_vertices(verts)
}

/// Builds one column per mesh vertex. Fails if any trace is degenerate or
/// two columns come closer than `min_separation_mm`.
pub fn build_columns(mesh: &TriMesh, params: &ColumnParams, object: usize) -> Result<ColumnSet> {
    params.validate()?;
    let k = params.n_nodes;
    let k0 = params.vertex_node();
    let s = params.spacing_mm;
    let h = s * params.step_fraction;
    let eps = s * params.start_offset_fraction;
    let m = params.field_exponent;
    let charges = &mesh.vertices;
    let normals = mesh.vertex_normals();
    let len_out = (k - 1 - k0) as f64 * s;
    let len_in = k0 as f64 * s;

    let cols: Vec<Result<Vec<Vec3>>> = (0..charges.len())
        .into_par_iter()
        .map(|v| {
            let p = charges[v];
            let n = normals[v];
            let mut out_pts = vec![p];
            if len_out > 0.0 {
                let tail = trace(charges, p + n * eps, 1.0, (len_out - eps).max(0.0) + s, h, m, n)
                    .ok_or(Error::DegenerateField { vertex: v })?;
                out_pts.extend(tail);
            }
            let mut in_pts = vec![p];
            if len_in > 0.0 {
                let tail = trace(charges, p - n * eps, 1.0, (len_in - eps).max(0.0) + s, h, m, -n)
                    .ok_or(Error::DegenerateField { vertex: v })?;
                in_pts.extend(tail);
            }
            let outward = resample(&out_pts, s, k - k0);
            let inward = resample(&in_pts, s, k0 + 1);
            let mut col: Vec<Vec3> = inward.into_iter().rev().collect();
            col.extend_from_slice(&outward[1..]);
            Ok(col)
        })
        .collect();

    let mut nodes = Vec::with_capacity(charges.len() * k);
    for c in cols {
        for p in c? {
            nodes.push([p.x, p.y, p.z]);
        }
    }
    let set = ColumnSet {
        object,
        n_nodes: k,
        spacing_mm: s,
        vertex_node: k0,
        nodes,
        edges: mesh.edges(),
        triangles: mesh.triangles.clone(),
    };
    if let Some((a, b, d)) = columns_min_distance(&set, params.min_separation_mm) {
        return Err(Error::IntersectingColumns { a, b, distance: d });
    }
    Ok(set)
}

/// Closest pair of columns closer than `within_mm`, found by spatial hashing
/// of column segments.
pub fn columns_min_distance(set: &ColumnSet, within_mm: f64) -> Option<(usize, usize, f64)> {
    let k = set.n_nodes;
    let cell = (set.spacing_mm * 2.0).max(within_mm * 2.0).max(1e-3);
    let key = |p: &Vec3| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64, i64), Vec<(u32, u32)>> = HashMap::new();
    for c in 0..set.n_columns() {
        for i in 0..k - 1 {
            let (a, b) = (set.node(c, i), set.node(c, i + 1));
            let lo = key(&a.inf(&b));
            let hi = key(&a.sup(&b));
            for x in lo.0..=hi.0 {
                for y in lo.1..=hi.1 {
                    for z in lo.2..=hi.2 {
                        grid.entry((x, y, z)).or_default().push((c as u32, i as u32));
                    }
                }
            }
        }
    }
    let mut best: Option<(usize, usize, f64)> = None;
    let mut keys: Vec<_> = grid.keys().copied().collect();
    keys.sort_unstable();
    for key0 in keys {
        let here = &grid[&key0];
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(there) = grid.get(&(key0.0 + dx, key0.1 + dy, key0.2 + dz)) else { continue };
                    for &(c1, i1) in here {
                        for &(c2, i2) in there {
                            if c2 <= c1 {
                                continue;
                            }
                            let d = segment_distance(
                                &set.node(c1 as usize, i1 as usize),
                                &set.node(c1 as usize, i1 as usize + 1),
                                &set.node(c2 as usize, i2 as usize),
                                &set.node(c2 as usize, i2 as usize + 1),
                            );
                            if d < within_mm && best.map_or(true, |b| d < b.2) {
                                best = Some((c1 as usize, c2 as usize, d));
                            }
                        }
                    }
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    fn sphere(r: f64, level: u32) -> TriMesh {
        let m = icosphere(level);
        m.with_vertices(m.vertices.iter().map(|v| v * r).collect()).unwrap()
    }

    #[test]
    fn fit_identity_and_stretch() {
        let m = sphere(2.0, 2);
        let b = m.bounds();
        let f = fit_mean_shape(&m, b).unwrap();
        for (p, q) in f.vertices.iter().zip(&m.vertices) {
            assert!((p - q).norm() < 1e-12);
        }
        let f = fit_mean_shape(&m, (b.0, Vec3::new(b.0.x + 2.0 * (b.1.x - b.0.x), b.1.y, b.1.z))).unwrap();
        let (lo, hi) = f.bounds();
        assert!(((hi.x - lo.x) - 8.0).abs() < 1e-9);
        assert!(((hi.y - lo.y) - 4.0).abs() < 1e-9);
        assert!(fit_mean_shape(&m, (b.0, Vec3::new(b.0.x, b.1.y, b.1.z))).is_err());
    }

    #[test]
    fn sphere_columns_are_radial() {
        let m = sphere(1.0, 3);
        let p = ColumnParams::new(31, 0.02);
        let cs = build_columns(&m, &p, 0).unwrap();
        assert_eq!(cs.n_columns(), m.n_vertices());
        assert_eq!(cs.vertex_node, 10);
        assert_eq!(cs.edges, m.edges());
        let mut worst: f64 = 0.0;
        for c in 0..cs.n_columns() {
            let v = m.vertices[c];
            assert!((cs.node(c, 10) - v).norm() < 1e-12);
            for k in 0..31 {
                let a = cs.node(c, k).normalize().dot(&v.normalize()).clamp(-1.0, 1.0).acos();
                worst = worst.max(a.to_degrees());
            }
        }
        assert!(worst < 1.0, "max deviation {worst} deg");
    }

    #[test]
    fn node_spacing_is_exact() {
        let m = sphere(8.0, 1).transformed(&crate::geom::Affine {
            m: nalgebra::Matrix3::from_diagonal(&Vec3::new(1.0, 0.8, 0.6)),
            t: Vec3::zeros(),
        });
        let p = ColumnParams::new(21, 0.3);
        let cs = build_columns(&m, &p, 0).unwrap();
        for c in 0..cs.n_columns() {
            for k in 0..20 {
                let d = (cs.node(c, k + 1) - cs.node(c, k)).norm();
                assert!(d <= 0.3 + 1e-9 && d > 0.29, "chord {d}");
            }
        }
    }

    #[test]
    fn resample_extrapolates() {
        let poly = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        let r = resample(&poly, 0.4, 4);
        assert!((r[3].x - 1.2).abs() < 1e-12);
    }
}
