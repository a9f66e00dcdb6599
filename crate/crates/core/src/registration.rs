//! Rigid ICP and the two-step femur-then-both registration between time
//! points.

use nalgebra::{Matrix3, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::columns::ColumnSet;
use crate::error::{Error, Result};
use crate::geom::{Affine, Vec3};
use crate::mesh::TriMesh;
use crate::volume::Volume3D;

/// Static 3-d tree over a point set.
pub struct KdTree {
    pts: Vec<Vec3>,
    // permutation of point ids; node `m` of range [lo, hi) is at the median
    idx: Vec<usize>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(pts: &[Vec3]) -> KdTree {
        let mut t = KdTree { pts: pts.to_vec(), idx: (0..pts.len()).collect(), axis: vec![0; pts.len()] };
        t.build(0, pts.len());
        t
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let mut mn = Vec3::repeat(f64::INFINITY);
        let mut mx = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.idx[lo..hi] {
            mn = mn.inf(&self.pts[i]);
            mx = mx.sup(&self.pts[i]);
        }
        let ext = mx - mn;
        let ax = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
        let mid = (lo + hi) / 2;
        let pts = &self.pts;
        self.idx[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            pts[a][ax].partial_cmp(&pts[b][ax]).unwrap().then(a.cmp(&b))
        });
        self.axis[mid] = ax as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Index and squared distance of the nearest point. Ties go to the
    /// smaller index.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.pts.len(), q, &mut best);
        best
    }

    fn search(&self, lo: usize, hi: usize, q: &Vec3, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.idx[mid];
        let d2 = (self.pts[i] - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && i < best.0) {
            *best = (i, d2);
        }
        if hi - lo == 1 {
            return;
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - self.pts[i][ax];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, best);
        if diff * diff <= best.1 {
            self.search(far.0, far.1, q, best);
        }
    }
}

/// Least-squares rigid fit `R a + t ~ b` over paired points (Kabsch).
pub fn fit_rigid(a: &[Vec3], b: &[Vec3]) -> Result<Affine> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::Degenerate("rigid fit needs at least three pairs".into()));
    }
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vec3>() / n;
    let cb = b.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (p - ca) * (q - cb).transpose();
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u.ok_or_else(|| Error::Degenerate("svd failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Degenerate("svd failed".into()))?;
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    Ok(Affine { m: r, t: cb - r * ca })
}

fn check_spread(p: &[Vec3]) -> Result<()> {
    if p.len() < 3 {
        return Err(Error::Degenerate("need at least three points".into()));
    }
    let c = p.iter().sum::<Vec3>() / p.len() as f64;
    let mut cov = Matrix3::zeros();
    for x in p {
        cov += (x - c) * (x - c).transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    let mut ev: Vec<f64> = ev.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if ev[1] <= 1e-12 * ev[2].max(1e-300) {
        return Err(Error::Degenerate("point set is collinear".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop when the RMS changes by less than this (mm).
    pub tolerance_mm: f64,
    /// Start by matching centroids.
    pub init_centroid: bool,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams { max_iterations: 200, tolerance_mm: 1e-6, init_centroid: false }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Maps `moving` onto `fixed`.
    pub transform: Affine,
    /// RMS of the nearest-neighbour distances after each iteration's fit.
    pub rms_history: Vec<f64>,
}

impl IcpResult {
    pub fn rms(&self) -> f64 {
        self.rms_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Point-to-point ICP from `init`.
pub fn icp_rigid_from(moving: &[Vec3], fixed: &[Vec3], init: Affine, params: &IcpParams) -> Result<IcpResult> {
    check_spread(moving)?;
    check_spread(fixed)?;
    let tree = KdTree::new(fixed);
    let mut tr = init;
    if params.init_centroid {
        let cm = moving.iter().map(|p| tr.apply(p)).sum::<Vec3>() / moving.len() as f64;
        let cf = fixed.iter().sum::<Vec3>() / fixed.len() as f64;
        tr.t += cf - cm;
    }
    let mut hist = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..params.max_iterations {
        let cur: Vec<Vec3> = moving.iter().map(|p| tr.apply(p)).collect();
        let nn: Vec<(usize, f64)> = cur.par_iter().map(|p| tree.nearest(p)).collect();
        let targets: Vec<Vec3> = nn.iter().map(|(i, _)| fixed[*i]).collect();
        let step = fit_rigid(&cur, &targets)?;
        tr = step.compose(&tr);
        let rms = (cur
            .iter()
            .zip(&targets)
            .map(|(p, q)| (step.apply(p) - q).norm_squared())
            .sum::<f64>()
            / cur.len() as f64)
            .sqrt();
        hist.push(rms);
        if (prev - rms).abs() < params.tolerance_mm {
            break;
        }
        prev = rms;
    }
    Ok(IcpResult { transform: tr, rms_history: hist })
}

pub fn icp_rigid(moving: &[Vec3], fixed: &[Vec3], params: &IcpParams) -> Result<IcpResult> {
    icp_rigid_from(moving, fixed, Affine::identity(), params)
}

/// Mesh vertices plus the non-corner points of a barycentric grid with `n`
/// steps per triangle edge. Edge points repeat across neighbouring faces,
/// which does not matter for nearest-neighbour queries.
pub fn densify(mesh: &TriMesh, n: usize) -> Vec<Vec3> {
    let mut out = mesh.vertices.clone();
    let n = n.max(1);
    for f in 0..mesh.triangles.len() {
        let (a, b, c) = mesh.corners(f);
        for i in 0..=n {
            for j in 0..=(n - i) {
                let k = n - i - j;
                if i == n || j == n || k == n {
                    continue;
                }
                out.push((a * i as f64 + b * j as f64 + c * k as f64) / n as f64);
            }
        }
    }
    out
}

/// ICP between meshes: first against a densified copy of `fixed` so the
/// correspondences can slide along the surface, then against its vertices.
pub fn icp_mesh_from(moving: &[Vec3], fixed: &[&TriMesh], init: Affine, params: &IcpParams) -> Result<IcpResult> {
    let dense: Vec<Vec3> = fixed.iter().flat_map(|m| densify(m, 4)).collect();
    let verts: Vec<Vec3> = fixed.iter().flat_map(|m| m.vertices.iter().cloned()).collect();
    let coarse = icp_rigid_from(moving, &dense, init, params)?;
    let fine = icp_rigid_from(moving, &verts, coarse.transform, &IcpParams { init_centroid: false, ..params.clone() })?;
    let mut hist = coarse.rms_history;
    hist.extend(fine.rms_history);
    Ok(IcpResult { transform: fine.transform, rms_history: hist })
}

/// Registers the time point 1 pair onto the time point 2 pair: ICP on the
/// femur alone, then on both objects together from that start. The result
/// maps time point 1 coordinates into time point 2.
pub fn two_step_register(
    femur_t1: &TriMesh,
    tibia_t1: &TriMesh,
    femur_t2: &TriMesh,
    tibia_t2: &TriMesh,
    params: &IcpParams,
) -> Result<Affine> {
    if femur_t1.n_vertices() != femur_t2.n_vertices() || tibia_t1.n_vertices() != tibia_t2.n_vertices() {
        return Err(Error::GeometryMismatch("time points differ in vertex count".into()));
    }
    let step1 = icp_mesh_from(
        &femur_t1.vertices,
        &[femur_t2],
        Affine::identity(),
        &IcpParams { init_centroid: true, ..params.clone() },
    )?;
    let a: Vec<Vec3> = femur_t1.vertices.iter().chain(&tibia_t1.vertices).cloned().collect();
    let step2 = icp_mesh_from(&a, &[femur_t2, tibia_t2], step1.transform, &IcpParams { init_centroid: false, ..params.clone() })?;
    Ok(step2.transform)
}

/// ICP on both objects as one cloud, from the identity.
pub fn single_cloud_register(
    femur_t1: &TriMesh,
    tibia_t1: &TriMesh,
    femur_t2: &TriMesh,
    tibia_t2: &TriMesh,
    params: &IcpParams,
) -> Result<Affine> {
    let a: Vec<Vec3> = femur_t1.vertices.iter().chain(&tibia_t1.vertices).cloned().collect();
    Ok(icp_mesh_from(&a, &[femur_t2, tibia_t2], Affine::identity(), params)?.transform)
}

pub fn rms_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    (a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>() / a.len().max(1) as f64).sqrt()
}

pub fn is_rigid(t: &Affine, tol: f64) -> bool {
    (t.m.transpose() * t.m - Matrix3::identity()).abs().max() <= tol && (t.m.determinant() - 1.0).abs() <= tol
}

pub fn transform_mesh(m: &TriMesh, t: &Affine) -> TriMesh {
    m.transformed(t)
}

/// Resamples `vol` so that the output at `p` equals the input at `T^-1 p`,
/// on the input grid.
pub fn transform_volume(vol: &Volume3D, t: &Affine) -> Result<Volume3D> {
    let inv = t.inverse().ok_or_else(|| Error::Singular("transform".into()))?;
    let [nx, ny, nz] = vol.dims();
    let data: Vec<f32> = (0..nz)
        .into_par_iter()
        .flat_map_iter(|k| {
            let inv = &inv;
            (0..ny).flat_map(move |j| {
                (0..nx).map(move |i| vol.sample(&inv.apply(&vol.voxel_center(i, j, k))) as f32)
            })
        })
        .collect();
    vol.with_data(data)
}

pub fn transform_columns(cs: &ColumnSet, t: &Affine) -> ColumnSet {
    let mut out = cs.clone();
    for n in out.nodes.iter_mut() {
        let p = t.apply(&Vec3::from(*n));
        *n = [p.x, p.y, p.z];
    }
    out
}

/// Column correspondence between two column sets of the same topology:
/// identity by vertex id. Returns the mean distance between corresponding
/// base vertices.
pub fn correspond_columns(a: &ColumnSet, b: &ColumnSet) -> Result<f64> {
    if a.n_columns() != b.n_columns() || a.edges != b.edges {
        return Err(Error::GeometryMismatch("column sets do not share topology".into()));
    }
    let n = a.n_columns();
    let d: f64 = (0..n).map(|c| (a.node(c, a.vertex_node) - b.node(c, b.vertex_node)).norm()).sum();
    Ok(d / n.max(1) as f64)
}

/// Same check for meshes: identical triangles required.
pub fn correspond_meshes(a: &TriMesh, b: &TriMesh) -> Result<f64> {
    if a.triangles != b.triangles || a.n_vertices() != b.n_vertices() {
        return Err(Error::GeometryMismatch("meshes do not share topology".into()));
    }
    Ok(a.vertices.iter().zip(&b.vertices).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.n_vertices().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use crate::phantom::{PhantomSpec};
    use rand::{Rng, SeedableRng};

    fn brute_nearest(p: &[Vec3], q: &Vec3) -> (usize, f64) {
        let mut b = (usize::MAX, f64::INFINITY);
        for (i, x) in p.iter().enumerate() {
            let d = (x - q).norm_squared();
            if d < b.1 {
                b = (i, d);
            }
        }
        b
    }

    #[test]
    fn kdtree_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..500).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 10.0).collect();
        let t = KdTree::new(&pts);
        for _ in 0..300 {
            let q = Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 12.0 - Vec3::repeat(1.0);
            let a = t.nearest(&q);
            let b = brute_nearest(&pts, &q);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn identity_when_equal() {
        let s = icosphere(2);
        let v: Vec<Vec3> = s.vertices.iter().map(|p| Vec3::new(p.x * 3.0, p.y * 2.0, p.z)).collect();
        let r = icp_rigid(&v, &v, &IcpParams::default()).unwrap();
        assert!(rms_distance(&v, &v.iter().map(|p| r.transform.apply(p)).collect::<Vec<_>>()) < 1e-12);
    }

    #[test]
    fn collinear_rejected() {
        let v: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(icp_rigid(&v, &v, &IcpParams::default()).is_err());
    }

    #[test]
    fn recovers_planted_and_rms_monotone() {
        let spec = PhantomSpec::default();
        let m = &spec.mean_shapes(3).unwrap()[0];
        let planted = Affine::from_euler(0.1, -0.15, 0.2, Vec3::new(3.0, -2.0, 4.0));
        let moved: Vec<Vec3> = m.vertices.iter().map(|p| planted.apply(p)).collect();
        let mm = m.transformed(&planted);
        let r = icp_mesh_from(&m.vertices, &[&mm], Affine::identity(), &IcpParams { init_centroid: true, ..Default::default() }).unwrap();
        let got: Vec<Vec3> = m.vertices.iter().map(|p| r.transform.apply(p)).collect();
        assert!(rms_distance(&got, &moved) < 1e-3);
        assert!(is_rigid(&r.transform, 1e-9));
        let plain = icp_rigid(&m.vertices, &moved, &IcpParams::default()).unwrap();
        for w in plain.rms_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn volume_rotation_matches_permutation() {
        let v = Volume3D::from_fn([6, 6, 6], [1.0; 3], [0.0; 3], |i, j, k| (i * 7 + j * 3 + k * 11) as f32).unwrap();
        // 90 degrees about z through the grid centre
        let c = Vec3::new(2.5, 2.5, 2.5);
        let m = *nalgebra::Rotation3::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_2).matrix();
        let t = Affine { m, t: c - m * c };
        let r = transform_volume(&v, &t).unwrap();
        for k in 0..6 {
            for j in 0..6 {
                for i in 0..6 {
                    // output (i, j) comes from input T^-1 (i, j) = (j, 5 - i)
                    let want = v.get(j, 5 - i, k);
                    assert!((r.get(i, j, k) - want).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn mesh_roundtrip_and_topology() {
        let s = icosphere(2);
        let t = Affine::from_euler(0.3, 0.2, -0.1, Vec3::new(1.0, 2.0, 3.0));
        let back = s.transformed(&t).transformed(&t.inverse().unwrap());
        assert!(correspond_meshes(&s, &back).unwrap() < 1e-9);
        assert_eq!(s.transformed(&Affine::identity()), s);
        let mut shuffled = s.clone();
        shuffled.triangles.swap(0, 1);
        assert!(correspond_meshes(&s, &shuffled).is_err());
    }
}
