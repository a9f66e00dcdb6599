//! Sub-plate morphometry: trochlear notch detection, cutting-plane region
//! labels on femoral and tibial cartilage, thickness and error reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{v3, Frame, Plane, Vec3};
use crate::mesh::TriMesh;
use crate::registration::KdTree;
use crate::stats;

pub type CuttingPlane = Plane;

/// Contours needed with a detectable groove before a notch is reported.
pub const MIN_GROOVE_CONTOURS: usize = 8;
/// Smallest groove depth (mm) along one contour that counts as a groove.
pub const MIN_GROOVE_DEPTH_MM: f64 = 0.3;
pub const LOAD_BEARING_FRACTION: f64 = 0.6;
pub const CENTRAL_AREA_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    CLF,
    CMF,
    CLT,
    CMT,
    ILT,
    IMT,
    ELT,
    EMT,
    ALT,
    AMT,
    PLT,
    PMT,
    Other,
}

impl Region {
    pub const ALL: [Region; 13] = [
        Region::CLF,
        Region::CMF,
        Region::CLT,
        Region::CMT,
        Region::ILT,
        Region::IMT,
        Region::ELT,
        Region::EMT,
        Region::ALT,
        Region::AMT,
        Region::PLT,
        Region::PMT,
        Region::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::CLF => "cLF",
            Region::CMF => "cMF",
            Region::CLT => "cLT",
            Region::CMT => "cMT",
            Region::ILT => "iLT",
            Region::IMT => "iMT",
            Region::ELT => "eLT",
            Region::EMT => "eMT",
            Region::ALT => "aLT",
            Region::AMT => "aMT",
            Region::PLT => "pLT",
            Region::PMT => "pMT",
            Region::Other => "other",
        }
    }

    pub fn from_name(s: &str) -> Option<Region> {
        Region::ALL.iter().copied().find(|r| r.name() == s)
    }
}

/// One region id per mesh vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubplateLabeling {
    pub labels: Vec<Region>,
}

impl SubplateLabeling {
    pub fn count(&self, r: Region) -> usize {
        self.labels.iter().filter(|&&l| l == r).count()
    }

    pub fn area(&self, mesh: &TriMesh, r: Region) -> f64 {
        mesh.vertex_areas().iter().zip(&self.labels).filter(|(_, &l)| l == r).map(|(a, _)| a).sum()
    }

    /// Combines labelings of disjoint meshes region by region (first wins).
    pub fn merge(&self, other: &SubplateLabeling) -> Result<SubplateLabeling> {
        if self.labels.len() != other.labels.len() {
            return Err(Error::GeometryMismatch("labelings differ in length".into()));
        }
        let labels = self.labels.iter().zip(&other.labels).map(|(&a, &b)| if a != Region::Other { a } else { b }).collect();
        Ok(SubplateLabeling { labels })
    }
}

/// `true` for the non-negative side of `n . (v - p)`.
pub fn classify_side(mesh: &TriMesh, plane: &CuttingPlane) -> Vec<bool> {
    mesh.vertices.iter().map(|v| plane.signed_distance(v) >= 0.0).collect()
}

/// Points where the mesh crosses the level set `plane.signed_distance == offset`.
fn contour_points(mesh: &TriMesh, plane: &Plane, offset: f64) -> Vec<Vec3> {
    let d: Vec<f64> = mesh
        .vertices
        .iter()
        .map(|v| {
            let s = plane.signed_distance(v) - offset;
            if s == 0.0 {
                1e-12
            } else {
                s
            }
        })
        .collect();
    let mut out = Vec::new();
    for t in &mesh.triangles {
        for e in 0..3 {
            let (i, j) = (t[e] as usize, t[(e + 1) % 3] as usize);
            // each edge is shared by two triangles; keep one orientation
            if i < j && (d[i] > 0.0) != (d[j] > 0.0) {
                let s = d[i] / (d[i] - d[j]);
                out.push(mesh.vertices[i] + (mesh.vertices[j] - mesh.vertices[i]) * s);
            }
        }
    }
    out
}

/// Vertex `(u, v)` of the least-squares parabola through `pts`.
fn parabola_min(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 3 {
        return None;
    }
    let u0 = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let mut m = nalgebra::Matrix3::zeros();
    let mut r = nalgebra::Vector3::zeros();
    for &(u, v) in pts {
        let x = u - u0;
        let row = nalgebra::Vector3::new(1.0, x, x * x);
        m += row * row.transpose();
        r += row * v;
    }
    let c = m.lu().solve(&r)?;
    if c[2] <= 1e-9 {
        return None;
    }
    let x = -c[1] / (2.0 * c[2]);
    Some((u0 + x, c[0] + c[1] * x + c[2] * x * x))
}

/// Groove bottom on one contour in `(ml, ap)` relative coordinates, with its depth.
fn groove_on_contour(profile: &mut Vec<(f64, f64)>) -> Option<(f64, f64, f64)> {
    profile.sort_by(|a, b| a.0.total_cmp(&b.0));
    profile.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-9);
    let n = profile.len();
    if n < 3 {
        return None;
    }
    let mut lmax = vec![f64::NEG_INFINITY; n];
    let mut rmax = vec![f64::NEG_INFINITY; n];
    for i in 1..n {
        lmax[i] = lmax[i - 1].max(profile[i - 1].1);
    }
    for i in (0..n - 1).rev() {
        rmax[i] = rmax[i + 1].max(profile[i + 1].1);
    }
    let mut best: Option<(usize, f64)> = None;
    for i in 1..n - 1 {
        let v = profile[i].1;
        if v <= profile[i - 1].1 && v <= profile[i + 1].1 {
            let depth = lmax[i].min(rmax[i]) - v;
            if best.map_or(true, |b| depth > b.1) {
                best = Some((i, depth));
            }
        }
    }
    let (i, depth) = best?;
    if depth < MIN_GROOVE_DEPTH_MM {
        return None;
    }
    let ui = profile[i].0;
    let near: Vec<(f64, f64)> = profile.iter().copied().filter(|p| (p.0 - ui).abs() <= 2.0).collect();
    let (u, v) = match parabola_min(&near) {
        Some((u, v)) if (u - ui).abs() <= 2.0 => (u, v),
        _ => profile[i],
    };
    Some((u, v, depth))
}

/// Trochlear notch on a femoral bone surface. Contours are drawn parallel to
/// `isolate` at `n_contours` offsets `(j + 0.5) * step_mm` on its positive
/// side; on each, the deepest dip of the anterior AP profile is taken as
/// the groove bottom, and the bottoms are averaged.
pub fn detect_trochlear_notch(mesh: &TriMesh, frame: &Frame, isolate: &CuttingPlane, step_mm: f64, n_contours: usize) -> Result<Vec3> {
    if mesh.vertices.is_empty() || n_contours == 0 || step_mm <= 0.0 {
        return Err(Error::InvalidInput("notch detection needs a mesh, contours and a positive step".into()));
    }
    let (ml, ap) = (v3(frame.ml), v3(frame.ap));
    let c = mesh.centroid();
    let needed = MIN_GROOVE_CONTOURS.min(n_contours);
    let mut acc = Vec3::zeros();
    let mut found = 0;
    for j in 0..n_contours {
        let off = (j as f64 + 0.5) * step_mm;
        let pts = contour_points(mesh, isolate, off);
        // origin on this contour plane
        let o = c - isolate.n() * (isolate.signed_distance(&c) - off);
        let mut prof: Vec<(f64, f64)> = pts
            .iter()
            .map(|p| (ml.dot(&(p - o)), ap.dot(&(p - o))))
            .filter(|&(_, v)| v > 0.0)
            .collect();
        if let Some((u, v, _)) = groove_on_contour(&mut prof) {
            acc += o + ml * u + ap * v;
            found += 1;
        }
    }
    if found < needed {
        return Err(Error::NoGroove { found, needed });
    }
    Ok(acc / found as f64)
}

/// Lateral side is the positive `ml` direction.
fn is_lateral(v: &Vec3, notch: &Vec3, ml: &Vec3) -> bool {
    ml.dot(&(v - notch)) >= 0.0
}

/// Central load-bearing femoral regions on the femoral cartilage surface.
/// Each condyle keeps the posterior, inferior-facing vertices whose AP
/// distance behind the notch is within `fraction` of that condyle's
/// posterior-most vertex.
pub fn femur_subplates(mesh: &TriMesh, notch: &Vec3, frame: &Frame, fraction: f64) -> Result<SubplateLabeling> {
    let (ml, ap, si) = (v3(frame.ml), v3(frame.ap), v3(frame.si));
    let c = mesh.centroid();
    let post: Vec<bool> = mesh.vertices.iter().map(|v| ap.dot(&(v - notch)) < 0.0 && si.dot(&(v - c)) < 0.0).collect();
    let mut labels = vec![Region::Other; mesh.n_vertices()];
    for lateral in [true, false] {
        let side: Vec<usize> = (0..mesh.n_vertices()).filter(|&i| post[i] && is_lateral(&mesh.vertices[i], notch, &ml) == lateral).collect();
        if side.is_empty() {
            return Err(Error::InvalidInput(format!("empty {} condyle region", if lateral { "lateral" } else { "medial" })));
        }
        let depth = side.iter().map(|&i| -ap.dot(&(mesh.vertices[i] - notch))).fold(0.0, f64::max);
        let region = if lateral { Region::CLF } else { Region::CMF };
        for &i in &side {
            if -ap.dot(&(mesh.vertices[i] - notch)) <= fraction * depth {
                labels[i] = region;
            }
        }
    }
    Ok(SubplateLabeling { labels })
}

/// Tibial plateau regions on the tibial cartilage surface. Each compartment
/// gets a central ellipse holding `CENTRAL_AREA_FRACTION` of its area and
/// four ring sectors cut at 45 and 135 degrees.
pub fn tibia_subplates(mesh: &TriMesh, notch: &Vec3, frame: &Frame) -> Result<SubplateLabeling> {
    let (ml, ap, si) = (v3(frame.ml), v3(frame.ap), v3(frame.si));
    let normals = mesh.vertex_normals();
    let areas = mesh.vertex_areas();
    let mut labels = vec![Region::Other; mesh.n_vertices()];
    for lateral in [true, false] {
        let comp: Vec<usize> = (0..mesh.n_vertices())
            .filter(|&i| normals[i].dot(&si) >= 0.5 && is_lateral(&mesh.vertices[i], notch, &ml) == lateral)
            .collect();
        if comp.is_empty() {
            return Err(Error::InvalidInput(format!("empty {} tibial compartment", if lateral { "lateral" } else { "medial" })));
        }
        let uv: Vec<(f64, f64)> = comp.iter().map(|&i| (ml.dot(&(mesh.vertices[i] - notch)), ap.dot(&(mesh.vertices[i] - notch)))).collect();
        let total: f64 = comp.iter().map(|&i| areas[i]).sum();
        let cu = comp.iter().zip(&uv).map(|(&i, p)| areas[i] * p.0).sum::<f64>() / total;
        let cv = comp.iter().zip(&uv).map(|(&i, p)| areas[i] * p.1).sum::<f64>() / total;
        let (umin, umax) = uv.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
        let (vmin, vmax) = uv.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
        let a = ((umax - umin) / 2.0).max(1e-9);
        let b = ((vmax - vmin) / 2.0).max(1e-9);
        let rho: Vec<f64> = uv.iter().map(|p| ((p.0 - cu) / a).powi(2) + ((p.1 - cv) / b).powi(2)).collect();
        let frac = |s: f64| comp.iter().zip(&rho).filter(|(_, &r)| r <= s * s).map(|(&i, _)| areas[i]).sum::<f64>() / total;
        let (mut lo, mut hi) = (0.0, 2.0f64);
        while frac(hi) < CENTRAL_AREA_FRACTION {
            hi *= 2.0;
        }
        while hi - lo > 1e-3 * hi {
            let mid = 0.5 * (lo + hi);
            if frac(mid) < CENTRAL_AREA_FRACTION {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // the enclosed area is a step function; take the closer side
        let s = if (frac(lo) - CENTRAL_AREA_FRACTION).abs() < (frac(hi) - CENTRAL_AREA_FRACTION).abs() { lo } else { hi };
        let (central, ant, post, interior, exterior) = if lateral {
            (Region::CLT, Region::ALT, Region::PLT, Region::ILT, Region::ELT)
        } else {
            (Region::CMT, Region::AMT, Region::PMT, Region::IMT, Region::EMT)
        };
        // interior points back toward the notch
        let inward = if cu >= 0.0 { -1.0 } else { 1.0 };
        for (k, &i) in comp.iter().enumerate() {
            labels[i] = if rho[k] <= s * s {
                central
            } else {
                let (du, dv) = (uv[k].0 - cu, uv[k].1 - cv);
                let th = dv.atan2(du).to_degrees();
                if th > 45.0 && th <= 135.0 {
                    ant
                } else if th > -135.0 && th <= -45.0 {
                    post
                } else if du * inward > 0.0 {
                    interior
                } else {
                    exterior
                }
            };
        }
    }
    Ok(SubplateLabeling { labels })
}

/// Per-vertex thickness between corresponding bone and cartilage vertices.
pub fn vertex_thickness(bone: &TriMesh, cartilage: &TriMesh) -> Result<Vec<f64>> {
    if bone.n_vertices() != cartilage.n_vertices() {
        return Err(Error::GeometryMismatch("bone and cartilage meshes differ in vertex count".into()));
    }
    Ok(bone.vertices.iter().zip(&cartilage.vertices).map(|(a, b)| (b - a).norm()).collect())
}

/// Area-weighted mean of a per-vertex field in each labelled region.
pub fn region_means(mesh: &TriMesh, labeling: &SubplateLabeling, field: &[f64]) -> BTreeMap<Region, f64> {
    let areas = mesh.vertex_areas();
    let mut acc: BTreeMap<Region, (f64, f64)> = BTreeMap::new();
    for ((&l, &a), &f) in labeling.labels.iter().zip(&areas).zip(field) {
        if l != Region::Other {
            let e = acc.entry(l).or_insert((0.0, 0.0));
            e.0 += a * f;
            e.1 += a;
        }
    }
    acc.into_iter().filter(|(_, (_, w))| *w > 0.0).map(|(r, (s, w))| (r, s / w)).collect()
}

/// Inputs for one robustness case: two labelled surfaces and the reference
/// cartilage surface with its per-vertex thickness.
pub struct RobustnessCase<'a> {
    pub mesh_a: &'a TriMesh,
    pub labels_a: &'a SubplateLabeling,
    pub mesh_b: &'a TriMesh,
    pub labels_b: &'a SubplateLabeling,
    pub reference: &'a TriMesh,
    pub reference_thickness: &'a [f64],
}

/// Mean reference thickness in each region of a labelled surface, looking
/// up the nearest reference vertex.
fn reference_region_thickness(mesh: &TriMesh, labels: &SubplateLabeling, tree: &KdTree, thick: &[f64]) -> BTreeMap<Region, f64> {
    let field: Vec<f64> = mesh.vertices.iter().map(|v| thick[tree.nearest(v).0]).collect();
    region_means(mesh, labels, &field)
}

/// Per-region R² between thickness measured through labelings A and B.
pub fn subplate_robustness(cases: &[RobustnessCase]) -> Result<BTreeMap<Region, f64>> {
    if cases.len() < 3 {
        return Err(Error::InvalidInput("robustness needs at least 3 cases".into()));
    }
    let mut xs: BTreeMap<Region, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for case in cases {
        if case.reference.n_vertices() != case.reference_thickness.len() {
            return Err(Error::GeometryMismatch("reference thickness length differs from the mesh".into()));
        }
        let tree = KdTree::new(&case.reference.vertices);
        let a = reference_region_thickness(case.mesh_a, case.labels_a, &tree, case.reference_thickness);
        let b = reference_region_thickness(case.mesh_b, case.labels_b, &tree, case.reference_thickness);
        for (r, va) in &a {
            if let Some(vb) = b.get(r) {
                let e = xs.entry(*r).or_default();
                e.0.push(*va);
                e.1.push(*vb);
            }
        }
    }
    Ok(xs.into_iter().filter(|(_, (a, _))| a.len() >= 3).map(|(r, (a, b))| (r, stats::r_squared(&a, &b))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub region: String,
    pub n: usize,
    pub signed_mean: f64,
    pub signed_sd: f64,
    pub unsigned_mean: f64,
    pub unsigned_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionErrorReport {
    pub regions: Vec<RegionStats>,
    /// Mean of the largest thickness errors in the 98-100, 95-100 and
    /// 90-100 percent bands.
    pub band_98: f64,
    pub band_95: f64,
    pub band_90: f64,
}

impl RegionErrorReport {
    pub fn region(&self, name: &str) -> Option<&RegionStats> {
        self.regions.iter().find(|r| r.region == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("region,n,signed_mean,signed_sd,unsigned_mean,unsigned_sd\n");
        for r in &self.regions {
            s += &format!("{},{},{},{},{},{}\n", r.region, r.n, r.signed_mean, r.signed_sd, r.unsigned_mean, r.unsigned_sd);
        }
        s
    }
}

fn region_stats(name: &str, e: &[f64]) -> RegionStats {
    let u: Vec<f64> = e.iter().map(|x| x.abs()).collect();
    let sd = |x: &[f64]| if x.len() > 1 { stats::std_dev(x) } else { 0.0 };
    RegionStats { region: name.to_string(), n: e.len(), signed_mean: stats::mean(e), signed_sd: sd(e), unsigned_mean: stats::mean(&u), unsigned_sd: sd(&u) }
}

/// Signed error `(k_truth - k_solution) * spacing` per column, so a surface
/// inside the truth gives a positive error. Columns without truth are
/// skipped. `thickness_error` feeds the quantile bands; `labels` may be
/// empty for an overall report only.
pub fn region_errors(
    solution: &[f64],
    truth: &[Option<f64>],
    spacing_mm: f64,
    labels: &[Region],
    thickness_error: &[f64],
) -> Result<RegionErrorReport> {
    if solution.len() != truth.len() || (!labels.is_empty() && labels.len() != solution.len()) {
        return Err(Error::GeometryMismatch("solution, truth and labels differ in length".into()));
    }
    let mut all = Vec::new();
    let mut per: BTreeMap<Region, Vec<f64>> = BTreeMap::new();
    for (c, (s, t)) in solution.iter().zip(truth).enumerate() {
        if let Some(t) = t {
            let e = (t - s) * spacing_mm;
            all.push(e);
            if let Some(&l) = labels.get(c) {
                if l != Region::Other {
                    per.entry(l).or_default().push(e);
                }
            }
        }
    }
    if all.is_empty() {
        return Err(Error::InvalidInput("no columns with truth".into()));
    }
    let mut regions = vec![region_stats("all", &all)];
    regions.extend(per.iter().map(|(r, e)| region_stats(r.name(), e)));
    let te: Vec<f64> = thickness_error.iter().map(|x| x.abs()).collect();
    let band = |q| if te.is_empty() { 0.0 } else { stats::top_band_mean(&te, q) };
    Ok(RegionErrorReport { regions, band_98: band(0.98), band_95: band(0.95), band_90: band(0.90) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Affine;
    use crate::phantom::{generate_phantom, PhantomSpec};

    #[test]
    fn notch_near_planted_and_equivariant() {
        let spec = PhantomSpec::small();
        let case = generate_phantom(&spec, 3).unwrap();
        let femur = case.truth_mesh(0, 0);
        let n = detect_trochlear_notch(femur, &case.frame, &case.isolate_plane, spec.voxel_mm(), spec.notch_contours).unwrap();
        assert!((n - v3(case.notch)).norm() <= 2.0 * spec.voxel_mm(), "{n:?} vs {:?}", case.notch);
        let t = Vec3::new(3.25, -1.5, 7.0);
        let shift = Affine::from_euler(0.0, 0.0, 0.0, t);
        let n2 = detect_trochlear_notch(&femur.transformed(&shift), &case.frame, &case.isolate_plane.transformed(&shift), spec.voxel_mm(), spec.notch_contours).unwrap();
        assert!((n2 - n - t).norm() < 1e-9);
    }

    #[test]
    fn sphere_has_no_groove() {
        let s = crate::mesh::icosphere(4);
        let m = s.with_vertices(s.vertices.iter().map(|v| v * 15.0).collect()).unwrap();
        let plane = Plane::new(Vec3::z(), Vec3::new(0.0, 0.0, -9.0));
        match detect_trochlear_notch(&m, &Frame::default(), &plane, 0.6, 15) {
            Err(Error::NoGroove { .. }) => {}
            r => panic!("expected no groove, got {r:?}"),
        }
    }

    #[test]
    fn side_classification() {
        let m = crate::mesh::icosphere(3);
        let p = Plane::new(Vec3::x(), Vec3::zeros());
        let s = classify_side(&m, &p);
        let flipped = classify_side(&m, &Plane::new(-Vec3::x(), Vec3::zeros()));
        let pos = s.iter().filter(|&&b| b).count();
        assert!((pos as f64 / m.n_vertices() as f64 - 0.5).abs() < 0.01 + 0.5 * 42.0 / 642.0);
        assert!(s.iter().zip(&flipped).zip(&m.vertices).all(|((a, b), v)| v.x == 0.0 || a != b));
    }

    #[test]
    fn tibia_partition_and_area() {
        let spec = PhantomSpec::small();
        let case = generate_phantom(&spec, 5).unwrap();
        let tib = case.truth_mesh(1, 1);
        let lab = tibia_subplates(tib, &v3(case.notch), &case.frame).unwrap();
        for (c, ring) in [
            (Region::CLT, [Region::ALT, Region::PLT, Region::ILT, Region::ELT]),
            (Region::CMT, [Region::AMT, Region::PMT, Region::IMT, Region::EMT]),
        ] {
            let comp: f64 = ring.iter().map(|&r| lab.area(tib, r)).sum::<f64>() + lab.area(tib, c);
            let f = lab.area(tib, c) / comp;
            assert!((f - 0.2).abs() <= 0.02, "central fraction {f}");
            for r in ring {
                assert!(lab.count(r) > 0);
            }
        }
    }

    #[test]
    fn tibia_labels_follow_rotation() {
        let spec = PhantomSpec::small();
        let case = generate_phantom(&spec, 5).unwrap();
        let tib = case.truth_mesh(1, 1);
        let n = v3(case.notch);
        let a = tibia_subplates(tib, &n, &case.frame).unwrap();
        let rot = Affine::from_euler(0.0, 0.0, std::f64::consts::FRAC_PI_2, Vec3::new(1.0, 2.0, 3.0));
        let b = tibia_subplates(&tib.transformed(&rot), &rot.apply(&n), &case.frame.transformed(&rot)).unwrap();
        let diff = a.labels.iter().zip(&b.labels).filter(|(x, y)| x != y).count();
        assert!(diff <= a.labels.len() / 200, "{diff} labels changed");
    }

    #[test]
    fn femur_regions_and_limits() {
        let spec = PhantomSpec::small();
        let case = generate_phantom(&spec, 7).unwrap();
        let fem = case.truth_mesh(0, 1);
        let n = v3(case.notch);
        let l = femur_subplates(fem, &n, &case.frame, 0.6).unwrap();
        let (a, b) = (l.count(Region::CLF) as f64, l.count(Region::CMF) as f64);
        assert!(a > 0.0 && b > 0.0);
        let full = femur_subplates(fem, &n, &case.frame, 1.0).unwrap();
        let ap = v3(case.frame.ap);
        let si = v3(case.frame.si);
        let c = fem.centroid();
        let post = fem.vertices.iter().filter(|v| ap.dot(&(*v - n)) < 0.0 && si.dot(&(*v - c)) < 0.0).count();
        assert_eq!(full.count(Region::CLF) + full.count(Region::CMF), post);
    }

    #[test]
    fn errors_sign_and_bands() {
        let truth: Vec<Option<f64>> = vec![Some(10.0); 50];
        let sol = vec![9.0; 50];
        let r = region_errors(&sol, &truth, 0.15, &[], &[]).unwrap();
        let all = r.region("all").unwrap();
        assert!((all.signed_mean - 0.15).abs() < 1e-12 && all.signed_sd.abs() < 1e-12);
        let te: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = region_errors(&sol, &truth, 0.15, &[], &te).unwrap();
        assert!(r.band_98 >= r.band_95 && r.band_95 >= r.band_90);
        assert!(region_errors(&sol, &vec![None; 50], 0.15, &[], &[]).is_err());
    }

    #[test]
    fn robustness_identical_is_one() {
        let spec = PhantomSpec::small();
        let mut owned = Vec::new();
        for seed in 0..4 {
            let case = generate_phantom(&spec, seed).unwrap();
            let tib = case.truth_mesh(1, 1).clone();
            let lab = tibia_subplates(&tib, &v3(case.notch), &case.frame).unwrap();
            let th = vertex_thickness(case.truth_mesh(1, 0), &tib).unwrap();
            owned.push((tib, lab, th));
        }
        let cases: Vec<RobustnessCase> = owned
            .iter()
            .map(|(m, l, t)| RobustnessCase { mesh_a: m, labels_a: l, mesh_b: m, labels_b: l, reference: m, reference_thickness: t })
            .collect();
        let r2 = subplate_robustness(&cases).unwrap();
        assert!(!r2.is_empty());
        assert!(r2.values().all(|&v| (v - 1.0).abs() < 1e-9));
        assert!(subplate_robustness(&cases[..2]).is_err());
    }
}
