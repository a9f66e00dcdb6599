//! Synthetic knee phantoms with exact ground truth.
//!
//! Each object is star-shaped about its centre: the bone surface is an
//! ellipsoid (the femur carries an anterior groove), the cartilage surface
//! sits a thickness `t(u) >= 0` further out along the same ray. Intensities
//! are rendered with 2x2x2 supersampling and additive Gaussian noise.

use std::fs;
use std::path::Path;

use nalgebra::Rotation3;
use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{arr, v3, Affine, Frame, Plane, Vec3};
use crate::mesh::{icosphere, TriMesh};
use crate::rng::stream;
use crate::volume::Volume3D;

pub const BACKGROUND: f32 = 100.0;
pub const BONE: f32 = 40.0;
pub const CARTILAGE: f32 = 180.0;
pub const FLUID: f32 = 170.0;

/// Voxel labels.
pub const L_BACKGROUND: u8 = 0;
pub const L_FEMUR_BONE: u8 = 1;
pub const L_FEMUR_CART: u8 = 2;
pub const L_TIBIA_BONE: u8 = 3;
pub const L_TIBIA_CART: u8 = 4;
pub const L_FLUID: u8 = 5;

const LABEL_INTENSITY: [f32; 6] = [BACKGROUND, BONE, CARTILAGE, BONE, CARTILAGE, FLUID];

pub fn bone_label(object: usize) -> u8 {
    1 + 2 * object as u8
}

pub fn cartilage_label(object: usize) -> u8 {
    2 + 2 * object as u8
}

/// Smooth bump on the sphere: `amp * exp(-angle^2 / (2 w^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub dir: [f64; 3],
    pub width: f64,
    pub amp: f64,
}

impl Bump {
    pub fn eval(&self, u: &Vec3) -> f64 {
        let c = v3(self.dir).dot(u).clamp(-1.0, 1.0);
        let a = c.acos();
        self.amp * (-(a * a) / (2.0 * self.width * self.width)).exp()
    }
}

fn sum_bumps(b: &[Bump], u: &Vec3) -> f64 {
    b.iter().map(|b| b.eval(u)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Groove {
    pub depth_mm: f64,
    pub width_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessField {
    pub min_mm: f64,
    pub max_mm: f64,
    /// Unit direction of the articular side; thickness grows towards it.
    pub articular: [f64; 3],
    pub bumps: Vec<Bump>,
    /// Multiplicative thinning lesions, amplitudes in `[0, 1)`.
    pub lesions: Vec<Bump>,
    /// Thinning rate in mm per year, `base + bumps` clamped to `[0, max]`.
    pub thinning_base_mm: f64,
    pub thinning_bumps: Vec<Bump>,
    pub thinning_max_mm: f64,
    pub years: f64,
}

impl ThicknessField {
    pub fn initial(&self, u: &Vec3) -> f64 {
        let f = 0.3 + 0.5 * v3(self.articular).dot(u).max(0.0) + sum_bumps(&self.bumps, u);
        let t = self.min_mm + (self.max_mm - self.min_mm) * f.clamp(0.0, 1.0);
        let l: f64 = sum_bumps(&self.lesions, u);
        t * (1.0 - l).clamp(0.0, 1.0)
    }

    pub fn thinning_rate(&self, u: &Vec3) -> f64 {
        (self.thinning_base_mm + sum_bumps(&self.thinning_bumps, u)).clamp(0.0, self.thinning_max_mm)
    }

    /// Thickness after `years` of thinning. May be negative if the field is
    /// inconsistent; the generator rejects such cases.
    pub fn raw(&self, u: &Vec3) -> f64 {
        self.initial(u) - self.years * self.thinning_rate(u)
    }

    pub fn at(&self, u: &Vec3) -> f64 {
        self.raw(u).max(0.0)
    }
}

/// One object in its own frame (before the case pose).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectShape {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub groove: Option<Groove>,
    pub thickness: ThicknessField,
    pub fluid: Vec<Bump>,
    pub fluid_mm: f64,
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl ObjectShape {
    pub fn c(&self) -> Vec3 {
        v3(self.center)
    }

    pub fn bone_radius(&self, u: &Vec3) -> f64 {
        let a = self.semi_axes;
        let q = (u.x / a[0]).powi(2) + (u.y / a[1]).powi(2) + (u.z / a[2]).powi(2);
        let r = 1.0 / q.sqrt();
        match self.groove {
            Some(g) => {
                let x = r * u.x;
                r - g.depth_mm * (-(x * x) / (2.0 * g.width_mm * g.width_mm)).exp() * smoothstep(0.0, 0.35, u.y)
            }
            None => r,
        }
    }

    pub fn cartilage_radius(&self, u: &Vec3) -> f64 {
        self.bone_radius(u) + self.thickness.at(u)
    }

    pub fn fluid_radius(&self, u: &Vec3) -> f64 {
        let f = (1.5 * sum_bumps(&self.fluid, u) - 0.25).clamp(0.0, 1.0);
        self.cartilage_radius(u) + self.fluid_mm * f
    }

    /// Surface point in the object frame; `surface` 0 is bone, 1 cartilage.
    pub fn surface_point(&self, u: &Vec3, surface: usize) -> Vec3 {
        let r = if surface == 0 { self.bone_radius(u) } else { self.cartilage_radius(u) };
        self.c() + u * r
    }

    /// Upper bound on the radius of anything belonging to the object.
    pub fn reach(&self) -> f64 {
        let a = self.semi_axes.iter().cloned().fold(0.0, f64::max);
        a + self.thickness.max_mm + self.fluid_mm + 0.5
    }

    /// 0 outside, 1 bone, 2 cartilage, 3 fluid.
    fn classify(&self, q: &Vec3) -> u8 {
        let d = q - self.c();
        let rho = d.norm();
        if rho > self.reach() {
            return 0;
        }
        if rho == 0.0 {
            return 1;
        }
        let u = d / rho;
        let rb = self.bone_radius(&u);
        if rho < rb {
            return 1;
        }
        let rc = rb + self.thickness.at(&u);
        if rho < rc {
            return 2;
        }
        if !self.fluid.is_empty() {
            let f = (1.5 * sum_bumps(&self.fluid, &u) - 0.25).clamp(0.0, 1.0);
            if rho < rc + self.fluid_mm * f {
                return 3;
            }
        }
        0
    }

    fn inside_bone(&self, q: &Vec3) -> bool {
        let d = q - self.c();
        let rho = d.norm();
        rho == 0.0 || rho < self.bone_radius(&(d / rho))
    }

    fn inside_cartilage(&self, q: &Vec3) -> bool {
        let d = q - self.c();
        let rho = d.norm();
        rho == 0.0 || rho < self.cartilage_radius(&(d / rho))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub femur_center: [f64; 3],
    pub femur_axes: [f64; 3],
    pub tibia_center: [f64; 3],
    pub tibia_axes: [f64; 3],
    pub groove: Option<Groove>,
    pub min_thickness_mm: f64,
    pub max_thickness_mm: f64,
    pub n_bumps: usize,
    /// Noise sigma as a percentage of the cartilage/background contrast.
    pub noise_percent: f64,
    /// Relative jitter of the semi-axes.
    pub shape_jitter: f64,
    pub position_jitter_mm: f64,
    pub fluid: bool,
    pub n_fluid_pockets: usize,
    pub fluid_thickness_mm: f64,
    pub lesions: bool,
    pub truth_level: u32,
    pub supersample: usize,
    /// Groove isolation plane offset from the femur centre along the
    /// superior axis (negative is inferior).
    pub isolate_offset_mm: f64,
    pub notch_contours: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [96; 3],
            spacing_mm: [0.6; 3],
            origin_mm: [0.0; 3],
            femur_center: [28.8, 28.8, 37.5],
            femur_axes: [17.0, 13.0, 12.0],
            tibia_center: [28.8, 28.8, 11.5],
            tibia_axes: [17.0, 13.0, 7.0],
            groove: Some(Groove { depth_mm: 3.0, width_mm: 3.0 }),
            min_thickness_mm: 0.8,
            max_thickness_mm: 2.6,
            n_bumps: 4,
            noise_percent: 5.0,
            shape_jitter: 0.06,
            position_jitter_mm: 1.0,
            fluid: false,
            n_fluid_pockets: 3,
            fluid_thickness_mm: 1.2,
            lesions: false,
            truth_level: 4,
            supersample: 2,
            isolate_offset_mm: -9.0,
            notch_contours: 15,
        }
    }
}

impl PhantomSpec {
    /// A smaller phantom for quick tests.
    pub fn small() -> Self {
        let s = 0.6 * 96.0 / 64.0;
        PhantomSpec { dims: [64; 3], spacing_mm: [s; 3], truth_level: 3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 32) {
            return Err(Error::InvalidInput("phantom dims must be at least 32 per axis".into()));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput("spacing must be positive".into()));
        }
        if !(self.min_thickness_mm >= 0.0 && self.max_thickness_mm >= self.min_thickness_mm) {
            return Err(Error::InvalidInput("thickness range must satisfy 0 <= min <= max".into()));
        }
        if !(self.noise_percent >= 0.0) || self.supersample == 0 {
            return Err(Error::InvalidInput("noise must be >= 0 and supersample >= 1".into()));
        }
        Ok(())
    }

    pub fn voxel_mm(&self) -> f64 {
        self.spacing_mm.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Nominal shapes without jitter, thickness bumps or confounders.
    pub fn nominal_shapes(&self) -> [ObjectShape; 2] {
        let field = |art: [f64; 3]| ThicknessField {
            min_mm: self.min_thickness_mm,
            max_mm: self.max_thickness_mm,
            articular: art,
            bumps: Vec::new(),
            lesions: Vec::new(),
            thinning_base_mm: 0.0,
            thinning_bumps: Vec::new(),
            thinning_max_mm: 0.0,
            years: 0.0,
        };
        [
            ObjectShape {
                center: self.femur_center,
                semi_axes: self.femur_axes,
                groove: self.groove,
                thickness: field([0.0, 0.0, -1.0]),
                fluid: Vec::new(),
                fluid_mm: 0.0,
            },
            ObjectShape {
                center: self.tibia_center,
                semi_axes: self.tibia_axes,
                groove: None,
                thickness: field([0.0, 0.0, 1.0]),
                fluid: Vec::new(),
                fluid_mm: 0.0,
            },
        ]
    }

    /// Mean bone shapes used to start pre-segmentation.
    pub fn mean_shapes(&self, level: u32) -> Result<Vec<TriMesh>> {
        self.nominal_shapes().iter().map(|s| shape_mesh(s, 0, level, &Affine::identity())).collect()
    }

    /// Groove isolation plane for the nominal femur.
    pub fn isolate_plane(&self) -> Plane {
        let c = v3(self.femur_center);
        Plane::new(Vec3::z(), c + Vec3::z() * self.isolate_offset_mm)
    }
}

/// Mesh of one surface of a shape, posed by `pose`.
pub fn shape_mesh(shape: &ObjectShape, surface: usize, level: u32, pose: &Affine) -> Result<TriMesh> {
    let sphere = icosphere(level);
    let verts = sphere.vertices.iter().map(|u| pose.apply(&shape.surface_point(u, surface))).collect();
    TriMesh::new_watertight(verts, sphere.triangles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomCase {
    pub spec: PhantomSpec,
    pub seed: u64,
    #[serde(skip)]
    pub volume: Option<Volume3D>,
    #[serde(skip)]
    pub labels: Option<Volume3D>,
    pub shapes: Vec<ObjectShape>,
    /// World pose of the object frame.
    pub pose: Affine,
    pub frame: Frame,
    pub notch: [f64; 3],
    pub isolate_plane: Plane,
    /// `[object][surface]`.
    #[serde(skip)]
    pub truth: Vec<[TriMesh; 2]>,
}

impl PhantomCase {
    pub fn volume(&self) -> &Volume3D {
        self.volume.as_ref().expect("phantom volume present")
    }

    pub fn labels(&self) -> &Volume3D {
        self.labels.as_ref().expect("phantom labels present")
    }

    pub fn truth_mesh(&self, object: usize, surface: usize) -> &TriMesh {
        &self.truth[object][surface]
    }

    /// Label of a world point (noise free, no supersampling).
    pub fn label_at(&self, p: &Vec3) -> u8 {
        let inv = self.pose.inverse().expect("rigid pose");
        classify(&self.shapes, &inv.apply(p))
    }

    /// Radial truth thickness of an object along direction `u` (object frame).
    pub fn thickness(&self, object: usize, u: &Vec3) -> f64 {
        self.shapes[object].thickness.at(u)
    }
}

fn classify(shapes: &[ObjectShape], q: &Vec3) -> u8 {
    let mut fluid = false;
    for (o, s) in shapes.iter().enumerate() {
        match s.classify(q) {
            1 => return bone_label(o),
            2 => return cartilage_label(o),
            3 => fluid = true,
            _ => {}
        }
    }
    if fluid {
        L_FLUID
    } else {
        L_BACKGROUND
    }
}

fn random_dir_near<R: Rng>(rng: &mut R, axis: &Vec3, max_angle: f64) -> Vec3 {
    loop {
        let d: [f64; 3] = UnitSphere.sample(rng);
        let d = v3(d);
        if d.dot(axis) >= max_angle.cos() {
            return d;
        }
    }
}

fn draw_shapes(spec: &PhantomSpec, seed: u64) -> Vec<ObjectShape> {
    let mut rng = stream(seed, "phantom/shape");
    let mut shapes = spec.nominal_shapes().to_vec();
    for s in shapes.iter_mut() {
        for a in s.semi_axes.iter_mut() {
            *a *= 1.0 + rng.gen_range(-1.0..=1.0) * spec.shape_jitter;
        }
        for c in s.center.iter_mut() {
            *c += rng.gen_range(-1.0..=1.0) * spec.position_jitter_mm;
        }
        let art = v3(s.thickness.articular);
        for _ in 0..spec.n_bumps {
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            s.thickness.bumps.push(Bump {
                dir: d,
                width: rng.gen_range(0.3..0.6),
                amp: rng.gen_range(-0.25..0.25),
            });
        }
        if spec.lesions {
            for _ in 0..2 {
                let d = random_dir_near(&mut rng, &art, 0.9);
                s.thickness.lesions.push(Bump { dir: arr(&d), width: 0.2, amp: rng.gen_range(0.4..0.7) });
            }
        }
        if spec.fluid {
            s.fluid_mm = spec.fluid_thickness_mm;
            for _ in 0..spec.n_fluid_pockets {
                let d = random_dir_near(&mut rng, &art, 1.0);
                s.fluid.push(Bump { dir: arr(&d), width: 0.35, amp: 1.0 });
            }
        }
    }
    shapes
}

/// Mean of the groove bottoms on the contour planes used by notch detection,
/// in the object frame.
fn planted_notch(shape: &ObjectShape, offset: f64, n: usize, step: f64) -> Vec3 {
    let c = shape.c();
    let mut acc = Vec3::zeros();
    for j in 0..n {
        let z = c.z + offset + (j as f64 + 0.5) * step;
        let (mut lo, mut hi) = (c.y, c.y + 2.0 * shape.reach());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if shape.inside_bone(&Vec3::new(c.x, mid, z)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        acc += Vec3::new(c.x, 0.5 * (lo + hi), z);
    }
    acc / n as f64
}

fn check_gap(shapes: &[ObjectShape], level: u32) -> Result<()> {
    let sphere = icosphere(level);
    for (o, s) in shapes.iter().enumerate() {
        for u in &sphere.vertices {
            if s.thickness.raw(u) < 0.0 {
                return Err(Error::InvalidInput(format!("thinning gives negative thickness on object {o}")));
            }
            let p = s.surface_point(u, 1);
            for (o2, s2) in shapes.iter().enumerate() {
                if o2 != o && s2.inside_cartilage(&p) {
                    return Err(Error::InvalidInput("cartilage thickness exceeds the inter-object gap".into()));
                }
            }
        }
    }
    Ok(())
}

fn render(spec: &PhantomSpec, shapes: &[ObjectShape], pose: &Affine, noise_percent: f64, seed: u64, label: &str) -> Result<(Volume3D, Volume3D)> {
    let [nx, ny, nz] = spec.dims;
    let inv = pose.inverse().ok_or_else(|| Error::Singular("phantom pose".into()))?;
    let ss = spec.supersample;
    let offs: Vec<f64> = (0..ss).map(|i| (i as f64 + 0.5) / ss as f64 - 0.5).collect();
    let grid = Volume3D::filled(spec.dims, spec.spacing_mm, spec.origin_mm, 0.0)?;
    let slices: Vec<(Vec<f32>, Vec<f32>)> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut val = Vec::with_capacity(nx * ny);
            let mut lab = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let p = grid.voxel_center(i, j, k);
                    lab.push(classify(shapes, &inv.apply(&p)) as f32);
                    let mut acc = 0.0f32;
                    for dz in &offs {
                        for dy in &offs {
                            for dx in &offs {
                                let q = p + Vec3::new(
                                    dx * spec.spacing_mm[0],
                                    dy * spec.spacing_mm[1],
                                    dz * spec.spacing_mm[2],
                                );
                                acc += LABEL_INTENSITY[classify(shapes, &inv.apply(&q)) as usize];
                            }
                        }
                    }
                    val.push(acc / (ss * ss * ss) as f32);
                }
            }
            (val, lab)
        })
        .collect();
    let mut data = Vec::with_capacity(nx * ny * nz);
    let mut labels = Vec::with_capacity(nx * ny * nz);
    for (v, l) in slices {
        data.extend(v);
        labels.extend(l);
    }
    let sigma = noise_percent / 100.0 * (CARTILAGE - BACKGROUND) as f64;
    if sigma > 0.0 {
        let mut rng = stream(seed, label);
        let nd = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for v in data.iter_mut() {
            *v += nd.sample(&mut rng) as f32;
        }
    }
    Ok((grid.with_data(data)?, grid.with_data(labels)?))
}

fn assemble(spec: &PhantomSpec, seed: u64, shapes: Vec<ObjectShape>, pose: Affine, noise_percent: f64, noise_label: &str) -> Result<PhantomCase> {
    check_gap(&shapes, spec.truth_level.max(3))?;
    let (volume, labels) = render(spec, &shapes, &pose, noise_percent, seed, noise_label)?;
    let mut truth = Vec::new();
    for s in &shapes {
        truth.push([shape_mesh(s, 0, spec.truth_level, &pose)?, shape_mesh(s, 1, spec.truth_level, &pose)?]);
    }
    let femur = &shapes[0];
    let notch = planted_notch(femur, spec.isolate_offset_mm, spec.notch_contours, spec.voxel_mm());
    let iso = Plane::new(Vec3::z(), femur.c() + Vec3::z() * spec.isolate_offset_mm).transformed(&pose);
    Ok(PhantomCase {
        spec: spec.clone(),
        seed,
        volume: Some(volume),
        labels: Some(labels),
        shapes,
        pose,
        frame: Frame::default().transformed(&pose),
        notch: arr(&pose.apply(&notch)),
        isolate_plane: iso,
        truth,
    })
}

pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<PhantomCase> {
    spec.validate()?;
    let shapes = draw_shapes(spec, seed);
    assemble(spec, seed, shapes, Affine::identity(), spec.noise_percent, "phantom/noise")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LongitudinalSpec {
    pub n_times: usize,
    /// Mean thinning rate (mm/year).
    pub thinning_base_mm: f64,
    pub thinning_max_mm: f64,
    pub thinning_bumps: usize,
    pub max_rotation_deg: f64,
    pub max_translation_mm: f64,
    /// Noise per time point; falls back to the phantom noise when missing.
    pub noise_percent: Vec<f64>,
}

impl Default for LongitudinalSpec {
    fn default() -> Self {
        LongitudinalSpec {
            n_times: 2,
            thinning_base_mm: 0.1,
            thinning_max_mm: 0.4,
            thinning_bumps: 3,
            max_rotation_deg: 4.0,
            max_translation_mm: 2.0,
            noise_percent: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LongitudinalCase {
    pub cases: Vec<PhantomCase>,
    /// Pose of each time point relative to the first.
    pub transforms: Vec<Affine>,
}

/// Rigid motion about `center`.
pub fn rigid_about(center: &Vec3, rx: f64, ry: f64, rz: f64, t: Vec3) -> Affine {
    let r = *Rotation3::from_euler_angles(rx, ry, rz).matrix();
    Affine { m: r, t: center - r * center + t }
}

pub fn generate_longitudinal(spec: &PhantomSpec, lspec: &LongitudinalSpec, seed: u64) -> Result<LongitudinalCase> {
    spec.validate()?;
    if lspec.n_times < 2 {
        return Err(Error::InvalidInput("longitudinal phantoms need at least two time points".into()));
    }
    if !(lspec.thinning_max_mm >= 0.0) {
        return Err(Error::InvalidInput("thinning bound must be non-negative".into()));
    }
    let mut shapes = draw_shapes(spec, seed);
    let mut rng = stream(seed, "phantom/thinning");
    for s in shapes.iter_mut() {
        s.thickness.thinning_base_mm = lspec.thinning_base_mm;
        s.thickness.thinning_max_mm = lspec.thinning_max_mm;
        let art = v3(s.thickness.articular);
        for _ in 0..lspec.thinning_bumps {
            let d = random_dir_near(&mut rng, &art, 1.2);
            s.thickness.thinning_bumps.push(Bump {
                dir: arr(&d),
                width: rng.gen_range(0.3..0.5),
                amp: rng.gen_range(0.0..lspec.thinning_max_mm),
            });
        }
    }
    let size = Vec3::new(
        spec.dims[0] as f64 * spec.spacing_mm[0],
        spec.dims[1] as f64 * spec.spacing_mm[1],
        spec.dims[2] as f64 * spec.spacing_mm[2],
    );
    let center = v3(spec.origin_mm) + size * 0.5;
    let mut mrng = stream(seed, "phantom/motion");
    let mut cases = Vec::new();
    let mut transforms = Vec::new();
    for t in 0..lspec.n_times {
        let pose = if t == 0 {
            Affine::identity()
        } else {
            let a = lspec.max_rotation_deg.to_radians();
            let mut r = || mrng.gen_range(-1.0..=1.0);
            let (rx, ry, rz) = (r() * a, r() * a, r() * a);
            let tr = Vec3::new(r(), r(), r()) * lspec.max_translation_mm;
            rigid_about(&center, rx, ry, rz, tr)
        };
        let mut sh = shapes.clone();
        for s in sh.iter_mut() {
            s.thickness.years = t as f64;
        }
        let noise = lspec.noise_percent.get(t).copied().unwrap_or(spec.noise_percent);
        cases.push(assemble(spec, seed, sh, pose, noise, &format!("phantom/noise/{t}"))?);
        transforms.push(pose);
    }
    Ok(LongitudinalCase { cases, transforms })
}

/// Writes `case.json`, `volume.{vol,json}`, `labels.{vol,json}` and
/// `truth_o{object}_s{surface}.json` into `dir`.
pub fn save_case(case: &PhantomCase, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("case.json"), serde_json::to_vec_pretty(case)?)?;
    case.volume().write(&dir.join("volume"))?;
    case.labels().write(&dir.join("labels"))?;
    for (o, pair) in case.truth.iter().enumerate() {
        for (s, m) in pair.iter().enumerate() {
            m.write_json(&dir.join(format!("truth_o{o}_s{s}.json")))?;
        }
    }
    Ok(())
}

pub fn load_case(dir: &Path) -> Result<PhantomCase> {
    let mut case: PhantomCase = serde_json::from_slice(&fs::read(dir.join("case.json"))?)?;
    let volume = Volume3D::read(&dir.join("volume"))?;
    let labels = Volume3D::read(&dir.join("labels"))?;
    if !volume.same_grid(&labels) {
        return Err(Error::GeometryMismatch("case volume and labels differ in geometry".into()));
    }
    let mut truth = Vec::new();
    for o in 0..case.shapes.len() {
        let read = |s: usize| TriMesh::read_json(&dir.join(format!("truth_o{o}_s{s}.json")));
        truth.push([read(0)?, read(1)?]);
    }
    case.volume = Some(volume);
    case.labels = Some(labels);
    case.truth = truth;
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> PhantomSpec {
        PhantomSpec { noise_percent: 0.0, ..PhantomSpec::small() }
    }

    #[test]
    fn case_roundtrip() {
        let case = generate_phantom(&PhantomSpec::small(), 4).unwrap();
        let dir = std::env::temp_dir().join(format!("lgs-case-{}", std::process::id()));
        save_case(&case, &dir).unwrap();
        let back = load_case(&dir).unwrap();
        assert_eq!(back.volume().data(), case.volume().data());
        assert_eq!(back.truth, case.truth);
        assert_eq!(back.shapes, case.shapes);
        assert_eq!(back.pose, case.pose);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn deterministic() {
        let s = PhantomSpec::small();
        let a = generate_phantom(&s, 7).unwrap();
        let b = generate_phantom(&s, 7).unwrap();
        assert_eq!(a.volume().data(), b.volume().data());
        let c = generate_phantom(&s, 8).unwrap();
        assert_ne!(a.volume().data(), c.volume().data());
    }

    #[test]
    fn labels_match_truth_shapes() {
        let case = generate_phantom(&quiet(), 3).unwrap();
        let lab = case.labels();
        let [nx, ny, nz] = lab.dims();
        let mut seen = [0usize; 6];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let l = lab.get(i, j, k) as usize;
                    seen[l] += 1;
                    let p = lab.voxel_center(i, j, k);
                    // cross-check against a direct radial test
                    let s = &case.shapes[0];
                    let d = p - s.c();
                    let u = d / d.norm();
                    if d.norm() < s.bone_radius(&u) - 1e-9 {
                        assert_eq!(l as u8, L_FEMUR_BONE);
                    }
                }
            }
        }
        assert!(seen[1..5].iter().all(|&c| c > 100), "{seen:?}");
        assert_eq!(seen[5], 0);
    }

    #[test]
    fn cartilage_nested_outside_bone() {
        let case = generate_phantom(&PhantomSpec { lesions: true, ..quiet() }, 5).unwrap();
        for o in 0..2 {
            let b = case.truth_mesh(o, 0);
            let c = case.truth_mesh(o, 1);
            let ctr = case.shapes[o].c();
            for (pb, pc) in b.vertices.iter().zip(&c.vertices) {
                assert!((pc - ctr).norm() >= (pb - ctr).norm() - 1e-12);
            }
        }
    }

    #[test]
    fn fluid_present_when_enabled() {
        let case = generate_phantom(&PhantomSpec { fluid: true, ..quiet() }, 11).unwrap();
        assert!(case.labels().data().iter().any(|&l| l as u8 == L_FLUID));
    }

    #[test]
    fn rejects_overlapping_cartilage() {
        let spec = PhantomSpec { min_thickness_mm: 5.0, max_thickness_mm: 6.0, ..quiet() };
        assert!(generate_phantom(&spec, 1).is_err());
    }

    #[test]
    fn planted_notch_on_groove() {
        let case = generate_phantom(&quiet(), 2).unwrap();
        let s = &case.shapes[0];
        let n = v3(case.notch);
        assert!((n.x - s.center[0]).abs() < 1e-9);
        // anterior of the centre and below it
        assert!(n.y > s.center[1] && n.z < s.center[2]);
    }

    #[test]
    fn longitudinal_thinning_bound() {
        let spec = PhantomSpec { truth_level: 2, ..quiet() };
        let ls = LongitudinalSpec { thinning_base_mm: 0.6, thinning_max_mm: 0.6, thinning_bumps: 0, ..Default::default() };
        let lc = generate_longitudinal(&spec, &ls, 4).unwrap();
        let sphere = icosphere(2);
        let mut max_change: f64 = 0.0;
        for u in &sphere.vertices {
            let a = lc.cases[0].thickness(0, u);
            let b = lc.cases[1].thickness(0, u);
            max_change = max_change.max((a - b).abs());
        }
        assert!((max_change - 0.6).abs() < 1e-12);
        // pose inverse brings meshes back
        let inv = lc.transforms[1].inverse().unwrap();
        let m1 = lc.cases[1].truth_mesh(1, 0).transformed(&inv);
        let m0 = lc.cases[0].truth_mesh(1, 0);
        let rms = (m0.vertices.iter().zip(&m1.vertices).map(|(a, b)| (a - b).norm_squared()).sum::<f64>()
            / m0.vertices.len() as f64)
            .sqrt();
        assert!(rms < 1e-9);
    }

    #[test]
    fn zero_thinning_keeps_cartilage() {
        let spec = PhantomSpec { truth_level: 2, ..quiet() };
        let ls = LongitudinalSpec { thinning_base_mm: 0.0, thinning_bumps: 0, ..Default::default() };
        let lc = generate_longitudinal(&spec, &ls, 9).unwrap();
        let inv = lc.transforms[1].inverse().unwrap();
        let m1 = lc.cases[1].truth_mesh(0, 1).transformed(&inv);
        for (a, b) in lc.cases[0].truth_mesh(0, 1).vertices.iter().zip(&m1.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
