//! Small geometric helpers shared across modules.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Vec3 = Vector3<f64>;

pub fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Rigid or affine transform `p -> m * p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: Matrix3<f64>,
    pub t: Vec3,
}

impl Affine {
    pub fn identity() -> Self {
        Affine { m: Matrix3::identity(), t: Vec3::zeros() }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.m * p + self.t
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.m * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Affine) -> Affine {
        Affine { m: self.m * other.m, t: self.m * other.t + self.t }
    }

    pub fn inverse(&self) -> Option<Affine> {
        let mi = self.m.try_inverse()?;
        Some(Affine { m: mi, t: -(mi * self.t) })
    }

    /// Row-major 3x4 matrix.
    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        let mut r = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = self.m[(i, j)];
            }
            r[i][3] = self.t[i];
        }
        r
    }

    pub fn from_rows(r: &[[f64; 4]; 3]) -> Affine {
        let mut m = Matrix3::zeros();
        let mut t = Vec3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = r[i][j];
            }
            t[i] = r[i][3];
        }
        Affine { m, t }
    }

    /// Rotation from Euler angles (radians, applied x then y then z) and a translation.
    pub fn from_euler(rx: f64, ry: f64, rz: f64, t: Vec3) -> Affine {
        let rot = nalgebra::Rotation3::from_euler_angles(rx, ry, rz);
        Affine { m: *rot.matrix(), t }
    }
}

impl Serialize for Affine {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Affine {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = <[[f64; 4]; 3]>::deserialize(d)?;
        Ok(Affine::from_rows(&r))
    }
}

/// Oriented plane `n . (x - p) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub point: [f64; 3],
}

impl Plane {
    /// Normalises `normal`.
    pub fn new(normal: Vec3, point: Vec3) -> Plane {
        let n = normal.normalize();
        Plane { normal: arr(&n), point: arr(&point) }
    }

    pub fn n(&self) -> Vec3 {
        v3(self.normal)
    }

    pub fn p(&self) -> Vec3 {
        v3(self.point)
    }

    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        self.n().dot(&(x - self.p()))
    }

    pub fn transformed(&self, t: &Affine) -> Plane {
        Plane::new(t.apply_vector(&self.n()), t.apply(&self.p()))
    }
}

/// Anatomical axes: medial-lateral, anterior-posterior (anterior positive)
/// and superior-inferior (superior positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub ml: [f64; 3],
    pub ap: [f64; 3],
    pub si: [f64; 3],
}

impl Default for Frame {
    fn default() -> Self {
        Frame { ml: [1.0, 0.0, 0.0], ap: [0.0, 1.0, 0.0], si: [0.0, 0.0, 1.0] }
    }
}

impl Frame {
    pub fn transformed(&self, t: &Affine) -> Frame {
        let f = |a: [f64; 3]| arr(&t.apply_vector(&v3(a)).normalize());
        Frame { ml: f(self.ml), ap: f(self.ap), si: f(self.si) }
    }
}

/// Closest distance between segments `p0-p1` and `q0-q1`.
pub fn segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-18;
    let (s, t);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

/// Distance from `p` to segment `a-b` and the segment parameter of the foot point.
pub fn point_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> (f64, f64) {
    let d = b - a;
    let l2 = d.dot(&d);
    let t = if l2 > 0.0 { ((p - a).dot(&d) / l2).clamp(0.0, 1.0) } else { 0.0 };
    ((a + d * t - p).norm(), t)
}
