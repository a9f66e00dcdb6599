//! Scalar volumes on a regular grid with physical spacing.
//!
//! On disk a volume is a raw little-endian f32 payload (`.vol`, x fastest)
//! plus a JSON header with dims, spacing and origin in millimetres.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput(format!("zero dimension in {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput(format!("spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidInput("origin must be finite".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidInput(format!("expected {n} samples, got {}", data.len())));
        }
        Ok(Volume3D { dims, spacing, origin, data })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing, origin, vec![value; dims.iter().product()])
    }

    pub fn from_fn<F: FnMut(usize, usize, usize) -> f32>(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        mut f: F,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, spacing, origin, data)
    }

    /// Same grid, new samples.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }
    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    /// Value at integer coordinates clamped into the grid.
    #[inline]
    pub fn get_clamped(&self, i: isize, j: isize, k: isize) -> f32 {
        let c = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        self.get(c(i, self.dims[0]), c(j, self.dims[1]), c(k, self.dims[2]))
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    /// Continuous voxel coordinates of a physical point.
    pub fn to_voxel(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        )
    }

    /// Physical extent `[min, max]` of voxel centres.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let lo = Vec3::from(self.origin);
        let hi = self.voxel_center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        (lo, hi)
    }

    /// Trilinear interpolation with coordinates clamped to the grid.
    pub fn sample(&self, p: &Vec3) -> f64 {
        let u = self.to_voxel(p);
        let mut i0 = [0usize; 3];
        let mut fr = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            if n == 1 {
                continue;
            }
            let c = u[a].clamp(0.0, (n - 1) as f64);
            let f = (c.floor() as usize).min(n - 2);
            i0[a] = f;
            fr[a] = c - f as f64;
        }
        let step = |a: usize| if self.dims[a] > 1 { 1 } else { 0 };
        let (sx, sy, sz) = (step(0), step(1), step(2));
        let g = |di: usize, dj: usize, dk: usize| self.get(i0[0] + di, i0[1] + dj, i0[2] + dk) as f64;
        let c00 = g(0, 0, 0) * (1.0 - fr[0]) + g(sx, 0, 0) * fr[0];
        let c10 = g(0, sy, 0) * (1.0 - fr[0]) + g(sx, sy, 0) * fr[0];
        let c01 = g(0, 0, sz) * (1.0 - fr[0]) + g(sx, 0, sz) * fr[0];
        let c11 = g(0, sy, sz) * (1.0 - fr[0]) + g(sx, sy, sz) * fr[0];
        let c0 = c00 * (1.0 - fr[1]) + c10 * fr[1];
        let c1 = c01 * (1.0 - fr[1]) + c11 * fr[1];
        c0 * (1.0 - fr[2]) + c1 * fr[2]
    }

    pub fn same_grid(&self, other: &Volume3D) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            dims: self.dims,
            spacing_mm: self.spacing,
            origin_mm: self.origin,
            dtype: "f32le".into(),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(header: &VolumeHeader, bytes: &[u8]) -> Result<Self> {
        if header.dtype != "f32le" {
            return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
        }
        let n: usize = header.dims.iter().product();
        if bytes.len() != n * 4 {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {}",
                bytes.len(),
                n * 4
            )));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self::new(header.dims, header.spacing_mm, header.origin_mm, data)
    }

    /// Writes `<stem>.vol` and `<stem>.json`. Returns the payload path.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        let (vol, hdr) = volume_paths(path);
        if let Some(dir) = vol.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(&vol, self.to_le_bytes())?;
        fs::write(&hdr, serde_json::to_vec_pretty(&self.header())?)?;
        Ok(vol)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (vol, hdr) = volume_paths(path);
        let header: VolumeHeader = serde_json::from_slice(&fs::read(&hdr)?)?;
        Self::from_le_bytes(&header, &fs::read(&vol)?)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }
}

/// Payload and header paths for a volume given either the `.vol` path or a stem.
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = if path.extension().map_or(false, |e| e == "vol" || e == "json") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let s = stem.to_string_lossy();
    (PathBuf::from(format!("{s}.vol")), PathBuf::from(format!("{s}.json")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume3D::filled([0, 2, 2], [1.0; 3], [0.0; 3], 0.0).is_err());
        assert!(Volume3D::filled([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3], 0.0).is_err());
        assert!(Volume3D::new([2, 2, 2], [1.0; 3], [0.0; 3], vec![0.0; 7]).is_err());
    }

    #[test]
    fn trilinear_reproduces_linear_fields() {
        let v = Volume3D::from_fn([5, 6, 7], [0.5, 0.7, 1.1], [1.0, -2.0, 3.0], |i, j, k| {
            (2.0 * i as f32) - (j as f32) + 0.5 * k as f32
        })
        .unwrap();
        let f = |p: &Vec3| {
            let u = v.to_voxel(p);
            2.0 * u.x - u.y + 0.5 * u.z
        };
        for p in [Vec3::new(1.3, -1.1, 4.0), Vec3::new(2.9, 1.0, 8.7)] {
            assert!((v.sample(&p) - f(&p)).abs() < 1e-5);
        }
        // clamped outside the grid
        assert_eq!(v.sample(&Vec3::new(-100.0, -100.0, -100.0)), v.get(0, 0, 0) as f64);
    }

    #[test]
    fn paths_accept_stem_or_payload() {
        let (a, b) = volume_paths(Path::new("/x/img.vol"));
        assert_eq!(a, PathBuf::from("/x/img.vol"));
        assert_eq!(b, PathBuf::from("/x/img.json"));
        let (a, _) = volume_paths(Path::new("/x/img"));
        assert_eq!(a, PathBuf::from("/x/img.vol"));
    }
}
