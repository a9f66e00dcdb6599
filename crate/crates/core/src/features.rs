//! Per-node features for the second-stage classifiers.
//!
//! Twenty-eight features are volumes sampled trilinearly at column nodes;
//! the last two are derivatives along the column of the sampled NAF
//! probability and intensity profiles.
//!
//! Gaussian derivative kernels are sampled at voxel centres, truncated at
//! 4 sigma and renormalised so that smoothing preserves constants and the
//! first and second derivative kernels are exact on linear and quadratic
//! ramps.

use rayon::prelude::*;

use crate::columns::ColumnSet;
use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub const N_FEATURES: usize = 30;
pub const N_VOLUME_FEATURES: usize = 28;

pub const HESSIAN_SIGMAS: [f64; 3] = [0.5, 1.0, 2.0];
pub const GRADIENT_SIGMAS: [f64; 3] = [0.36, 0.7, 1.4];
pub const SMOOTH_SIGMA: f64 = 0.7;
pub const LAPLACIAN_SIGMAS: [f64; 2] = [0.36, 0.7];
pub const STATS_WINDOW_MM: f64 = 2.0;
pub const HAAR_MM: f64 = 1.5;
pub const GABOR_WAVELENGTH_MM: f64 = 4.0;
pub const GABOR_SIGMA_MM: f64 = 1.0;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "hessian_l1_s0.5",
    "hessian_l2_s0.5",
    "hessian_l3_s0.5",
    "hessian_l1_s1.0",
    "hessian_l2_s1.0",
    "hessian_l3_s1.0",
    "hessian_l1_s2.0",
    "hessian_l2_s2.0",
    "hessian_l3_s2.0",
    "grad_intensity_s0.36",
    "grad_intensity_s0.7",
    "grad_intensity_s1.4",
    "grad_naf_s0.36",
    "grad_naf_s0.7",
    "grad_naf_s1.4",
    "intensity",
    "smoothed_intensity_s0.7",
    "naf",
    "laplacian_s0.36",
    "laplacian_s0.7",
    "gabor_z",
    "window_mean",
    "window_variance",
    "window_skewness",
    "window_kurtosis",
    "haar_x",
    "haar_y",
    "haar_z",
    "column_grad_naf",
    "column_grad_intensity",
];

pub type NodeFeatures = [f32; N_FEATURES];

/// Discrete Gaussian kernels (order 0, 1, 2) for `sigma` in voxels.
pub fn gaussian_kernels(sigma: f64) -> [Vec<f64>; 3] {
    let r = (4.0 * sigma).ceil().max(1.0) as i64;
    let xs: Vec<f64> = (-r..=r).map(|i| i as f64).collect();
    let g: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g0: Vec<f64> = g.iter().map(|v| v / s).collect();
    // correlation form: out(i) = sum_j f(i + j) k(j)
    let mut g1: Vec<f64> = xs.iter().zip(&g0).map(|(x, v)| x * v).collect();
    let m1: f64 = xs.iter().zip(&g1).map(|(x, v)| x * v).sum();
    for v in g1.iter_mut() {
        *v /= m1;
    }
    let mut g2: Vec<f64> = xs.iter().zip(&g0).map(|(x, v)| (x * x - sigma * sigma) * v).collect();
    let m0: f64 = g2.iter().sum::<f64>() / g2.len() as f64;
    // remove the DC part with a constant offset, then scale so sum x^2 k = 2
    for v in g2.iter_mut() {
        *v -= m0;
    }
    let c: f64 = g2.iter().sum();
    let n = g2.len() as f64;
    for v in g2.iter_mut() {
        *v -= c / n;
    }
    let m2: f64 = xs.iter().zip(&g2).map(|(x, v)| x * x * v).sum();
    for v in g2.iter_mut() {
        *v *= 2.0 / m2;
    }
    [g0, g1, g2]
}

/// Correlation along one axis with clamped borders.
fn conv_axis(data: &[f32], dims: [usize; 3], axis: usize, k: &[f64]) -> Vec<f32> {
    let [nx, ny, nz] = dims;
    let r = (k.len() / 2) as isize;
    let n = dims[axis] as isize;
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let mut out = vec![0f32; data.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                let pos = [x, y, z][axis] as isize;
                let base = x + nx * (y + ny * z) - (pos as usize) * stride;
                let mut acc = 0.0f64;
                for (j, kv) in k.iter().enumerate() {
                    let q = (pos + j as isize - r).clamp(0, n - 1) as usize;
                    acc += data[base + q * stride] as f64 * kv;
                }
                slab[x + nx * y] = acc as f32;
            }
        }
    });
    let _ = nz;
    out
}

struct Derivs {
    smooth: Vec<f32>,
    grad: [Vec<f32>; 3],
    hess: Option<[Vec<f32>; 6]>,
}

/// Gaussian derivatives at scale `sigma_mm`; Hessian entries in the order
/// xx, yy, zz, xy, xz, yz.
fn derivatives(vol: &Volume3D, sigma_mm: f64, hessian: bool) -> Derivs {
    let dims = vol.dims();
    let sp = vol.spacing();
    let kx = gaussian_kernels(sigma_mm / sp[0]);
    let ky = gaussian_kernels(sigma_mm / sp[1]);
    let kz = gaussian_kernels(sigma_mm / sp[2]);
    let scale1 = |k: &[f64], s: f64| k.iter().map(|v| v / s).collect::<Vec<f64>>();
    let scale2 = |k: &[f64], s: f64| k.iter().map(|v| v / (s * s)).collect::<Vec<f64>>();
    let (x0, x1, x2) = (kx[0].clone(), scale1(&kx[1], sp[0]), scale2(&kx[2], sp[0]));
    let (y0, y1, y2) = (ky[0].clone(), scale1(&ky[1], sp[1]), scale2(&ky[2], sp[1]));
    let (z0, z1, z2) = (kz[0].clone(), scale1(&kz[1], sp[2]), scale2(&kz[2], sp[2]));
    let d = vol.data();
    let c = |data: &[f32], axis: usize, k: &[f64]| conv_axis(data, dims, axis, k);
    let zs0 = c(d, 2, &z0);
    let zs1 = c(d, 2, &z1);
    let z0y0 = c(&zs0, 1, &y0);
    let z0y1 = c(&zs0, 1, &y1);
    let z1y0 = c(&zs1, 1, &y0);
    let smooth = c(&z0y0, 0, &x0);
    let grad = [c(&z0y0, 0, &x1), c(&z0y1, 0, &x0), c(&z1y0, 0, &x0)];
    let hess = if hessian {
        let zs2 = c(d, 2, &z2);
        let z0y2 = c(&zs0, 1, &y2);
        let z2y0 = c(&zs2, 1, &y0);
        let z1y1 = c(&zs1, 1, &y1);
        Some([
            c(&z0y0, 0, &x2),
            c(&z0y2, 0, &x0),
            c(&z2y0, 0, &x0),
            c(&z0y1, 0, &x1),
            c(&z1y0, 0, &x1),
            c(&z1y1, 0, &x0),
        ])
    } else {
        None
    };
    Derivs { smooth, grad, hess }
}

/// Eigenvalues of a symmetric 3x3 matrix, sorted by absolute value.
pub fn sym3_eigenvalues(a: [f64; 6]) -> [f64; 3] {
    let [xx, yy, zz, xy, xz, yz] = a;
    let p1 = xy * xy + xz * xz + yz * yz;
    let mut ev = if p1 <= 1e-30 * (xx * xx + yy * yy + zz * zz).max(1e-300) {
        [xx, yy, zz]
    } else {
        let q = (xx + yy + zz) / 3.0;
        let p2 = (xx - q).powi(2) + (yy - q).powi(2) + (zz - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let (bxx, byy, bzz) = ((xx - q) / p, (yy - q) / p, (zz - q) / p);
        let (bxy, bxz, byz) = (xy / p, xz / p, yz / p);
        let det = bxx * (byy * bzz - byz * byz) - bxy * (bxy * bzz - byz * bxz) + bxz * (bxy * byz - byy * bxz);
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    };
    ev.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    ev
}

/// Summed-volume table with a zero border, for O(1) box sums.
pub struct IntegralVolume {
    dims: [usize; 3],
    s: Vec<f64>,
}

impl IntegralVolume {
    pub fn new(data: &[f32], dims: [usize; 3]) -> Self {
        Self::from_fn(dims, |i| data[i] as f64)
    }

    pub fn from_fn<F: Fn(usize) -> f64>(dims: [usize; 3], f: F) -> Self {
        let [nx, ny, nz] = dims;
        let (sx, sy) = (nx + 1, ny + 1);
        let mut s = vec![0f64; sx * sy * (nz + 1)];
        for z in 0..nz {
            for y in 0..ny {
                let mut row = 0.0;
                for x in 0..nx {
                    row += f(x + nx * (y + ny * z));
                    let i = (x + 1) + sx * ((y + 1) + sy * (z + 1));
                    s[i] = row + s[i - sx] + s[i - sx * sy] - s[i - sx - sx * sy];
                }
            }
        }
        IntegralVolume { dims, s }
    }

    /// Sum over the half-open box `[lo, hi)`, clipped to the grid.
    pub fn sum(&self, lo: [isize; 3], hi: [isize; 3]) -> f64 {
        let cl = |v: isize, a: usize| v.clamp(0, self.dims[a] as isize) as usize;
        let (x0, y0, z0) = (cl(lo[0], 0), cl(lo[1], 1), cl(lo[2], 2));
        let (x1, y1, z1) = (cl(hi[0], 0), cl(hi[1], 1), cl(hi[2], 2));
        if x1 <= x0 || y1 <= y0 || z1 <= z0 {
            return 0.0;
        }
        let sx = self.dims[0] + 1;
        let sy = self.dims[1] + 1;
        let at = |x: usize, y: usize, z: usize| self.s[x + sx * (y + sy * z)];
        at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0)
    }

    /// Number of grid voxels in the clipped box.
    pub fn count(&self, lo: [isize; 3], hi: [isize; 3]) -> usize {
        let mut n = 1usize;
        for a in 0..3 {
            let l = lo[a].clamp(0, self.dims[a] as isize);
            let h = hi[a].clamp(0, self.dims[a] as isize);
            n *= (h - l).max(0) as usize;
        }
        n
    }
}

/// Windowed mean, variance, skewness and excess kurtosis.
fn window_stats(vol: &Volume3D) -> [Vec<f32>; 4] {
    let dims = vol.dims();
    let sp = vol.spacing();
    let d = vol.data();
    let half: Vec<isize> = (0..3).map(|a| (((STATS_WINDOW_MM / sp[a]).round() as isize).max(1) - 1) / 2).collect();
    let m = d.iter().map(|v| *v as f64).sum::<f64>() / d.len() as f64;
    // centre on the global mean to keep the power sums well conditioned
    let iv: Vec<IntegralVolume> =
        (1..=4).map(|p| IntegralVolume::from_fn(dims, |i| (d[i] as f64 - m).powi(p))).collect();
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    let mut out = [vec![0f32; n], vec![0f32; n], vec![0f32; n], vec![0f32; n]];
    let rows: Vec<[f32; 4]> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let x = (idx % nx) as isize;
            let y = ((idx / nx) % ny) as isize;
            let z = (idx / (nx * ny)) as isize;
            let lo = [x - half[0], y - half[1], z - half[2]];
            let hi = [x + half[0] + 1, y + half[1] + 1, z + half[2] + 1];
            let cnt = iv[0].count(lo, hi) as f64;
            let s: Vec<f64> = iv.iter().map(|t| t.sum(lo, hi) / cnt).collect();
            // raw moments about m -> central moments about the window mean
            let mu = s[0];
            let var = (s[1] - mu * mu).max(0.0);
            let m3 = s[2] - 3.0 * mu * s[1] + 2.0 * mu.powi(3);
            let m4 = s[3] - 4.0 * mu * s[2] + 6.0 * mu * mu * s[1] - 3.0 * mu.powi(4);
            let scale = (m * m).max(1.0);
            let (skew, kurt) = if var > 1e-10 * scale {
                (m3 / var.powf(1.5), m4 / (var * var) - 3.0)
            } else {
                (0.0, 0.0)
            };
            let var = if var > 1e-10 * scale { var } else { 0.0 };
            [(mu + m) as f32, var as f32, skew as f32, kurt as f32]
        })
        .collect();
    for (i, r) in rows.iter().enumerate() {
        for f in 0..4 {
            out[f][i] = r[f];
        }
    }
    out
}

/// Difference of box means on either side of each voxel along each axis.
fn haar(vol: &Volume3D) -> [Vec<f32>; 3] {
    let dims = vol.dims();
    let sp = vol.spacing();
    let iv = IntegralVolume::new(vol.data(), dims);
    let [nx, ny, _] = dims;
    let n = vol.len();
    let mut res: [Vec<f32>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (axis, out) in res.iter_mut().enumerate() {
        let h: Vec<isize> = (0..3).map(|a| ((HAAR_MM / 2.0 / sp[a]).round() as isize).max(1)).collect();
        out.par_iter_mut().enumerate().for_each(|(idx, o)| {
            let p = [(idx % nx) as isize, ((idx / nx) % ny) as isize, (idx / (nx * ny)) as isize];
            let mut lo = [0isize; 3];
            let mut hi = [0isize; 3];
            for a in 0..3 {
                lo[a] = p[a] - h[a];
                hi[a] = p[a] + h[a] + 1;
            }
            let (mut plo, mut nhi) = (lo, hi);
            plo[axis] = p[axis] + 1;
            nhi[axis] = p[axis];
            let (cp, cn) = (iv.count(plo, hi), iv.count(lo, nhi));
            if cp == 0 || cn == 0 {
                *o = 0.0;
                return;
            }
            *o = (iv.sum(plo, hi) / cp as f64 - iv.sum(lo, nhi) / cn as f64) as f32;
        });
    }
    res
}

/// Zero-mean Gabor magnitude along z with a Gaussian envelope.
fn gabor(vol: &Volume3D) -> Vec<f32> {
    let dims = vol.dims();
    let sp = vol.spacing();
    let env = |axis: usize| gaussian_kernels(GABOR_SIGMA_MM / sp[axis])[0].clone();
    let gz = env(2);
    let r = (gz.len() / 2) as f64;
    let w = 2.0 * std::f64::consts::PI * sp[2] / GABOR_WAVELENGTH_MM;
    let mut kc: Vec<f64> = gz.iter().enumerate().map(|(j, g)| g * (w * (j as f64 - r)).cos()).collect();
    let ks: Vec<f64> = gz.iter().enumerate().map(|(j, g)| g * (w * (j as f64 - r)).sin()).collect();
    let dc: f64 = kc.iter().sum();
    for (v, g) in kc.iter_mut().zip(&gz) {
        *v -= dc * g;
    }
    let d = vol.data();
    let xy = conv_axis(&conv_axis(d, dims, 0, &env(0)), dims, 1, &env(1));
    let re = conv_axis(&xy, dims, 2, &kc);
    let im = conv_axis(&xy, dims, 2, &ks);
    re.iter().zip(&im).map(|(a, b)| a.hypot(*b)).collect()
}

fn grad_mag(g: &[Vec<f32>; 3]) -> Vec<f32> {
    (0..g[0].len()).map(|i| (g[0][i].powi(2) + g[1][i].powi(2) + g[2][i].powi(2)).sqrt()).collect()
}

/// The 28 volume features.
pub struct FeatureStack {
    pub volumes: Vec<Volume3D>,
}

impl FeatureStack {
    pub fn compute(intensity: &Volume3D, naf: &Volume3D) -> Result<FeatureStack> {
        if !intensity.same_grid(naf) {
            return Err(Error::GeometryMismatch("intensity and NAF volumes differ in geometry".into()));
        }
        let mut f: Vec<Vec<f32>> = Vec::with_capacity(N_VOLUME_FEATURES);
        for &s in &HESSIAN_SIGMAS {
            let h = derivatives(intensity, s, true).hess.expect("hessian requested");
            let ev: Vec<[f64; 3]> = (0..intensity.len())
                .into_par_iter()
                .map(|i| {
                    sym3_eigenvalues([
                        h[0][i] as f64,
                        h[1][i] as f64,
                        h[2][i] as f64,
                        h[3][i] as f64,
                        h[4][i] as f64,
                        h[5][i] as f64,
                    ])
                })
                .collect();
            for j in 0..3 {
                f.push(ev.iter().map(|e| e[j] as f32).collect());
            }
        }
        for &s in &GRADIENT_SIGMAS {
            f.push(grad_mag(&derivatives(intensity, s, false).grad));
        }
        for &s in &GRADIENT_SIGMAS {
            f.push(grad_mag(&derivatives(naf, s, false).grad));
        }
        f.push(intensity.data().to_vec());
        f.push(derivatives(intensity, SMOOTH_SIGMA, false).smooth);
        f.push(naf.data().to_vec());
        for &s in &LAPLACIAN_SIGMAS {
            let h = derivatives(intensity, s, true).hess.expect("hessian requested");
            f.push((0..intensity.len()).map(|i| h[0][i] + h[1][i] + h[2][i]).collect());
        }
        f.push(gabor(intensity));
        f.extend(window_stats(intensity));
        f.extend(haar(intensity));
        debug_assert_eq!(f.len(), N_VOLUME_FEATURES);
        let volumes = f.into_iter().map(|d| intensity.with_data(d)).collect::<Result<Vec<_>>>()?;
        Ok(FeatureStack { volumes })
    }

    pub fn write_debug(&self, dir: &std::path::Path) -> Result<()> {
        for (v, name) in self.volumes.iter().zip(FEATURE_NAMES.iter()) {
            v.write(&dir.join(name))?;
        }
        Ok(())
    }
}

fn column_gradient(p: &[f64], spacing: f64) -> Vec<f64> {
    let n = p.len();
    (0..n)
        .map(|k| {
            let a = k.saturating_sub(1);
            let b = (k + 1).min(n - 1);
            if b == a {
                0.0
            } else {
                (p[b] - p[a]) / ((b - a) as f64 * spacing)
            }
        })
        .collect()
}

/// Feature vectors for every node of column `c`.
pub fn node_features(stack: &FeatureStack, intensity: &Volume3D, naf: &Volume3D, cs: &ColumnSet, c: usize) -> Vec<NodeFeatures> {
    let k = cs.n_nodes;
    let pts: Vec<_> = (0..k).map(|i| cs.node(c, i)).collect();
    let pn: Vec<f64> = pts.iter().map(|p| naf.sample(p)).collect();
    let pi: Vec<f64> = pts.iter().map(|p| intensity.sample(p)).collect();
    let gn = column_gradient(&pn, cs.spacing_mm);
    let gi = column_gradient(&pi, cs.spacing_mm);
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut v = [0f32; N_FEATURES];
            for (j, vol) in stack.volumes.iter().enumerate() {
                v[j] = vol.sample(p) as f32;
            }
            v[28] = gn[i] as f32;
            v[29] = gi[i] as f32;
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_exact_on_ramps() {
        for s in [0.6, 1.0, 2.5] {
            let [g0, g1, g2] = gaussian_kernels(s);
            let r = (g0.len() / 2) as f64;
            let x = |j: usize| j as f64 - r;
            assert!((g0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(g1.iter().sum::<f64>().abs() < 1e-12);
            assert!(((0..g1.len()).map(|j| x(j) * g1[j]).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(g2.iter().sum::<f64>().abs() < 1e-12);
            assert!((0..g2.len()).map(|j| x(j) * g2[j]).sum::<f64>().abs() < 1e-12);
            assert!(((0..g2.len()).map(|j| x(j) * x(j) * g2[j]).sum::<f64>() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvalues_match_nalgebra() {
        let a = [2.0, -1.0, 0.5, 0.3, -0.7, 0.2];
        let m = nalgebra::Matrix3::new(a[0], a[3], a[4], a[3], a[1], a[5], a[4], a[5], a[2]);
        let mut want: Vec<f64> = m.symmetric_eigenvalues().iter().cloned().collect();
        want.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let got = sym3_eigenvalues(a);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{got:?} {want:?}");
        }
        assert_eq!(sym3_eigenvalues([3.0, -1.0, 2.0, 0.0, 0.0, 0.0]), [-1.0, 2.0, 3.0]);
    }

    #[test]
    fn integral_volume_box_sums() {
        let dims = [4, 5, 3];
        let data: Vec<f32> = (0..60).map(|i| (i * 7 % 11) as f32).collect();
        let iv = IntegralVolume::new(&data, dims);
        let lo = [1, 0, 1];
        let hi = [3, 4, 3];
        let mut want = 0.0;
        for z in 1..3 {
            for y in 0..4 {
                for x in 1..3 {
                    want += data[x + 4 * (y + 5 * z)] as f64;
                }
            }
        }
        assert_eq!(iv.sum(lo, hi), want);
        assert_eq!(iv.sum([-5, -5, -5], [10, 10, 10]), data.iter().map(|v| *v as f64).sum::<f64>());
    }

    #[test]
    fn constant_volume() {
        let v = Volume3D::filled([12, 12, 12], [0.6; 3], [0.0; 3], 100.0).unwrap();
        let n = Volume3D::filled([12, 12, 12], [0.6; 3], [0.0; 3], 0.25).unwrap();
        let st = FeatureStack::compute(&v, &n).unwrap();
        for (j, vol) in st.volumes.iter().enumerate() {
            let zero = [0..15, 18..21, 22..25, 25..28].iter().any(|r| r.contains(&j));
            for &x in vol.data() {
                if zero {
                    assert!(x.abs() < 1e-3, "feature {j} = {x}");
                }
            }
        }
        assert!((st.volumes[21].data()[500] - 100.0).abs() < 1e-3);
        assert!((st.volumes[15].data()[500] - 100.0).abs() < 1e-6);
    }

    #[test]
    fn mismatch_rejected() {
        let v = Volume3D::filled([8, 8, 8], [0.6; 3], [0.0; 3], 1.0).unwrap();
        let n = Volume3D::filled([8, 8, 9], [0.6; 3], [0.0; 3], 1.0).unwrap();
        assert!(FeatureStack::compute(&v, &n).is_err());
    }

    #[test]
    fn symmetric_window_has_zero_skew() {
        // a ramp gives each interior 3x3x3 window the values x-1, x, x+1 equally often
        let v = Volume3D::from_fn([9, 9, 9], [0.6; 3], [0.0; 3], |i, _, _| 10.0 + 3.0 * i as f32).unwrap();
        let [mean, var, skew, kurt] = window_stats(&v);
        let idx = v.index(4, 4, 4);
        assert!((mean[idx] - 22.0).abs() < 1e-4);
        assert!((var[idx] - 6.0).abs() < 1e-4);
        assert!(skew[idx].abs() < 1e-6);
        // three equally likely points: kurtosis 1.5, excess -1.5
        assert!((kurt[idx] + 1.5).abs() < 1e-4);
    }

    #[test]
    fn blob_laplacian_matches_closed_form() {
        let s0 = 1.5;
        let sp = 0.2;
        let n = 64;
        let c = (n as f64 - 1.0) / 2.0;
        let v = Volume3D::from_fn([n, n, n], [sp; 3], [0.0; 3], |i, j, k| {
            let r2 = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2) + (k as f64 - c).powi(2)) * sp * sp;
            (1000.0 * (-r2 / (2.0 * s0 * s0)).exp()) as f32
        })
        .unwrap();
        for s in LAPLACIAN_SIGMAS {
            let h = derivatives(&v, s, true).hess.unwrap();
            // n even: average the 8 voxels around the centre and compare at the offset radius
            let t2 = s0 * s0 + s * s;
            let amp = 1000.0 * (s0 * s0 / t2).powf(1.5);
            let r2 = 3.0 * (0.5 * sp) * (0.5 * sp);
            let want = amp * (r2 / (t2 * t2) - 3.0 / t2) * (-r2 / (2.0 * t2)).exp();
            let i = v.index(n / 2, n / 2, n / 2);
            let got = (h[0][i] + h[1][i] + h[2][i]) as f64;
            assert!(((got - want) / want).abs() < 0.02, "sigma {s}: {got} vs {want}");
        }
    }
}
