//! Training patches for the neighbourhood approximation forest.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::IntegralVolume;
use crate::phantom;
use crate::rng::stream;
use crate::volume::Volume3D;

pub const SEG_BACKGROUND: u8 = 0;
pub const SEG_CARTILAGE: u8 = 1;
pub const SEG_BAND: u8 = 2;

/// Segmentation labels for patches: cartilage, a band of `band` voxels
/// around it (negative examples), everything else background.
pub fn segmentation_labels(labels: &Volume3D, band: usize) -> Vec<u8> {
    let [nx, ny, nz] = labels.dims();
    let cart: Vec<bool> = labels
        .data()
        .iter()
        .map(|&l| l as u8 == phantom::L_FEMUR_CART || l as u8 == phantom::L_TIBIA_CART)
        .collect();
    let mut out: Vec<u8> = cart.iter().map(|&c| if c { SEG_CARTILAGE } else { SEG_BACKGROUND }).collect();
    let b = band as isize;
    let offs: Vec<(isize, isize, isize)> = (-b..=b)
        .flat_map(|z| (-b..=b).flat_map(move |y| (-b..=b).map(move |x| (x, y, z))))
        .filter(|(x, y, z)| x * x + y * y + z * z <= b * b && (*x, *y, *z) != (0, 0, 0))
        .collect();
    for z in 0..nz as isize {
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                let i = (x + nx as isize * (y + ny as isize * z)) as usize;
                if !cart[i] {
                    continue;
                }
                for (dx, dy, dz) in &offs {
                    let (a, b2, c) = (x + dx, y + dy, z + dz);
                    if a < 0 || b2 < 0 || c < 0 || a >= nx as isize || b2 >= ny as isize || c >= nz as isize {
                        continue;
                    }
                    let j = (a + nx as isize * (b2 + ny as isize * c)) as usize;
                    if out[j] == SEG_BACKGROUND {
                        out[j] = SEG_BAND;
                    }
                }
            }
        }
    }
    out
}

/// A training image with its integral volume and label map.
pub struct TrainingImage {
    pub dims: [usize; 3],
    pub integral: IntegralVolume,
    pub seg: Vec<u8>,
}

impl TrainingImage {
    pub fn new(volume: &Volume3D, labels: &Volume3D, band: usize) -> Result<Self> {
        if !volume.same_grid(labels) {
            return Err(Error::GeometryMismatch("image and labels differ in geometry".into()));
        }
        Ok(TrainingImage {
            dims: volume.dims(),
            integral: IntegralVolume::new(volume.data(), volume.dims()),
            seg: segmentation_labels(labels, band),
        })
    }
}

/// One sampled patch: source image, centre voxel and its label patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub image: u32,
    pub center: [u32; 3],
    pub labels: Vec<u8>,
}

/// Label patch of side `p` around `c`; outside voxels count as background.
pub fn label_patch(seg: &[u8], dims: [usize; 3], c: [usize; 3], p: usize) -> Vec<u8> {
    let h = (p / 2) as isize;
    let mut out = Vec::with_capacity(p * p * p);
    for dz in -h..=h {
        for dy in -h..=h {
            for dx in -h..=h {
                let (x, y, z) = (c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz);
                if x < 0 || y < 0 || z < 0 || x >= dims[0] as isize || y >= dims[1] as isize || z >= dims[2] as isize {
                    out.push(SEG_BACKGROUND);
                } else {
                    out.push(seg[x as usize + dims[0] * (y as usize + dims[1] * z as usize)]);
                }
            }
        }
    }
    out
}

/// ℓ0 distance between label patches.
pub fn label_distance(a: &[u8], b: &[u8]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::GeometryMismatch("label patches differ in size".into()));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Class-stratified patch sampling: half of the centres on cartilage or the
/// negative band, half elsewhere within `roi` voxels of cartilage.
pub fn sample_patches(images: &[TrainingImage], p: usize, max_patches: usize, roi: usize, seed: u64) -> Vec<PatchSample> {
    let mut rng = stream(seed, "naf/patches");
    let per_image = (max_patches / images.len().max(1)).max(1);
    let mut out = Vec::new();
    for (ii, img) in images.iter().enumerate() {
        let [nx, ny, nz] = img.dims;
        // near-cartilage region by a cheap box dilation of the label map
        let near = {
            let iv = IntegralVolume::from_fn(img.dims, |i| (img.seg[i] == SEG_CARTILAGE) as u8 as f64);
            let r = roi as isize;
            move |x: usize, y: usize, z: usize| {
                let (x, y, z) = (x as isize, y as isize, z as isize);
                iv.sum([x - r, y - r, z - r], [x + r + 1, y + r + 1, z + r + 1]) > 0.0
            }
        };
        let h = p / 2;
        let mut fg = Vec::new();
        let mut bg = Vec::new();
        for z in h..nz.saturating_sub(h) {
            for y in h..ny.saturating_sub(h) {
                for x in h..nx.saturating_sub(h) {
                    let i = x + nx * (y + ny * z);
                    if img.seg[i] != SEG_BACKGROUND {
                        fg.push([x, y, z]);
                    } else if (x + y + z) % 2 == 0 && near(x, y, z) {
                        bg.push([x, y, z]);
                    }
                }
            }
        }
        fg.shuffle(&mut rng);
        bg.shuffle(&mut rng);
        let nf = (per_image / 2).min(fg.len());
        let nb = (per_image - nf).min(bg.len());
        for c in fg.iter().take(nf).chain(bg.iter().take(nb)) {
            out.push(PatchSample {
                image: ii as u32,
                center: [c[0] as u32, c[1] as u32, c[2] as u32],
                labels: label_patch(&img.seg, img.dims, *c, p),
            });
        }
    }
    // stable order independent of the shuffle above
    out.sort_by_key(|s| (s.image, s.center[2], s.center[1], s.center[0]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        let a = vec![SEG_CARTILAGE; 27];
        let b = vec![SEG_BACKGROUND; 27];
        assert_eq!(label_distance(&a, &a).unwrap(), 0);
        assert_eq!(label_distance(&a, &b).unwrap(), 27);
        assert!(label_distance(&a, &b[..26]).is_err());
    }

    #[test]
    fn band_surrounds_cartilage() {
        let lab = Volume3D::from_fn([9, 9, 9], [1.0; 3], [0.0; 3], |i, j, k| {
            if (i, j, k) == (4, 4, 4) {
                phantom::L_FEMUR_CART as f32
            } else {
                0.0
            }
        })
        .unwrap();
        let s = segmentation_labels(&lab, 2);
        assert_eq!(s[lab.index(4, 4, 4)], SEG_CARTILAGE);
        assert_eq!(s[lab.index(6, 4, 4)], SEG_BAND);
        assert_eq!(s[lab.index(7, 4, 4)], SEG_BACKGROUND);
        assert_eq!(s[lab.index(6, 6, 4)], SEG_BACKGROUND);
    }
}
