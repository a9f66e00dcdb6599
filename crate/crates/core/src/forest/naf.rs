//! Neighbourhood approximation forest.
//!
//! Trees route image patches with box-mean and box-pair intensity tests. Splits are chosen
//! to make the children compact under the label-patch distance ρ, so a leaf
//! collects training patches whose segmentations look alike. At prediction
//! the training patches that share leaves most often with a test patch are
//! its approximate neighbours, and their label patches are averaged.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::patches::{PatchSample, TrainingImage, SEG_BACKGROUND, SEG_CARTILAGE};
use crate::error::{Error, Result};
use crate::features::IntegralVolume;
use crate::rng::stream;
use crate::volume::Volume3D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NafParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate tests drawn per split.
    pub n_tests: usize,
    /// Patch side in voxels (odd).
    pub patch: usize,
    /// Quasi-random candidate positions per patch.
    pub positions: usize,
    pub neighbors: usize,
    pub max_patches: usize,
    /// Negative band width in voxels.
    pub band: usize,
    /// Background patch centres are drawn within this many voxels of cartilage.
    pub roi: usize,
    pub max_box_radius: u8,
}

impl Default for NafParams {
    fn default() -> Self {
        NafParams {
            n_trees: 200,
            max_depth: 14,
            min_leaf: 5,
            n_tests: 40,
            patch: 15,
            positions: 1521,
            neighbors: 20,
            max_patches: 40_000,
            band: 2,
            roi: 8,
            max_box_radius: 2,
        }
    }
}

impl NafParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch % 2 == 0 || self.patch < 3 {
            return Err(Error::InvalidInput("patch side must be odd and at least 3".into()));
        }
        if self.n_trees == 0 || self.neighbors == 0 || self.n_tests == 0 || self.positions == 0 {
            return Err(Error::InvalidInput("tree, test, position and neighbour counts must be positive".into()));
        }
        Ok(())
    }
}

/// Mean of box `a`, minus the mean of box `b` when `pair` is set. Offsets are
/// relative to the patch centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxTest {
    pub a: [i8; 3],
    pub ra: u8,
    pub b: [i8; 3],
    pub rb: u8,
    pub pair: bool,
}

fn box_mean(iv: &IntegralVolume, c: [i64; 3], o: [i8; 3], r: u8) -> f64 {
    let r = r as isize;
    let p = [c[0] as isize + o[0] as isize, c[1] as isize + o[1] as isize, c[2] as isize + o[2] as isize];
    let lo = [p[0] - r, p[1] - r, p[2] - r];
    let hi = [p[0] + r + 1, p[1] + r + 1, p[2] + r + 1];
    let n = iv.count(lo, hi);
    if n == 0 {
        0.0
    } else {
        iv.sum(lo, hi) / n as f64
    }
}

impl BoxTest {
    pub fn response(&self, iv: &IntegralVolume, c: [i64; 3]) -> f32 {
        let a = box_mean(iv, c, self.a, self.ra);
        if self.pair {
            (a - box_mean(iv, c, self.b, self.rb)) as f32
        } else {
            a as f32
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NafNode {
    Split { test: BoxTest, threshold: f32, left: u32, right: u32 },
    Leaf { samples: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NafTree {
    pub nodes: Vec<NafNode>,
}

impl NafTree {
    pub fn leaf(&self, iv: &IntegralVolume, c: [i64; 3]) -> &[u32] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                NafNode::Leaf { samples } => return samples,
                NafNode::Split { test, threshold, left, right } => {
                    i = if test.response(iv, c) < *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> {
        self.nodes.iter().filter_map(|n| match n {
            NafNode::Leaf { samples } => Some(samples.as_slice()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NafModel {
    pub params: NafParams,
    pub positions: Vec<[i8; 3]>,
    pub trees: Vec<NafTree>,
    /// Label patches of the training samples, `patch^3` each.
    pub label_patches: Vec<u8>,
}

/// Halton point `i` in base `b`.
fn halton(mut i: usize, b: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Fixed quasi-random candidate offsets inside a patch of side `p`.
pub fn candidate_positions(n: usize, p: usize) -> Vec<[i8; 3]> {
    let h = (p / 2) as i64;
    (1..=n)
        .map(|i| {
            let f = |b| ((halton(i, b) * p as f64).floor() as i64 - h).clamp(-h, h) as i8;
            [f(2), f(3), f(5)]
        })
        .collect()
}

/// Sparse foreground of a label patch: `(voxel, class)` for non-background.
fn sparse(labels: &[u8]) -> Vec<(u32, u8)> {
    labels.iter().enumerate().filter(|(_, &l)| l != SEG_BACKGROUND).map(|(i, &l)| (i as u32, l)).collect()
}

/// Running sums from which the total pairwise ℓ0 distance of a group of
/// label patches follows. Only foreground entries are touched on update.
#[derive(Clone)]
struct Compactness {
    p: f64,
    n: f64,
    c1: Vec<u32>,
    c2: Vec<u32>,
    sum_m: f64,
    sum_m2: f64,
    sum_c1: f64,
    sum_c2: f64,
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

impl Compactness {
    fn new(p: usize) -> Self {
        Compactness { p: p as f64, n: 0.0, c1: vec![0; p], c2: vec![0; p], sum_m: 0.0, sum_m2: 0.0, sum_c1: 0.0, sum_c2: 0.0 }
    }

    fn add(&mut self, fg: &[(u32, u8)]) {
        self.n += 1.0;
        for &(v, l) in fg {
            let v = v as usize;
            let m = (self.c1[v] + self.c2[v]) as f64;
            self.sum_m += 1.0;
            self.sum_m2 += 2.0 * m + 1.0;
            if l == SEG_CARTILAGE {
                self.sum_c1 += self.c1[v] as f64;
                self.c1[v] += 1;
            } else {
                self.sum_c2 += self.c2[v] as f64;
                self.c2[v] += 1;
            }
        }
    }

    fn remove(&mut self, fg: &[(u32, u8)]) {
        self.n -= 1.0;
        for &(v, l) in fg {
            let v = v as usize;
            let m = (self.c1[v] + self.c2[v]) as f64;
            self.sum_m -= 1.0;
            self.sum_m2 -= 2.0 * m - 1.0;
            if l == SEG_CARTILAGE {
                self.c1[v] -= 1;
                self.sum_c1 -= self.c1[v] as f64;
            } else {
                self.c2[v] -= 1;
                self.sum_c2 -= self.c2[v] as f64;
            }
        }
    }

    /// Sum of ρ over all unordered pairs.
    fn total(&self) -> f64 {
        let n = self.n;
        let same0 = 0.5 * (self.p * (n * n - n) - 2.0 * n * self.sum_m + self.sum_m2 + self.sum_m);
        self.p * choose2(n) - same0 - self.sum_c1 - self.sum_c2
    }

    /// Group size times mean pairwise ρ.
    fn weighted(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            2.0 * self.total() / (self.n - 1.0)
        }
    }
}

/// Mean pairwise ρ of a set of label patches, by direct enumeration.
pub fn mean_pairwise_distance(patches: &[&[u8]]) -> f64 {
    let n = patches.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            s += patches[i].iter().zip(patches[j]).filter(|(a, b)| a != b).count();
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

struct TrainCtx<'a> {
    params: &'a NafParams,
    positions: &'a [[i8; 3]],
    images: &'a [TrainingImage],
    samples: &'a [PatchSample],
    fg: &'a [Vec<(u32, u8)>],
    pvox: usize,
}

impl TrainCtx<'_> {
    fn random_test<R: Rng>(&self, rng: &mut R) -> BoxTest {
        let pa = self.positions[rng.gen_range(0..self.positions.len())];
        let pb = self.positions[rng.gen_range(0..self.positions.len())];
        let m = self.params.max_box_radius;
        BoxTest { a: pa, ra: rng.gen_range(0..=m), b: pb, rb: rng.gen_range(0..=m), pair: rng.gen_bool(0.5) }
    }

    fn response(&self, t: &BoxTest, s: u32) -> f32 {
        let smp = &self.samples[s as usize];
        let c = [smp.center[0] as i64, smp.center[1] as i64, smp.center[2] as i64];
        t.response(&self.images[smp.image as usize].integral, c)
    }

    fn grow<R: Rng>(&self, ids: Vec<u32>, depth: usize, rng: &mut R, nodes: &mut Vec<NafNode>) -> u32 {
        let me = nodes.len() as u32;
        nodes.push(NafNode::Leaf { samples: Vec::new() });
        let mut parent = Compactness::new(self.pvox);
        for &s in &ids {
            parent.add(&self.fg[s as usize]);
        }
        let stop = depth >= self.params.max_depth || ids.len() < 2 * self.params.min_leaf.max(1) || parent.total() == 0.0;
        let best = if stop { None } else { self.best_split(&ids, &parent, rng) };
        match best {
            None => {
                nodes[me as usize] = NafNode::Leaf { samples: ids };
            }
            Some((test, thr)) => {
                let (l, r): (Vec<u32>, Vec<u32>) = ids.iter().partition(|&&s| self.response(&test, s) < thr);
                let li = self.grow(l, depth + 1, rng, nodes);
                let ri = self.grow(r, depth + 1, rng, nodes);
                nodes[me as usize] = NafNode::Split { test, threshold: thr, left: li, right: ri };
            }
        }
        me
    }

    fn best_split<R: Rng>(&self, ids: &[u32], parent: &Compactness, rng: &mut R) -> Option<(BoxTest, f32)> {
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<(f64, BoxTest, f32)> = None;
        let base = parent.weighted();
        for _ in 0..self.params.n_tests {
            let test = self.random_test(rng);
            let mut resp: Vec<(f32, u32)> = ids.iter().map(|&s| (self.response(&test, s), s)).collect();
            resp.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if resp[0].0 == resp[resp.len() - 1].0 {
                continue;
            }
            let mut left = Compactness::new(self.pvox);
            let mut right = parent.clone();
            for i in 0..resp.len() - 1 {
                let s = resp[i].1 as usize;
                left.add(&self.fg[s]);
                right.remove(&self.fg[s]);
                let nl = i + 1;
                if nl < min_leaf || resp.len() - nl < min_leaf || resp[i].0 == resp[i + 1].0 {
                    continue;
                }
                let score = left.weighted() + right.weighted();
                if score < base && best.as_ref().map_or(true, |b| score < b.0) {
                    let thr = 0.5 * (resp[i].0 + resp[i + 1].0);
                    // guard against midpoints that round onto the left value
                    let thr = if thr > resp[i].0 { thr } else { resp[i + 1].0 };
                    best = Some((score, test, thr));
                }
            }
        }
        best.map(|(_, t, thr)| (t, thr))
    }
}

pub fn naf_train(images: &[TrainingImage], samples: &[PatchSample], params: &NafParams, seed: u64) -> Result<NafModel> {
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("no training patches".into()));
    }
    let pvox = params.patch.pow(3);
    if samples.iter().any(|s| s.labels.len() != pvox) {
        return Err(Error::GeometryMismatch("label patch size does not match the patch side".into()));
    }
    if samples.len() >= 2 && samples.iter().all(|s| s.labels == samples[0].labels) {
        return Err(Error::Degenerate("all training label patches are identical".into()));
    }
    let positions = candidate_positions(params.positions, params.patch);
    let fg: Vec<Vec<(u32, u8)>> = samples.iter().map(|s| sparse(&s.labels)).collect();
    let ctx = TrainCtx { params, positions: &positions, images, samples, fg: &fg, pvox };
    let trees: Vec<NafTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(seed, &format!("naf/tree/{t}"));
            let mut nodes = Vec::new();
            ctx.grow((0..samples.len() as u32).collect(), 0, &mut rng, &mut nodes);
            NafTree { nodes }
        })
        .collect();
    let mut label_patches = Vec::with_capacity(samples.len() * pvox);
    for s in samples {
        label_patches.extend_from_slice(&s.labels);
    }
    Ok(NafModel { params: params.clone(), positions, trees, label_patches })
}

impl NafModel {
    pub fn n_samples(&self) -> usize {
        self.label_patches.len() / self.params.patch.pow(3)
    }

    pub fn label_patch(&self, s: usize) -> &[u8] {
        let p = self.params.patch.pow(3);
        &self.label_patches[s * p..(s + 1) * p]
    }

    /// Most frequent co-leaf training patches, ties by index.
    pub fn neighbors(&self, iv: &IntegralVolume, c: [i64; 3]) -> Vec<u32> {
        let mut freq: HashMap<u32, u32> = HashMap::new();
        for t in &self.trees {
            for &s in t.leaf(iv, c) {
                *freq.entry(s).or_insert(0) += 1;
            }
        }
        let mut v: Vec<(u32, u32)> = freq.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(self.params.neighbors);
        v.into_iter().map(|(s, _)| s).collect()
    }

    /// Per-voxel cartilage probability.
    pub fn predict(&self, vol: &Volume3D) -> Result<Volume3D> {
        if self.trees.is_empty() {
            return Err(Error::InvalidInput("NAF model has no trees".into()));
        }
        let dims = vol.dims();
        let iv = IntegralVolume::new(vol.data(), dims);
        let p = self.params.patch;
        let h = (p / 2) as i64;
        let stride = (p / 2).max(1);
        let axis_centers = |n: usize| -> Vec<i64> {
            let mut v: Vec<i64> = (0..n as i64).step_by(stride).collect();
            if *v.last().unwrap() != n as i64 - 1 {
                v.push(n as i64 - 1);
            }
            v
        };
        let (cx, cy, cz) = (axis_centers(dims[0]), axis_centers(dims[1]), axis_centers(dims[2]));
        let mut centers = Vec::new();
        for &z in &cz {
            for &y in &cy {
                for &x in &cx {
                    centers.push([x, y, z]);
                }
            }
        }
        let mut sum = vec![0f64; vol.len()];
        let mut cnt = vec![0u32; vol.len()];
        for chunk in centers.chunks(256) {
            let probs: Vec<Vec<f32>> = chunk
                .par_iter()
                .map(|&c| {
                    let nb = self.neighbors(&iv, c);
                    let mut acc = vec![0f32; p * p * p];
                    for &s in &nb {
                        for (a, &l) in acc.iter_mut().zip(self.label_patch(s as usize)) {
                            if l == SEG_CARTILAGE {
                                *a += 1.0;
                            }
                        }
                    }
                    let k = nb.len().max(1) as f32;
                    acc.iter_mut().for_each(|a| *a /= k);
                    acc
                })
                .collect();
            for (c, pr) in chunk.iter().zip(&probs) {
                let mut i = 0;
                for dz in -h..=h {
                    for dy in -h..=h {
                        for dx in -h..=h {
                            let (x, y, z) = (c[0] + dx, c[1] + dy, c[2] + dz);
                            if x >= 0 && y >= 0 && z >= 0 && x < dims[0] as i64 && y < dims[1] as i64 && z < dims[2] as i64 {
                                let j = x as usize + dims[0] * (y as usize + dims[1] * z as usize);
                                sum[j] += pr[i] as f64;
                                cnt[j] += 1;
                            }
                            i += 1;
                        }
                    }
                }
            }
        }
        let data = sum.iter().zip(&cnt).map(|(s, &c)| if c > 0 { (s / c as f64).clamp(0.0, 1.0) as f32 } else { 0.0 }).collect();
        vol.with_data(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::patches::{label_patch, SEG_BAND};

    #[test]
    fn compactness_matches_enumeration() {
        let mut rng = stream(1, "t");
        let p = 27;
        let patches: Vec<Vec<u8>> = (0..12).map(|_| (0..p).map(|_| rng.gen_range(0..3u8)).collect()).collect();
        let mut c = Compactness::new(p);
        for q in &patches {
            c.add(&sparse(q));
        }
        let refs: Vec<&[u8]> = patches.iter().map(|v| v.as_slice()).collect();
        let mp = mean_pairwise_distance(&refs);
        assert!((c.total() / choose2(12.0) - mp).abs() < 1e-9);
        c.remove(&sparse(&patches[3]));
        let mut rest = refs.clone();
        rest.remove(3);
        assert!((c.total() / choose2(11.0) - mean_pairwise_distance(&rest)).abs() < 1e-9);
    }

    fn toy_images() -> (Vec<TrainingImage>, Vec<PatchSample>) {
        // left half bright cartilage, right half dark background
        let vol = Volume3D::from_fn([24, 12, 12], [1.0; 3], [0.0; 3], |i, _, _| if i < 12 { 180.0 } else { 100.0 }).unwrap();
        let lab = Volume3D::from_fn([24, 12, 12], [1.0; 3], [0.0; 3], |i, _, _| if i < 12 { 2.0 } else { 0.0 }).unwrap();
        let img = TrainingImage { dims: vol.dims(), integral: IntegralVolume::new(vol.data(), vol.dims()), seg: lab.data().iter().map(|&l| if l > 0.0 { SEG_CARTILAGE } else { SEG_BACKGROUND }).collect() };
        let mut samples = Vec::new();
        for &x in &[2usize, 3, 4, 5, 18, 19, 20, 21] {
            for &y in &[3usize, 5, 7] {
                samples.push(PatchSample { image: 0, center: [x as u32, y as u32, 6], labels: label_patch(&img.seg, img.dims, [x, y, 6], 3) });
            }
        }
        (vec![img], samples)
    }

    fn toy_params() -> NafParams {
        NafParams { n_trees: 3, patch: 3, positions: 27, neighbors: 5, min_leaf: 1, n_tests: 20, ..Default::default() }
    }

    #[test]
    fn separable_groups_split_at_root() {
        let (imgs, samples) = toy_images();
        let m = naf_train(&imgs, &samples, &toy_params(), 3).unwrap();
        for t in &m.trees {
            match &t.nodes[0] {
                NafNode::Split { left, right, .. } => {
                    for child in [left, right] {
                        let ids = match &t.nodes[*child as usize] {
                            NafNode::Leaf { samples } => samples.clone(),
                            _ => panic!("separable set should need one split"),
                        };
                        let pats: Vec<&[u8]> = ids.iter().map(|&s| m.label_patch(s as usize)).collect();
                        assert_eq!(mean_pairwise_distance(&pats), 0.0);
                    }
                }
                _ => panic!("root should split"),
            }
        }
    }

    #[test]
    fn single_sample_single_leaf_and_degenerate() {
        let (imgs, samples) = toy_images();
        let m = naf_train(&imgs, &samples[..1], &toy_params(), 3).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        let same = vec![samples[0].clone(), samples[1].clone()];
        assert!(naf_train(&imgs, &same, &toy_params(), 3).is_err());
    }

    #[test]
    fn prediction_bounded() {
        let (imgs, samples) = toy_images();
        let m = naf_train(&imgs, &samples, &toy_params(), 3).unwrap();
        let vol = Volume3D::from_fn([24, 12, 12], [1.0; 3], [0.0; 3], |i, _, _| if i < 12 { 180.0 } else { 100.0 }).unwrap();
        let p = m.predict(&vol).unwrap();
        assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(p.get(3, 6, 6) > 0.9);
        assert!(p.get(20, 6, 6) < 0.1);
        let _ = SEG_BAND;
    }

    #[test]
    fn halton_positions_in_patch() {
        let pos = candidate_positions(1521, 15);
        assert_eq!(pos.len(), 1521);
        assert!(pos.iter().all(|p| p.iter().all(|&v| (-7..=7).contains(&v))));
    }
}
