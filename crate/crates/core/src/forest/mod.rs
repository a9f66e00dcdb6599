//! Learned cartilage costs: a neighbourhood approximation forest produces a
//! cartilage probability volume, k-means splits the mean shape into regions
//! and a random forest per region scores column nodes.

pub mod kmeans;
pub mod naf;
pub mod patches;
pub mod rf;

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::NodeFeatures;
use crate::mesh::TriMesh;
use crate::rng::stream;
use naf::NafModel;
use rf::{RandomForest, RfParams};

const MAGIC: &[u8; 8] = b"LGSFORST";
const VERSION: u32 = 1;

/// Nodes within this many node steps of the true surface are positives.
pub const POSITIVE_RADIUS: f64 = 1.0;
/// Nodes at least this far from the true surface are negatives.
pub const NEGATIVE_RADIUS: f64 = 3.0;

/// Region forests for one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionForests {
    pub centers: Vec<[f64; 3]>,
    /// Region of each mean-shape vertex, hence of each column.
    pub vertex_region: Vec<u32>,
    pub forests: Vec<Option<RandomForest>>,
    /// Used for regions without a usable forest of their own.
    pub pooled: RandomForest,
}

impl RegionForests {
    pub fn forest(&self, column: usize) -> &RandomForest {
        match self.vertex_region.get(column).and_then(|&r| self.forests[r as usize].as_ref()) {
            Some(f) => f,
            None => &self.pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestBundle {
    /// `None` for an RF-only bundle, whose NAF channel is zero.
    pub naf: Option<NafModel>,
    pub objects: Vec<RegionForests>,
    pub seed: u64,
}

/// Per-node class for training: 1 near the true surface position `truth`
/// (fractional node index), 0 far from it, `None` in between or when the
/// column misses the surface.
pub fn make_training_labels(truth: Option<f64>, n_nodes: usize) -> Vec<Option<u8>> {
    (0..n_nodes)
        .map(|k| {
            let f = truth?;
            let d = (k as f64 - f).abs();
            if d <= POSITIVE_RADIUS {
                Some(1)
            } else if d >= NEGATIVE_RADIUS {
                Some(0)
            } else {
                None
            }
        })
        .collect()
}

/// One labelled node: its column's region, features and class.
#[derive(Debug, Clone)]
pub struct NodeSample {
    pub region: u32,
    pub features: NodeFeatures,
    pub label: u8,
}

/// k-means regions on the vertices of an object's mean shape.
pub fn shape_regions(mean: &TriMesh, k: usize, seed: u64, object: usize) -> Result<(Vec<[f64; 3]>, Vec<u32>)> {
    let pts: Vec<[f64; 3]> = mean.vertices.iter().map(|v| [v.x, v.y, v.z]).collect();
    let km = kmeans::kmeans(&pts, k.min(pts.len()), 100, crate::rng::derive_seed(seed, &format!("regions/{object}")))?;
    Ok((km.centers, km.labels.iter().map(|&l| l as u32).collect()))
}

/// Keeps every positive and at most `ratio` negatives per positive.
fn balance(idx: Vec<usize>, samples: &[NodeSample], ratio: usize, label: &str, seed: u64) -> Vec<usize> {
    let (pos, mut neg): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| samples[i].label == 1);
    let keep = (pos.len() * ratio).max(1);
    if neg.len() > keep {
        neg.shuffle(&mut stream(seed, label));
        neg.truncate(keep);
        neg.sort_unstable();
    }
    let mut all = pos;
    all.extend(neg);
    all.sort_unstable();
    all
}

fn train_set(samples: &[NodeSample], idx: &[usize], params: &RfParams, seed: u64) -> Result<RandomForest> {
    let x: Vec<Vec<f32>> = idx.iter().map(|&i| samples[i].features.to_vec()).collect();
    let y: Vec<u8> = idx.iter().map(|&i| samples[i].label).collect();
    RandomForest::train(&x, &y, params, seed)
}

/// Trains one forest per region plus a pooled forest for one object.
pub fn train_region_forests(
    samples: &[NodeSample],
    centers: Vec<[f64; 3]>,
    vertex_region: Vec<u32>,
    params: &RfParams,
    neg_ratio: usize,
    seed: u64,
    object: usize,
) -> Result<RegionForests> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("no training nodes for object {object}")));
    }
    let n_regions = centers.len();
    let all = balance((0..samples.len()).collect(), samples, neg_ratio, &format!("rf/balance/{object}"), seed);
    let pooled = train_set(samples, &all, params, crate::rng::derive_seed(seed, &format!("rf/{object}/pooled")))?;
    let mut forests = Vec::with_capacity(n_regions);
    for r in 0..n_regions {
        let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].region as usize == r).collect();
        let idx = balance(idx, samples, neg_ratio, &format!("rf/balance/{object}/{r}"), seed);
        let has_both = idx.iter().any(|&i| samples[i].label == 1) && idx.iter().any(|&i| samples[i].label == 0);
        forests.push(if has_both {
            Some(train_set(samples, &idx, params, crate::rng::derive_seed(seed, &format!("rf/{object}/{r}")))?)
        } else {
            None
        });
    }
    Ok(RegionForests { centers, vertex_region, forests, pooled })
}

/// Node costs `1 - P(surface)` for every column of one object.
pub fn rf_node_costs(forests: &RegionForests, features: &[Vec<NodeFeatures>]) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    features
        .par_iter()
        .enumerate()
        .map(|(c, col)| {
            let f = forests.forest(c);
            col.iter().map(|x| 1.0 - f.predict_proba(x) as f64).collect()
        })
        .collect()
}

impl ForestBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        bincode::serialize_into(&mut out, self).map_err(|e| Error::Format(format!("bundle encode: {e}")))?;
        Ok(out)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 12 || &b[..8] != MAGIC {
            return Err(Error::Format("not a forest bundle".into()));
        }
        let v = u32::from_le_bytes(b[8..12].try_into().unwrap());
        if v != VERSION {
            return Err(Error::Format(format!("forest bundle version {v}, expected {VERSION}")));
        }
        bincode::deserialize(&b[12..]).map_err(|e| Error::Format(format!("bundle decode: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut b = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut b)?;
        Self::from_bytes(&b)
    }

    pub fn uses_naf(&self) -> bool {
        self.naf.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::N_FEATURES;

    #[test]
    fn labels_around_truth() {
        let l = make_training_labels(Some(5.2), 10);
        assert_eq!(l[5], Some(1));
        assert_eq!(l[6], Some(1));
        assert_eq!(l[4], None);
        assert_eq!(l[7], None);
        assert_eq!(l[9], Some(0));
        assert_eq!(l[0], Some(0));
        assert!(make_training_labels(None, 4).iter().all(|x| x.is_none()));
    }

    fn toy_samples() -> Vec<NodeSample> {
        (0..60)
            .map(|i| {
                let label = (i % 3 == 0) as u8;
                let mut f = [0f32; N_FEATURES];
                f[0] = label as f32 * 2.0 + (i % 7) as f32 * 0.01;
                NodeSample { region: (i % 2) as u32, features: f, label }
            })
            .collect()
    }

    #[test]
    fn bundle_roundtrip_and_costs() {
        let s = toy_samples();
        let p = RfParams { n_trees: 4, ..Default::default() };
        let rf = train_region_forests(&s, vec![[0.0; 3], [1.0; 3], [2.0; 3]], vec![0, 1, 2], &p, 3, 5, 0).unwrap();
        assert!(rf.forests[2].is_none());
        let b = ForestBundle { naf: None, objects: vec![rf], seed: 5 };
        let d = tempfile::tempdir().unwrap();
        let path = d.path().join("m.bin");
        b.save(&path).unwrap();
        let b2 = ForestBundle::load(&path).unwrap();
        assert_eq!(b, b2);
        let mut hi = [0f32; N_FEATURES];
        hi[0] = 2.0;
        let costs = rf_node_costs(&b2.objects[0], &vec![vec![hi, [0f32; N_FEATURES]]; 3]);
        for col in &costs {
            assert!(col[0] < 0.2 && col[1] > 0.8);
        }
        let mut bad = b.to_bytes().unwrap();
        bad[8] = 99;
        assert!(ForestBundle::from_bytes(&bad).is_err());
        assert!(ForestBundle::from_bytes(b"nonsense").is_err());
    }
}
