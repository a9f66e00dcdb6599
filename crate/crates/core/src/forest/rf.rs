//! Binary random forest: CART trees on Gini impurity, bootstrap bagging,
//! random feature subsets per split and out-of-bag accuracy.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfParams {
    pub n_trees: usize,
    /// Features tried per split.
    pub mtry: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams { n_trees: 100, mtry: 5, max_depth: 20, min_leaf: 1 }
    }
}

const LEAF: u16 = u16::MAX;

/// Flat tree. Leaves have `feature == LEAF` and store P(class 1) in `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfTree {
    pub feature: Vec<u16>,
    pub threshold: Vec<f32>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f32>,
}

impl RfTree {
    pub fn predict(&self, x: &[f32]) -> f32 {
        let mut i = 0usize;
        while self.feature[i] != LEAF {
            i = if x[self.feature[i] as usize] < self.threshold[i] { self.left[i] as usize } else { self.right[i] as usize };
        }
        self.value[i]
    }

    fn push(&mut self, f: u16, t: f32, v: f32) -> usize {
        self.feature.push(f);
        self.threshold.push(t);
        self.left.push(0);
        self.right.push(0);
        self.value.push(v);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: RfParams,
    pub n_features: usize,
    pub trees: Vec<RfTree>,
    /// Set when the training labels held a single class.
    pub constant: Option<u8>,
    pub oob_accuracy: Option<f64>,
}

struct Grower<'a, R: Rng> {
    x: &'a [Vec<f32>],
    y: &'a [u8],
    p: &'a RfParams,
    nf: usize,
    rng: R,
    tree: RfTree,
}

fn gini(n1: f64, n: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        let p = n1 / n;
        2.0 * p * (1.0 - p)
    }
}

impl<R: Rng> Grower<'_, R> {
    fn grow(&mut self, idx: &mut [u32], depth: usize) -> usize {
        let n = idx.len() as f64;
        let n1 = idx.iter().filter(|&&i| self.y[i as usize] == 1).count() as f64;
        let me = self.tree.push(LEAF, 0.0, (n1 / n) as f32);
        if depth >= self.p.max_depth || n1 == 0.0 || n1 == n || idx.len() < 2 * self.p.min_leaf.max(1) {
            return me;
        }
        let Some((f, t)) = self.best_split(idx, n1) else { return me };
        let mut lo = 0usize;
        for j in 0..idx.len() {
            if self.x[idx[j] as usize][f] < t {
                idx.swap(lo, j);
                lo += 1;
            }
        }
        let (l, r) = idx.split_at_mut(lo);
        let li = self.grow(l, depth + 1);
        let ri = self.grow(r, depth + 1);
        self.tree.feature[me] = f as u16;
        self.tree.threshold[me] = t;
        self.tree.left[me] = li as u32;
        self.tree.right[me] = ri as u32;
        me
    }

    fn best_split(&mut self, idx: &[u32], n1: f64) -> Option<(usize, f32)> {
        let n = idx.len() as f64;
        let min_leaf = self.p.min_leaf.max(1);
        let parent = gini(n1, n) * n;
        let mtry = self.p.mtry.clamp(1, self.nf);
        // random order over all features; constant ones do not count toward mtry
        let feats = sample(&mut self.rng, self.nf, self.nf);
        let mut best: Option<(f64, usize, f32)> = None;
        let mut vals: Vec<(f32, u8)> = Vec::with_capacity(idx.len());
        let mut tried = 0;
        for f in feats.iter() {
            if tried >= mtry {
                break;
            }
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.x[i as usize][f], self.y[i as usize])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            if vals[0].0 == vals[vals.len() - 1].0 {
                continue;
            }
            tried += 1;
            let mut l1 = 0.0;
            for j in 0..vals.len() - 1 {
                l1 += vals[j].1 as f64;
                let nl = (j + 1) as f64;
                if vals[j].0 == vals[j + 1].0 || j + 1 < min_leaf || vals.len() - j - 1 < min_leaf {
                    continue;
                }
                let score = gini(l1, nl) * nl + gini(n1 - l1, n - nl) * (n - nl);
                if score < parent - 1e-12 && best.map_or(true, |b| score < b.0) {
                    let mid = 0.5 * (vals[j].0 + vals[j + 1].0);
                    let t = if mid > vals[j].0 { mid } else { vals[j + 1].0 };
                    best = Some((score, f, t));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

impl RandomForest {
    pub fn train(x: &[Vec<f32>], y: &[u8], params: &RfParams, seed: u64) -> Result<RandomForest> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::InvalidInput("features and labels must be non-empty and the same length".into()));
        }
        let nf = x[0].len();
        if nf == 0 || x.iter().any(|r| r.len() != nf) {
            return Err(Error::InvalidInput("feature rows must share a positive length".into()));
        }
        if y.iter().any(|&c| c > 1) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        if params.n_trees == 0 {
            return Err(Error::InvalidInput("forest needs at least one tree".into()));
        }
        if y.iter().all(|&c| c == y[0]) {
            return Ok(RandomForest { params: params.clone(), n_features: nf, trees: Vec::new(), constant: Some(y[0]), oob_accuracy: None });
        }
        let n = x.len();
        let built: Vec<(RfTree, Vec<bool>)> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream(seed, &format!("rf/tree/{t}"));
                let mut in_bag = vec![false; n];
                let mut idx: Vec<u32> = (0..n)
                    .map(|_| {
                        let i = rng.gen_range(0..n);
                        in_bag[i] = true;
                        i as u32
                    })
                    .collect();
                let tree = RfTree { feature: vec![], threshold: vec![], left: vec![], right: vec![], value: vec![] };
                let mut g = Grower { x, y, p: params, nf, rng, tree };
                g.grow(&mut idx, 0);
                (g.tree, in_bag)
            })
            .collect();
        let mut votes = vec![0f64; n];
        let mut counts = vec![0u32; n];
        for (tree, in_bag) in &built {
            for i in 0..n {
                if !in_bag[i] {
                    votes[i] += tree.predict(&x[i]) as f64;
                    counts[i] += 1;
                }
            }
        }
        let (mut ok, mut tot) = (0usize, 0usize);
        for i in 0..n {
            if counts[i] > 0 {
                tot += 1;
                let c = (votes[i] / counts[i] as f64 >= 0.5) as u8;
                ok += (c == y[i]) as usize;
            }
        }
        let oob = if tot > 0 { Some(ok as f64 / tot as f64) } else { None };
        Ok(RandomForest { params: params.clone(), n_features: nf, trees: built.into_iter().map(|b| b.0).collect(), constant: None, oob_accuracy: oob })
    }

    /// P(class 1).
    pub fn predict_proba(&self, x: &[f32]) -> f32 {
        if let Some(c) = self.constant {
            return c as f32;
        }
        let s: f32 = self.trees.iter().map(|t| t.predict(x)).sum();
        s / self.trees.len() as f32
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }
}
