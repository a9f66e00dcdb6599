//! Multi-surface, multi-object, multi-time-point optimal surface graph.
//!
//! Every surface is a choice of one node index `k` per column. All
//! constraints (smoothness, inter-surface, inter-object, temporal) are
//! pairwise bounds between two such choices. Objects with odd index are
//! stored upside down (`x = K-1-k`) so that the inter-object sum bound
//! `k_A + k_B <= G` becomes a difference bound too; then the whole problem
//! is a minimum closure, solved as an s-t cut.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::columns::ColumnSet;
use crate::error::{Error, Result};
use crate::maxflow::{Cap, FlowBuilder, MaxFlow};
use crate::mesh::TriMesh;

/// Costs are scaled by this factor and rounded before entering the network.
pub const COST_SCALE: f64 = 1e4;

pub fn scale_cost(c: f64) -> i64 {
    (c * COST_SCALE).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub min_mm: f64,
    pub max_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    /// `|k(t2) - k(t1)| <= delta_max`.
    Symmetric,
    /// `delta_min <= ... `: `k(t2) >= k(t1) - delta_min`, `k(t1) >= k(t2) - delta_max`.
    Directed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalLimits {
    pub delta_min_mm: f64,
    /// `None` means unbounded (no temporal arcs).
    pub delta_max_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub node_spacing_mm: f64,
    /// Maximum difference between adjacent columns, per surface.
    pub smoothness_mm: Vec<f64>,
    /// Allowed `(surface 1) - (surface 0)` distance, per object.
    pub inter_surface: Vec<Separation>,
    /// Allowed distance between the outermost surfaces of paired columns.
    pub inter_object: Separation,
    pub temporal: TemporalLimits,
    /// Per-surface replacement of `temporal`.
    #[serde(default)]
    pub temporal_overrides: Vec<Option<TemporalLimits>>,
    pub temporal_mode: TemporalMode,
    /// Columns pair across objects only when their directions have a dot
    /// product below this value.
    #[serde(default = "default_pairing_dot")]
    pub pairing_dot: f64,
    /// Maximum distance from the partner's base point to the column's line.
    #[serde(default = "default_pairing_lateral")]
    pub pairing_lateral_mm: f64,
}

fn default_pairing_dot() -> f64 {
    -0.8
}
fn default_pairing_lateral() -> f64 {
    1.5
}

impl ConstraintSpec {
    /// Learned-cost graph parameters for two objects with bone and cartilage.
    pub fn learned() -> Self {
        ConstraintSpec {
            node_spacing_mm: 0.15,
            smoothness_mm: vec![0.6, 0.6],
            inter_surface: vec![Separation { min_mm: 0.0, max_mm: 6.0 }; 2],
            inter_object: Separation { min_mm: 0.0, max_mm: 18.0 },
            temporal: TemporalLimits { delta_min_mm: 0.0, delta_max_mm: Some(0.6) },
            temporal_overrides: Vec::new(),
            temporal_mode: TemporalMode::Symmetric,
            pairing_dot: default_pairing_dot(),
            pairing_lateral_mm: default_pairing_lateral(),
        }
    }

    /// Gradient-cost graph parameters.
    pub fn gradient() -> Self {
        ConstraintSpec {
            node_spacing_mm: 0.2,
            smoothness_mm: vec![0.4, 0.4],
            inter_surface: vec![Separation { min_mm: 0.0, max_mm: 4.0 }; 2],
            inter_object: Separation { min_mm: 0.0, max_mm: 12.0 },
            ..Self::learned()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.node_spacing_mm > 0.0) {
            return bad("node spacing must be positive");
        }
        if self.smoothness_mm.iter().any(|&s| !(s >= 0.0)) {
            return bad("smoothness must be non-negative");
        }
        for sep in self.inter_surface.iter().chain(std::iter::once(&self.inter_object)) {
            if !(sep.min_mm >= 0.0 && sep.max_mm >= sep.min_mm) {
                return bad("separations need max >= min >= 0");
            }
        }
        for t in std::iter::once(&Some(self.temporal)).chain(self.temporal_overrides.iter()).flatten() {
            if !(t.delta_min_mm >= 0.0) || t.delta_max_mm.map_or(false, |m| !(m >= t.delta_min_mm)) {
                return bad("temporal limits need max >= min >= 0");
            }
        }
        Ok(())
    }

    pub fn temporal_for(&self, surface: usize) -> TemporalLimits {
        self.temporal_overrides.get(surface).copied().flatten().unwrap_or(self.temporal)
    }
}

/// Converts a distance in mm to whole nodes.
pub fn mm_to_nodes(mm: f64, spacing: f64, at_least_one: bool) -> i64 {
    let n = (mm / spacing).round() as i64;
    if at_least_one {
        n.max(1)
    } else {
        n.max(0)
    }
}

/// Constraint bounds in node units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDeltas {
    pub smoothness: Vec<i64>,
    /// `(min, max)` of `k1 - k0` per object.
    pub inter_surface: Vec<(i64, i64)>,
    pub inter_object_min: i64,
    pub inter_object_max: i64,
    /// Per surface `(da, db)`: `k(t+1) >= k(t) - da` and `k(t) >= k(t+1) - db`.
    pub temporal: Vec<Option<(i64, i64)>>,
}

impl NodeDeltas {
    pub fn from_spec(spec: &ConstraintSpec, n_surfaces: usize) -> Result<Self> {
        spec.validate()?;
        let s = spec.node_spacing_mm;
        if spec.smoothness_mm.len() < n_surfaces {
            return Err(Error::InvalidInput("smoothness needed for every surface".into()));
        }
        let temporal = (0..n_surfaces)
            .map(|i| {
                let t = spec.temporal_for(i);
                t.delta_max_mm.map(|mx| {
                    let hi = mm_to_nodes(mx, s, false);
                    match spec.temporal_mode {
                        TemporalMode::Symmetric => (hi, hi),
                        TemporalMode::Directed => (mm_to_nodes(t.delta_min_mm, s, false), hi),
                    }
                })
            })
            .collect();
        Ok(NodeDeltas {
            smoothness: spec.smoothness_mm[..n_surfaces].iter().map(|&m| mm_to_nodes(m, s, true)).collect(),
            inter_surface: spec
                .inter_surface
                .iter()
                .map(|sep| (mm_to_nodes(sep.min_mm, s, false), mm_to_nodes(sep.max_mm, s, false)))
                .collect(),
            inter_object_min: mm_to_nodes(spec.inter_object.min_mm, s, false),
            inter_object_max: mm_to_nodes(spec.inter_object.max_mm, s, false),
            temporal,
        })
    }
}

/// Opposing columns of objects 0 and 1 whose outermost surfaces must not overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnPair {
    pub a: u32,
    pub b: u32,
    /// `k_a + k_b <= gap_nodes` keeps the two surfaces apart.
    pub gap_nodes: i64,
}

/// Graph dimensions and column relations, independent of geometry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphLayout {
    pub n_times: usize,
    pub n_surfaces: usize,
    pub n_nodes: usize,
    pub n_columns: Vec<usize>,
    /// Column adjacency per object (`a < b`).
    pub adjacency: Vec<Vec<(u32, u32)>>,
    /// Inter-object pairs per time-point.
    pub pairs: Vec<Vec<ColumnPair>>,
}

impl GraphLayout {
    pub fn n_objects(&self) -> usize {
        self.n_columns.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_times == 0 || self.n_surfaces == 0 || self.n_columns.is_empty() || self.n_nodes < 1 {
            return Err(Error::InvalidInput("empty graph layout".into()));
        }
        if self.adjacency.len() != self.n_objects() || self.pairs.len() != self.n_times {
            return Err(Error::InvalidInput("layout tables have the wrong length".into()));
        }
        for (o, adj) in self.adjacency.iter().enumerate() {
            if adj.iter().any(|&(a, b)| a >= b || b as usize >= self.n_columns[o]) {
                return Err(Error::InvalidInput(format!("bad adjacency in object {o}")));
            }
        }
        for p in self.pairs.iter().flatten() {
            if self.n_objects() < 2 || p.a as usize >= self.n_columns[0] || p.b as usize >= self.n_columns[1] {
                return Err(Error::InvalidInput("bad inter-object pair".into()));
            }
        }
        Ok(())
    }
}

/// Node costs `costs[t][object][surface][column * K + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub n_nodes: usize,
    pub costs: Vec<Vec<Vec<Vec<f64>>>>,
}

impl CostTable {
    pub fn column(&self, t: usize, o: usize, s: usize, c: usize) -> &[f64] {
        &self.costs[t][o][s][c * self.n_nodes..(c + 1) * self.n_nodes]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    Smoothness,
    InterSurface,
    InterObject,
    Temporal,
}

/// `sa * k[a] + sb * k[b] <= d` over surface variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub a: u32,
    pub sa: i8,
    pub b: u32,
    pub sb: i8,
    pub d: i64,
    pub kind: ConstraintKind,
}

/// Address of one column of one surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId {
    pub t: usize,
    pub object: usize,
    pub surface: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ConstraintKind,
    pub a: VarId,
    pub b: VarId,
    /// Value of the left-hand side and its bound.
    pub value: i64,
    pub bound: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSolution {
    /// `k[t][object][surface][column]`.
    pub k: Vec<Vec<Vec<Vec<u32>>>>,
    pub total_cost: f64,
    pub total_cost_scaled: i64,
}

impl SurfaceSolution {
    pub fn surface(&self, t: usize, o: usize, s: usize) -> &[u32] {
        &self.k[t][o][s]
    }
}

/// The flow network plus everything needed to interpret and edit it.
#[derive(Debug, Clone)]
pub struct LogismosGraph {
    pub layout: GraphLayout,
    pub deltas: NodeDeltas,
    pub constraints: Vec<Constraint>,
    costs: Vec<i64>,
    var_offset: Vec<usize>,
    forced_out: Vec<bool>,
    inf: Cap,
    abs_w: Cap,
    net: MaxFlow,
}

impl LogismosGraph {
    pub fn n_vars(&self) -> usize {
        self.costs.len() / self.layout.n_nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.layout.n_nodes
    }

    pub fn inf(&self) -> Cap {
        self.inf
    }

    pub fn network(&self) -> &MaxFlow {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut MaxFlow {
        &mut self.net
    }

    pub fn var(&self, t: usize, o: usize, s: usize, c: usize) -> usize {
        self.var_offset[(t * self.layout.n_objects() + o) * self.layout.n_surfaces + s] + c
    }

    pub fn var_id(&self, v: usize) -> VarId {
        let l = &self.layout;
        let idx = self.var_offset.partition_point(|&off| off <= v) - 1;
        let s = idx % l.n_surfaces;
        let o = (idx / l.n_surfaces) % l.n_objects();
        let t = idx / (l.n_surfaces * l.n_objects());
        VarId { t, object: o, surface: s, column: v - self.var_offset[idx] }
    }

    fn flipped_var(&self, v: usize) -> bool {
        self.var_id(v).object % 2 == 1
    }

    /// Scaled cost of node `k` (user orientation) of variable `v`.
    pub fn cost(&self, v: usize, k: usize) -> i64 {
        self.costs[v * self.layout.n_nodes + k]
    }

    pub fn column_costs(&self, v: usize) -> &[i64] {
        let k = self.layout.n_nodes;
        &self.costs[v * k..(v + 1) * k]
    }

    /// Terminal capacities of internal node `x` of variable `v`.
    fn terminal_caps(costs: &[i64], flipped: bool, x: usize, forced: bool, inf: Cap) -> (Cap, Cap) {
        let kk = costs.len();
        let c = |x: usize| if flipped { costs[kk - 1 - x] } else { costs[x] };
        let (s, mut t) = if x == 0 {
            (inf, 0)
        } else {
            let w = c(x) - c(x - 1);
            if w < 0 {
                (-w, 0)
            } else {
                (0, w)
            }
        };
        if forced {
            t += inf;
        }
        (s, t)
    }

    /// Replaces the cost vector of one column. Takes effect on the next solve.
    pub fn set_column_costs(&mut self, v: usize, new: &[f64]) -> Result<()> {
        let kk = self.layout.n_nodes;
        if new.len() != kk || new.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("column costs must be K finite values".into()));
        }
        let scaled: Vec<i64> = new.iter().map(|&c| scale_cost(c)).collect();
        self.set_column_costs_scaled(v, &scaled)
    }

    pub fn set_column_costs_scaled(&mut self, v: usize, new: &[i64]) -> Result<()> {
        let kk = self.layout.n_nodes;
        let flipped = self.flipped_var(v);
        let abs = |c: &[i64]| -> Cap { c.windows(2).map(|w| (w[1] - w[0]).abs()).sum() };
        let old_abs = abs(&self.costs[v * kk..(v + 1) * kk]);
        let new_abs = abs(new);
        self.abs_w = self.abs_w - old_abs + new_abs;
        self.costs[v * kk..(v + 1) * kk].copy_from_slice(new);
        if self.abs_w + 1 > self.inf {
            // the sentinel is no longer larger than every finite cut
            self.rebuild();
            return Ok(());
        }
        for x in 0..kk {
            let (s, t) = Self::terminal_caps(new, flipped, x, self.forced_out[v * kk + x], self.inf);
            self.net.set_terminal(v * kk + x, s, t);
        }
        Ok(())
    }

    fn rebuild(&mut self) {
        let g = Self::assemble(self.layout.clone(), self.deltas.clone(), self.constraints.clone(), self.costs.clone(), self.var_offset.clone())
            .expect("rebuilding a valid graph");
        *self = g;
    }

    /// Solves (warm if a previous solve exists) and extracts the surfaces.
    pub fn solve(&mut self) -> Result<SurfaceSolution> {
        let f = self.net.solve();
        self.extract(f)
    }

    /// Solves from scratch.
    pub fn solve_cold(&mut self) -> Result<SurfaceSolution> {
        let f = self.net.solve_cold();
        self.extract(f)
    }

    /// Current max-flow value (cut value) of the network.
    pub fn cut_value(&self) -> Cap {
        self.net.flow_value()
    }

    fn extract(&self, flow: Cap) -> Result<SurfaceSolution> {
        if flow >= self.inf {
            return Err(Error::Infeasible);
        }
        let kk = self.layout.n_nodes;
        let mut ks = vec![0u32; self.n_vars()];
        for (v, kv) in ks.iter_mut().enumerate() {
            let mut x = 0;
            while x + 1 < kk && self.net.in_source(v * kk + x + 1) {
                x += 1;
            }
            *kv = if self.flipped_var(v) { (kk - 1 - x) as u32 } else { x as u32 };
        }
        Ok(self.solution_from_flat(&ks))
    }

    /// Wraps a flat per-variable assignment.
    pub fn solution_from_flat(&self, ks: &[u32]) -> SurfaceSolution {
        let l = &self.layout;
        let mut k = Vec::with_capacity(l.n_times);
        let mut total = 0i64;
        for t in 0..l.n_times {
            let mut per_o = Vec::new();
            for o in 0..l.n_objects() {
                let mut per_s = Vec::new();
                for s in 0..l.n_surfaces {
                    let base = self.var(t, o, s, 0);
                    let col: Vec<u32> = ks[base..base + l.n_columns[o]].to_vec();
                    for (c, &kv) in col.iter().enumerate() {
                        total += self.cost(base + c, kv as usize);
                    }
                    per_s.push(col);
                }
                per_o.push(per_s);
            }
            k.push(per_o);
        }
        SurfaceSolution { k, total_cost: total as f64 / COST_SCALE, total_cost_scaled: total }
    }

    pub fn flatten(&self, sol: &SurfaceSolution) -> Result<Vec<u32>> {
        let l = &self.layout;
        let mut out = vec![0u32; self.n_vars()];
        if sol.k.len() != l.n_times {
            return Err(Error::InvalidInput("solution has the wrong number of time-points".into()));
        }
        for t in 0..l.n_times {
            for o in 0..l.n_objects() {
                for s in 0..l.n_surfaces {
                    let col = sol.k.get(t).and_then(|x| x.get(o)).and_then(|x| x.get(s));
                    let col = col.filter(|c| c.len() == l.n_columns[o]).ok_or_else(|| {
                        Error::InvalidInput("solution dimensions do not match the graph".into())
                    })?;
                    let base = self.var(t, o, s, 0);
                    out[base..base + col.len()].copy_from_slice(col);
                }
            }
        }
        Ok(out)
    }

    /// Builds the network from a layout.
    pub fn from_layout(layout: GraphLayout, deltas: NodeDeltas, costs: &CostTable) -> Result<Self> {
        layout.validate()?;
        let l = &layout;
        if costs.n_nodes != l.n_nodes || costs.costs.len() != l.n_times {
            return Err(Error::InvalidInput("cost table does not match the layout".into()));
        }
        let mut flat = Vec::new();
        for t in 0..l.n_times {
            if costs.costs[t].len() != l.n_objects() {
                return Err(Error::InvalidInput("cost table object count mismatch".into()));
            }
            for o in 0..l.n_objects() {
                if costs.costs[t][o].len() != l.n_surfaces {
                    return Err(Error::InvalidInput("cost table surface count mismatch".into()));
                }
                for s in 0..l.n_surfaces {
                    let c = &costs.costs[t][o][s];
                    if c.len() != l.n_columns[o] * l.n_nodes {
                        return Err(Error::InvalidInput(format!("cost table size mismatch at t={t} o={o} s={s}")));
                    }
                    if c.iter().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidInput("non-finite cost".into()));
                    }
                    flat.extend(c.iter().map(|&x| scale_cost(x)));
                }
            }
        }
        Self::from_layout_scaled(layout, deltas, flat)
    }

    /// Builds the network from already scaled costs in variable order.
    pub fn from_layout_scaled(layout: GraphLayout, deltas: NodeDeltas, flat: Vec<i64>) -> Result<Self> {
        layout.validate()?;
        let l = &layout;
        if deltas.smoothness.len() < l.n_surfaces
            || deltas.temporal.len() < l.n_surfaces
            || (l.n_surfaces > 1 && deltas.inter_surface.len() < l.n_objects())
        {
            return Err(Error::InvalidInput("constraint deltas do not cover every surface and object".into()));
        }
        let mut var_offset = Vec::new();
        let mut n = 0;
        for _ in 0..l.n_times {
            for o in 0..l.n_objects() {
                for _ in 0..l.n_surfaces {
                    var_offset.push(n);
                    n += l.n_columns[o];
                }
            }
        }
        if flat.len() != n * l.n_nodes {
            return Err(Error::InvalidInput("scaled cost vector does not match the layout".into()));
        }
        let g = LogismosGraph {
            layout,
            deltas,
            constraints: Vec::new(),
            costs: Vec::new(),
            var_offset,
            forced_out: Vec::new(),
            inf: 0,
            abs_w: 0,
            net: FlowBuilder::new(0).build(),
        };
        let constraints = g.derive_constraints();
        Self::assemble(g.layout, g.deltas, constraints, flat, g.var_offset)
    }

    /// All scaled node costs in variable order.
    pub fn costs_scaled(&self) -> &[i64] {
        &self.costs
    }

    fn derive_constraints(&self) -> Vec<Constraint> {
        use ConstraintKind::*;
        let l = &self.layout;
        let d = &self.deltas;
        let mut out = Vec::new();
        let mut push = |a: usize, sa: i8, b: usize, sb: i8, d: i64, kind| {
            out.push(Constraint { a: a as u32, sa, b: b as u32, sb, d, kind })
        };
        for t in 0..l.n_times {
            for o in 0..l.n_objects() {
                for s in 0..l.n_surfaces {
                    for &(i, j) in &l.adjacency[o] {
                        let (vi, vj) = (self.var(t, o, s, i as usize), self.var(t, o, s, j as usize));
                        push(vi, 1, vj, -1, d.smoothness[s], Smoothness);
                        push(vj, 1, vi, -1, d.smoothness[s], Smoothness);
                    }
                }
                if l.n_surfaces > 1 {
                    let (lo, hi) = d.inter_surface[o];
                    for c in 0..l.n_columns[o] {
                        for s in 1..l.n_surfaces {
                            let (vb, vc) = (self.var(t, o, s - 1, c), self.var(t, o, s, c));
                            // lo <= k_c - k_b <= hi
                            push(vc, 1, vb, -1, hi, InterSurface);
                            push(vb, 1, vc, -1, -lo, InterSurface);
                        }
                    }
                }
            }
            let outer = l.n_surfaces - 1;
            for p in &l.pairs[t] {
                let (va, vb) = (self.var(t, 0, outer, p.a as usize), self.var(t, 1, outer, p.b as usize));
                // k_a + k_b <= G - min  and  k_a + k_b >= G - max
                push(va, 1, vb, 1, p.gap_nodes - d.inter_object_min, InterObject);
                push(va, -1, vb, -1, d.inter_object_max - p.gap_nodes, InterObject);
            }
        }
        for t in 0..l.n_times.saturating_sub(1) {
            for o in 0..l.n_objects() {
                for s in 0..l.n_surfaces {
                    let Some((da, db)) = d.temporal[s] else { continue };
                    for c in 0..l.n_columns[o] {
                        let (v1, v2) = (self.var(t, o, s, c), self.var(t + 1, o, s, c));
                        // k(t+1) >= k(t) - da ;  k(t) >= k(t+1) - db
                        push(v1, 1, v2, -1, da, Temporal);
                        push(v2, 1, v1, -1, db, Temporal);
                    }
                }
            }
        }
        out
    }

    fn assemble(
        layout: GraphLayout,
        deltas: NodeDeltas,
        constraints: Vec<Constraint>,
        costs: Vec<i64>,
        var_offset: Vec<usize>,
    ) -> Result<Self> {
        let kk = layout.n_nodes;
        let n_vars = costs.len() / kk;
        let mut g = LogismosGraph {
            layout,
            deltas,
            constraints,
            costs,
            var_offset,
            forced_out: vec![false; n_vars * kk],
            inf: 0,
            abs_w: 0,
            net: FlowBuilder::new(0).build(),
        };
        let flips: Vec<bool> = (0..n_vars).map(|v| g.flipped_var(v)).collect();
        // translate to internal difference bounds x_p - x_q <= d
        let mut diffs = Vec::with_capacity(g.constraints.len());
        for c in &g.constraints {
            let (mut ca, mut cb) = (c.sa as i64, c.sb as i64);
            let mut d = c.d;
            let top = (kk - 1) as i64;
            if flips[c.a as usize] {
                d -= ca * top;
                ca = -ca;
            }
            if flips[c.b as usize] {
                d -= cb * top;
                cb = -cb;
            }
            let (p, q) = match (ca, cb) {
                (1, -1) => (c.a as usize, c.b as usize),
                (-1, 1) => (c.b as usize, c.a as usize),
                _ => {
                    return Err(Error::Unsupported(
                        "sum bound between columns of the same orientation".into(),
                    ))
                }
            };
            diffs.push((p, q, d));
        }
        for &(p, _, d) in &diffs {
            // x_p <= K-1+d: node (p, K+d) must stay out of the closure
            let first_out = kk as i64 + d;
            if first_out <= 0 {
                g.forced_out[p * kk] = true;
            } else if (first_out as usize) < kk {
                g.forced_out[p * kk + first_out as usize] = true;
            }
        }
        let mut abs_w: Cap = 0;
        for v in 0..n_vars {
            abs_w += g.costs[v * kk..(v + 1) * kk].windows(2).map(|w| (w[1] - w[0]).abs()).sum::<Cap>();
        }
        g.abs_w = abs_w;
        // headroom so cost edits rarely force a rebuild of the network
        g.inf = 4 * abs_w + 64 * COST_SCALE as Cap * kk as Cap + 1;
        let inf = g.inf;

        let n_arcs = n_vars * (kk - 1) + diffs.iter().map(|&(_, _, d)| (kk as i64 - d.max(0)).max(0) as usize).sum::<usize>();
        let mut b = FlowBuilder::with_edge_capacity(n_vars * kk, n_arcs);
        for v in 0..n_vars {
            let col = &g.costs[v * kk..(v + 1) * kk];
            for x in 0..kk {
                let (s, t) = Self::terminal_caps(col, flips[v], x, g.forced_out[v * kk + x], inf);
                b.add_terminal(v * kk + x, s, t);
                if x > 0 {
                    b.add_edge(v * kk + x, v * kk + x - 1, inf, 0);
                }
            }
        }
        for &(p, q, d) in &diffs {
            for k in 0..kk as i64 {
                let t = k - d;
                if t <= 0 {
                    continue;
                }
                if t >= kk as i64 {
                    break;
                }
                b.add_edge(p * kk + k as usize, q * kk + t as usize, inf, 0);
            }
        }
        g.net = b.build();
        Ok(g)
    }
}

/// Pairs opposing columns of two objects for the non-overlap constraint.
pub fn pair_columns(a: &ColumnSet, b: &ColumnSet, spec: &ConstraintSpec) -> Vec<ColumnPair> {
    let s = spec.node_spacing_mm;
    let max_mm = spec.inter_object.max_mm;
    let kb = b.n_nodes - 1;
    let ka = a.n_nodes - 1;
    let dirs_b: Vec<_> = (0..b.n_columns()).map(|j| b.direction(j)).collect();
    let mut out = Vec::new();
    for i in 0..a.n_columns() {
        let da = a.direction(i);
        let pa = a.node(i, 0);
        let tip_a = a.node(i, ka);
        let mut best: Option<(f64, usize)> = None;
        for (j, db) in dirs_b.iter().enumerate() {
            if da.dot(db) >= spec.pairing_dot {
                continue;
            }
            if (b.node(j, kb) - tip_a).norm() >= max_mm {
                continue;
            }
            let pb = b.node(j, 0);
            let rel = pb - pa;
            let lateral = (rel - da * rel.dot(&da)).norm();
            if lateral <= spec.pairing_lateral_mm && best.map_or(true, |(bl, _)| lateral < bl) {
                best = Some((lateral, j));
            }
        }
        if let Some((_, j)) = best {
            let db = dirs_b[j];
            let u = (da - db).normalize();
            let dist = (b.node(j, 0) - pa).dot(&u);
            let cosine = 0.5 * (da.dot(&u) + (-db).dot(&u));
            if dist > 0.0 && cosine > 0.0 {
                out.push(ColumnPair { a: i as u32, b: j as u32, gap_nodes: (dist / (s * cosine)).floor() as i64 });
            }
        }
    }
    out
}

/// Layout from traced columns `columns[t][object]`.
pub fn layout_from_columns(columns: &[Vec<ColumnSet>], n_surfaces: usize, spec: &ConstraintSpec) -> Result<GraphLayout> {
    let t0 = columns.first().ok_or_else(|| Error::InvalidInput("no time-points".into()))?;
    if t0.is_empty() {
        return Err(Error::InvalidInput("no objects".into()));
    }
    let kk = t0[0].n_nodes;
    for (t, per_t) in columns.iter().enumerate() {
        if per_t.len() != t0.len() {
            return Err(Error::InvalidInput(format!("time-point {t} has a different object count")));
        }
        for (o, cs) in per_t.iter().enumerate() {
            if cs.n_nodes != kk {
                return Err(Error::InvalidInput("all columns need the same node count".into()));
            }
            if (cs.spacing_mm - spec.node_spacing_mm).abs() > 1e-9 {
                return Err(Error::InvalidInput("column spacing differs from the constraint node spacing".into()));
            }
            if cs.n_columns() != t0[o].n_columns() || cs.edges != t0[o].edges {
                return Err(Error::InvalidInput(format!(
                    "missing correspondence: object {o} at time-point {t} differs in columns or adjacency"
                )));
            }
        }
    }
    let pairs = columns
        .iter()
        .map(|per_t| if per_t.len() >= 2 { pair_columns(&per_t[0], &per_t[1], spec) } else { Vec::new() })
        .collect();
    Ok(GraphLayout {
        n_times: columns.len(),
        n_surfaces,
        n_nodes: kk,
        n_columns: t0.iter().map(|c| c.n_columns()).collect(),
        adjacency: t0.iter().map(|c| c.edges.clone()).collect(),
        pairs,
    })
}

/// Builds the full graph from traced columns `columns[t][object]`.
pub fn build_graph(columns: &[Vec<ColumnSet>], costs: &CostTable, spec: &ConstraintSpec) -> Result<LogismosGraph> {
    let n_surfaces = costs.costs.first().and_then(|x| x.first()).map_or(0, |x| x.len());
    let layout = layout_from_columns(columns, n_surfaces, spec)?;
    let deltas = NodeDeltas::from_spec(spec, n_surfaces)?;
    LogismosGraph::from_layout(layout, deltas, costs)
}

pub fn solve(g: &mut LogismosGraph) -> Result<SurfaceSolution> {
    g.solve()
}

/// Lists every violated constraint.
pub fn check_solution(g: &LogismosGraph, sol: &SurfaceSolution) -> Result<Vec<Violation>> {
    let ks = g.flatten(sol)?;
    let kk = g.n_nodes() as u32;
    if ks.iter().any(|&k| k >= kk) {
        return Err(Error::InvalidInput("node index out of range".into()));
    }
    let mut out = Vec::new();
    for c in &g.constraints {
        let lhs = c.sa as i64 * ks[c.a as usize] as i64 + c.sb as i64 * ks[c.b as usize] as i64;
        if lhs > c.d {
            out.push(Violation { kind: c.kind, a: g.var_id(c.a as usize), b: g.var_id(c.b as usize), value: lhs, bound: c.d });
        }
    }
    Ok(out)
}

/// Exhaustive search with constraint pruning; ties go to the
/// lexicographically smallest assignment. Fails above `budget` visited
/// partial assignments.
pub fn brute_force_solve_with_budget(g: &LogismosGraph, budget: u64) -> Result<SurfaceSolution> {
    let n = g.n_vars();
    let kk = g.n_nodes();
    let mut by_last: Vec<Vec<&Constraint>> = vec![Vec::new(); n];
    for c in &g.constraints {
        by_last[c.a.max(c.b) as usize].push(c);
    }
    let min_cost: Vec<i64> = (0..n).map(|v| *g.column_costs(v).iter().min().unwrap()).collect();
    let mut rest = vec![0i64; n + 1];
    for v in (0..n).rev() {
        rest[v] = rest[v + 1] + min_cost[v];
    }
    struct St<'a> {
        g: &'a LogismosGraph,
        by_last: Vec<Vec<&'a Constraint>>,
        rest: Vec<i64>,
        k: Vec<u32>,
        best: Option<(i64, Vec<u32>)>,
        visits: u64,
        budget: u64,
        kk: usize,
    }
    fn dfs(st: &mut St, v: usize, acc: i64) -> bool {
        if v == st.k.len() {
            if st.best.as_ref().map_or(true, |b| acc < b.0) {
                st.best = Some((acc, st.k.clone()));
            }
            return true;
        }
        for kv in 0..st.kk {
            st.visits += 1;
            if st.visits > st.budget {
                return false;
            }
            st.k[v] = kv as u32;
            let ok = st.by_last[v].iter().all(|c| {
                c.sa as i64 * st.k[c.a as usize] as i64 + c.sb as i64 * st.k[c.b as usize] as i64 <= c.d
            });
            if !ok {
                continue;
            }
            let a = acc + st.g.cost(v, kv);
            if let Some(b) = &st.best {
                if a + st.rest[v + 1] >= b.0 {
                    continue;
                }
            }
            if !dfs(st, v + 1, a) {
                return false;
            }
        }
        true
    }
    let mut st = St { g, by_last, rest, k: vec![0; n], best: None, visits: 0, budget, kk };
    if !dfs(&mut st, 0, 0) {
        return Err(Error::InvalidInput(format!("instance too large for exhaustive search (> {budget} steps)")));
    }
    match st.best {
        Some((_, k)) => Ok(g.solution_from_flat(&k)),
        None => Err(Error::Infeasible),
    }
}

pub fn brute_force_solve(g: &LogismosGraph) -> Result<SurfaceSolution> {
    brute_force_solve_with_budget(g, 10_000_000)
}

/// Surfaces per `(t, object, surface)` from a solution.
pub fn solution_to_meshes(
    sol: &SurfaceSolution,
    columns: &[Vec<ColumnSet>],
) -> Result<BTreeMap<(usize, usize, usize), TriMesh>> {
    let mut out = BTreeMap::new();
    for (t, per_t) in sol.k.iter().enumerate() {
        for (o, per_o) in per_t.iter().enumerate() {
            let cs = columns
                .get(t)
                .and_then(|x| x.get(o))
                .ok_or_else(|| Error::InvalidInput("missing columns for solution".into()))?;
            for (s, ks) in per_o.iter().enumerate() {
                out.insert((t, o, s), cs.surface(ks)?);
            }
        }
    }
    Ok(out)
}

/// Per-column thickness `(k_cart - k_bone) * spacing`.
pub fn thickness_map(bone: &[u32], cart: &[u32], spacing: f64) -> Vec<f64> {
    bone.iter().zip(cart).map(|(&b, &c)| (c as f64 - b as f64) * spacing).collect()
}

/// A small random graph (up to 2 objects, 2 surfaces, 5 columns, 7 nodes
/// and 3 time-points) whose state space has at most `max_states`
/// assignments, for checks against [`brute_force_solve`]. Some instances
/// are infeasible.
pub fn random_instance(seed: u64, max_states: f64) -> Result<LogismosGraph> {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, "graph/random-instance");
    loop {
        let n_times = rng.gen_range(1..=3);
        let n_objects = rng.gen_range(1..=2);
        let n_surfaces = rng.gen_range(1..=2);
        let kk: usize = rng.gen_range(2..=7);
        let n_columns: Vec<usize> = (0..n_objects).map(|_| rng.gen_range(1..=5)).collect();
        let n_vars = n_times * n_surfaces * n_columns.iter().sum::<usize>();
        if (kk as f64).powi(n_vars as i32) > max_states {
            continue;
        }
        let adjacency = n_columns
            .iter()
            .map(|&n| {
                let mut e = Vec::new();
                for j in 1..n as u32 {
                    let i = rng.gen_range(0..j);
                    e.push((i, j));
                    if j >= 2 && rng.gen_bool(0.3) {
                        let i2 = rng.gen_range(0..j);
                        if i2 != i {
                            e.push((i2, j));
                        }
                    }
                }
                e
            })
            .collect();
        let top = kk as i64 - 1;
        let pairs = (0..n_times)
            .map(|_| {
                if n_objects < 2 {
                    return Vec::new();
                }
                (0..rng.gen_range(0..=2))
                    .map(|_| ColumnPair {
                        a: rng.gen_range(0..n_columns[0] as u32),
                        b: rng.gen_range(0..n_columns[1] as u32),
                        gap_nodes: rng.gen_range(0..=2 * top + 1),
                    })
                    .collect()
            })
            .collect();
        let inter_surface = (0..n_objects)
            .map(|_| {
                let lo = rng.gen_range(-1..=top);
                (lo, rng.gen_range(lo - 1..=top + 1))
            })
            .collect();
        let io_min = rng.gen_range(0..=2);
        let deltas = NodeDeltas {
            smoothness: (0..n_surfaces).map(|_| rng.gen_range(0..=top)).collect(),
            inter_surface,
            inter_object_min: io_min,
            inter_object_max: rng.gen_range(io_min..=2 * top + 2),
            temporal: (0..n_surfaces)
                .map(|_| rng.gen_bool(0.8).then(|| (rng.gen_range(0..=top), rng.gen_range(0..=top))))
                .collect(),
        };
        let layout = GraphLayout { n_times, n_surfaces, n_nodes: kk, n_columns: n_columns.clone(), adjacency, pairs };
        let costs = CostTable {
            n_nodes: kk,
            costs: (0..n_times)
                .map(|_| {
                    n_columns
                        .iter()
                        .map(|&n| (0..n_surfaces).map(|_| (0..n * kk).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
                        .collect()
                })
                .collect(),
        };
        return LogismosGraph::from_layout(layout, deltas, &costs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deltas(s: i64, io: (i64, i64), temporal: Option<(i64, i64)>, n_s: usize) -> NodeDeltas {
        NodeDeltas {
            smoothness: vec![s; n_s],
            inter_surface: vec![io; 2],
            inter_object_min: 0,
            inter_object_max: 1000,
            temporal: vec![temporal; n_s],
        }
    }

    fn line_layout(t: usize, s: usize, cols: Vec<usize>, k: usize) -> GraphLayout {
        GraphLayout {
            n_times: t,
            n_surfaces: s,
            n_nodes: k,
            adjacency: cols.iter().map(|&n| (1..n as u32).map(|i| (i - 1, i)).collect()).collect(),
            n_columns: cols,
            pairs: vec![Vec::new(); t],
        }
    }

    #[test]
    fn mm_to_nodes_examples() {
        assert_eq!(mm_to_nodes(0.6, 0.3, true), 2);
        assert_eq!(mm_to_nodes(0.0, 0.3, false), 0);
        assert_eq!(mm_to_nodes(0.0, 0.3, true), 1);
        assert_eq!(mm_to_nodes(18.0, 0.15, false), 120);
        let d = NodeDeltas::from_spec(&ConstraintSpec::learned(), 2).unwrap();
        assert_eq!(d.smoothness, vec![4, 4]);
        assert_eq!(d.inter_surface[0], (0, 40));
        assert_eq!(d.inter_object_max, 120);
        assert_eq!(d.temporal[0], Some((4, 4)));
    }

    #[test]
    fn single_column_counts_and_argmin() {
        let l = line_layout(1, 1, vec![1], 4);
        let costs = CostTable { n_nodes: 4, costs: vec![vec![vec![vec![5.0, 1.0, 3.0, 2.0]]]] };
        let mut g = LogismosGraph::from_layout(l, deltas(1, (0, 3), None, 1), &costs).unwrap();
        assert_eq!(g.network().n_nodes(), 4);
        assert_eq!(g.network().n_edges(), 3);
        let s = g.solve().unwrap();
        assert_eq!(s.k[0][0][0], vec![1]);
        assert_eq!(s.total_cost, 1.0);
    }

    #[test]
    fn two_columns_forced_equal() {
        // smoothness 0 is not allowed as a spec value (floored to 1), so use the layout directly
        let l = line_layout(1, 1, vec![2], 4);
        let mut d = deltas(1, (0, 3), None, 1);
        d.smoothness = vec![0];
        let costs = CostTable { n_nodes: 4, costs: vec![vec![vec![vec![0.0, 9.0, 9.0, 5.0, 9.0, 9.0, 9.0, 0.0]]]] };
        let mut g = LogismosGraph::from_layout(l, d, &costs).unwrap();
        let s = g.solve().unwrap();
        let b = brute_force_solve(&g).unwrap();
        assert_eq!(s.total_cost_scaled, b.total_cost_scaled);
        assert_eq!(s.k[0][0][0][0], s.k[0][0][0][1]);
        assert_eq!(s.total_cost, 5.0);
    }

    #[test]
    fn infeasible_is_detected() {
        let l = line_layout(1, 2, vec![2], 4);
        let d = deltas(1, (3, 2), None, 2);
        let costs = CostTable { n_nodes: 4, costs: vec![vec![vec![vec![0.0; 8]; 2]]] };
        let mut g = LogismosGraph::from_layout(l, d, &costs).unwrap();
        assert!(matches!(g.solve(), Err(Error::Infeasible)));
        assert!(matches!(brute_force_solve(&g), Err(Error::Infeasible)));
    }

    #[test]
    fn check_reports_single_smoothness_violation() {
        let l = line_layout(1, 1, vec![2], 8);
        let g = LogismosGraph::from_layout(l, deltas(2, (0, 7), None, 1), &CostTable {
            n_nodes: 8,
            costs: vec![vec![vec![vec![0.0; 16]]]],
        })
        .unwrap();
        let sol = g.solution_from_flat(&[1, 4]);
        let v = check_solution(&g, &sol).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ConstraintKind::Smoothness);
    }

    #[test]
    fn bone_above_cartilage_is_violation() {
        let l = line_layout(1, 2, vec![1], 8);
        let g = LogismosGraph::from_layout(l, deltas(2, (0, 7), None, 2), &CostTable {
            n_nodes: 8,
            costs: vec![vec![vec![vec![0.0; 8]; 2]]],
        })
        .unwrap();
        let v = check_solution(&g, &g.solution_from_flat(&[5, 3])).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ConstraintKind::InterSurface);
    }

    #[test]
    fn temporal_modes() {
        let costs = |t| CostTable {
            n_nodes: 6,
            costs: (0..t)
                .map(|ti| vec![vec![(0..3 * 6).map(|i| ((i * 7 + ti * 3) % 10) as f64).collect()]])
                .collect(),
        };
        // directed: 0 <= k2 - k1 <= 2
        let l = line_layout(2, 1, vec![3], 6);
        let mut g = LogismosGraph::from_layout(l, deltas(1, (0, 5), Some((0, 2)), 1), &costs(2)).unwrap();
        let s = g.solve().unwrap();
        for c in 0..3 {
            let d = s.k[1][0][0][c] as i64 - s.k[0][0][0][c] as i64;
            assert!((0..=2).contains(&d));
        }
        assert_eq!(s.total_cost_scaled, brute_force_solve(&g).unwrap().total_cost_scaled);
    }

    #[test]
    fn flipped_objects_pair() {
        let mut l = line_layout(1, 1, vec![2, 2], 5);
        l.pairs = vec![vec![ColumnPair { a: 0, b: 1, gap_nodes: 5 }, ColumnPair { a: 1, b: 0, gap_nodes: 6 }]];
        let mut d = deltas(1, (0, 4), None, 1);
        d.inter_object_max = 4;
        let costs = CostTable {
            n_nodes: 5,
            costs: vec![vec![vec![vec![9.0, 8.0, 3.0, 2.0, 0.0, 9.0, 8.0, 1.0, 2.0, 0.0]], vec![vec![
                9.0, 3.0, 2.0, 1.0, 0.0, 9.0, 9.0, 9.0, 1.0, 0.0,
            ]]]],
        };
        let mut g = LogismosGraph::from_layout(l, d, &costs).unwrap();
        let s = g.solve().unwrap();
        assert!(check_solution(&g, &s).unwrap().is_empty());
        assert_eq!(s.total_cost_scaled, brute_force_solve(&g).unwrap().total_cost_scaled);
    }

    #[test]
    fn cost_edit_then_resolve() {
        let l = line_layout(1, 1, vec![3], 5);
        let costs = CostTable { n_nodes: 5, costs: vec![vec![vec![(0..15).map(|i| (i % 5) as f64).collect()]]] };
        let mut g = LogismosGraph::from_layout(l.clone(), deltas(1, (0, 4), None, 1), &costs).unwrap();
        assert_eq!(g.solve().unwrap().k[0][0][0], vec![0, 0, 0]);
        g.set_column_costs(1, &[5.0, 5.0, 5.0, 0.0, 5.0]).unwrap();
        let w = g.solve().unwrap();
        let mut cold = g.clone();
        let c = cold.solve_cold().unwrap();
        assert_eq!(w, c);
        assert_eq!(w.total_cost_scaled, brute_force_solve(&g).unwrap().total_cost_scaled);
    }
}
