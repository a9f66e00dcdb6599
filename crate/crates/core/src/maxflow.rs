//! Boykov–Kolmogorov augmenting-path max-flow with search-tree reuse.
//!
//! Terminal capacities are stored as a single signed residual per node
//! (`tr > 0`: residual to the source, `tr < 0`: residual to the sink).
//! Capacity edits after a solve follow the Kohli–Torr reparametrisation:
//! flow that no longer fits is rerouted through the terminals and the
//! resulting constant is tracked in `offset`, so the reported flow value is
//! always the max-flow of the edited network. Nodes touched by an edit are
//! marked and the next solve restarts from the previous trees.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Cap = i64;

const NONE: u32 = u32::MAX;
const TERMINAL: u32 = u32::MAX - 1;
const ORPHAN: u32 = u32::MAX - 2;
const INF_D: u32 = u32::MAX;

/// Collects edges before the CSR arrays are laid out.
#[derive(Debug, Clone, Default)]
pub struct FlowBuilder {
    n: usize,
    edges: Vec<(u32, u32, Cap, Cap)>,
    term: Vec<(Cap, Cap)>,
}

impl FlowBuilder {
    pub fn new(n: usize) -> Self {
        FlowBuilder { n, edges: Vec::new(), term: vec![(0, 0); n] }
    }

    pub fn with_edge_capacity(n: usize, edges: usize) -> Self {
        FlowBuilder { n, edges: Vec::with_capacity(edges), term: vec![(0, 0); n] }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Adds arc `u -> v` with capacity `cap` and `v -> u` with `rev`. Returns the edge id.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: Cap, rev: Cap) -> usize {
        assert!(u < self.n && v < self.n && u != v, "bad edge {u}->{v}");
        assert!(cap >= 0 && rev >= 0, "negative capacity");
        self.edges.push((u as u32, v as u32, cap, rev));
        self.edges.len() - 1
    }

    /// Adds to the source and sink capacities of `v`.
    pub fn add_terminal(&mut self, v: usize, source: Cap, sink: Cap) {
        assert!(source >= 0 && sink >= 0, "negative terminal capacity");
        self.term[v].0 += source;
        self.term[v].1 += sink;
    }

    pub fn build(self) -> MaxFlow {
        let n = self.n;
        let mut deg = vec![0u32; n + 1];
        for &(u, v, _, _) in &self.edges {
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        let mut first = vec![0u32; n + 1];
        for i in 0..n {
            first[i + 1] = first[i] + deg[i];
        }
        let m = first[n] as usize;
        let mut fill = first.clone();
        let mut head = vec![0u32; m];
        let mut sister = vec![0u32; m];
        let mut cap = vec![0 as Cap; m];
        let mut edge_arc = Vec::with_capacity(self.edges.len());
        for &(u, v, c, r) in &self.edges {
            let a = fill[u as usize];
            fill[u as usize] += 1;
            let b = fill[v as usize];
            fill[v as usize] += 1;
            head[a as usize] = v;
            head[b as usize] = u;
            sister[a as usize] = b;
            sister[b as usize] = a;
            cap[a as usize] = c;
            cap[b as usize] = r;
            edge_arc.push(a);
        }
        let mut mf = MaxFlow {
            first,
            head,
            sister,
            rcap: Vec::new(),
            cap,
            edge_arc,
            term_s: self.term.iter().map(|t| t.0).collect(),
            term_t: self.term.iter().map(|t| t.1).collect(),
            tr: Vec::new(),
            flow: 0,
            offset: 0,
            parent: vec![NONE; n],
            ts: vec![0; n],
            dist: vec![0; n],
            is_sink: vec![false; n],
            in_active: vec![false; n],
            marked: vec![false; n],
            marked_list: Vec::new(),
            active: VecDeque::new(),
            orphans: VecDeque::new(),
            time: 0,
            trees_valid: false,
        };
        mf.reset_flow();
        mf
    }
}

/// Residual state sufficient to resume solving after a reload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowState {
    pub rcap: Vec<Cap>,
    pub tr: Vec<Cap>,
    pub term_s: Vec<Cap>,
    pub term_t: Vec<Cap>,
    pub cap: Vec<Cap>,
    pub flow: Cap,
    pub offset: Cap,
}

/// A capacity edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacityChange {
    /// New source and sink capacities of a node.
    Terminal { node: usize, source: Cap, sink: Cap },
    /// New forward and reverse capacities of an edge.
    Edge { edge: usize, cap: Cap, rev: Cap },
}

#[derive(Debug, Clone)]
pub struct MaxFlow {
    first: Vec<u32>,
    head: Vec<u32>,
    sister: Vec<u32>,
    rcap: Vec<Cap>,
    cap: Vec<Cap>,
    edge_arc: Vec<u32>,
    term_s: Vec<Cap>,
    term_t: Vec<Cap>,
    tr: Vec<Cap>,
    flow: Cap,
    offset: Cap,
    parent: Vec<u32>,
    ts: Vec<u32>,
    dist: Vec<u32>,
    is_sink: Vec<bool>,
    in_active: Vec<bool>,
    marked: Vec<bool>,
    marked_list: Vec<u32>,
    active: VecDeque<u32>,
    orphans: VecDeque<u32>,
    time: u32,
    trees_valid: bool,
}

impl MaxFlow {
    pub fn n_nodes(&self) -> usize {
        self.tr.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_arc.len()
    }

    /// Max-flow value of the current network (valid after [`MaxFlow::solve`]).
    pub fn flow_value(&self) -> Cap {
        self.flow + self.offset
    }

    /// Forgets all flow and trees; the next solve starts from scratch.
    pub fn reset_flow(&mut self) {
        self.rcap = self.cap.clone();
        self.flow = 0;
        self.offset = 0;
        self.tr = self
            .term_s
            .iter()
            .zip(&self.term_t)
            .map(|(&s, &t)| {
                self.flow += s.min(t);
                s - t
            })
            .collect();
        self.trees_valid = false;
        self.clear_marks();
    }

    fn clear_marks(&mut self) {
        for &i in &self.marked_list {
            self.marked[i as usize] = false;
        }
        self.marked_list.clear();
    }

    fn mark(&mut self, v: usize) {
        if !self.marked[v] {
            self.marked[v] = true;
            self.marked_list.push(v as u32);
        }
    }

    pub fn terminal(&self, v: usize) -> (Cap, Cap) {
        (self.term_s[v], self.term_t[v])
    }

    pub fn edge(&self, e: usize) -> (usize, usize, Cap, Cap) {
        let a = self.edge_arc[e] as usize;
        let b = self.sister[a] as usize;
        (self.head[b] as usize, self.head[a] as usize, self.cap[a], self.cap[b])
    }

    /// Sets the terminal capacities of `v`, keeping the current flow where possible.
    pub fn set_terminal(&mut self, v: usize, source: Cap, sink: Cap) {
        assert!(source >= 0 && sink >= 0, "negative terminal capacity");
        let ds = source - self.term_s[v];
        let dt = sink - self.term_t[v];
        self.term_s[v] = source;
        self.term_t[v] = sink;
        if ds == 0 && dt == 0 {
            return;
        }
        self.shift_residual(v, ds, dt);
        self.mark(v);
    }

    /// Adds `ds` / `dt` to the residual terminal capacities of `v`, rerouting
    /// flow that no longer fits and pushing any flow that now passes directly.
    fn shift_residual(&mut self, v: usize, ds: Cap, dt: Cap) {
        let tr = self.tr[v];
        let mut rs = tr.max(0) + ds;
        let mut rt = (-tr).max(0) + dt;
        if rs < 0 {
            rt -= rs;
            self.offset += rs;
            rs = 0;
        }
        if rt < 0 {
            rs -= rt;
            self.offset += rt;
            rt = 0;
        }
        self.flow += rs.min(rt);
        self.tr[v] = rs - rt;
    }

    /// Sets both capacities of an edge. Flow exceeding a reduced capacity is
    /// rerouted through the terminals of the endpoints.
    pub fn set_edge(&mut self, e: usize, cap: Cap, rev: Cap) {
        assert!(cap >= 0 && rev >= 0, "negative capacity");
        let a = self.edge_arc[e] as usize;
        let b = self.sister[a] as usize;
        let (u, v) = (self.head[b] as usize, self.head[a] as usize);
        // net flow u -> v
        let f = self.cap[a] - self.rcap[a];
        self.cap[a] = cap;
        self.cap[b] = rev;
        let nf = f.clamp(-rev, cap);
        let delta = f - nf;
        self.rcap[a] = cap - nf;
        self.rcap[b] = rev + nf;
        if delta != 0 {
            // The endpoint left with an excess gets an extra saturated sink arc,
            // the one with a deficit an extra saturated source arc. Each is paired
            // with an unused arc of equal capacity to the other terminal, which
            // shifts every cut by the same constant.
            let (ex, de, d) = if delta > 0 { (u, v, delta) } else { (v, u, -delta) };
            self.shift_residual(ex, d, 0);
            self.shift_residual(de, 0, d);
            self.flow += d;
            self.offset -= 2 * d;
        }
        self.mark(u);
        self.mark(v);
    }

    pub fn update_capacities(&mut self, changes: &[CapacityChange]) -> Result<()> {
        for c in changes {
            match *c {
                CapacityChange::Terminal { node, source, sink } => {
                    if node >= self.n_nodes() || source < 0 || sink < 0 {
                        return Err(Error::InvalidInput(format!("bad terminal change for node {node}")));
                    }
                    self.set_terminal(node, source, sink);
                }
                CapacityChange::Edge { edge, cap, rev } => {
                    if edge >= self.n_edges() || cap < 0 || rev < 0 {
                        return Err(Error::InvalidInput(format!("bad edge change for edge {edge}")));
                    }
                    self.set_edge(edge, cap, rev);
                }
            }
        }
        Ok(())
    }

    /// True when `v` is on the source side of the minimum cut. The source
    /// side is the set reachable from the source in the residual network,
    /// i.e. the unique minimal minimum cut.
    pub fn in_source(&self, v: usize) -> bool {
        self.parent[v] != NONE && !self.is_sink[v]
    }

    /// Cut capacity of the current partition under the current capacities.
    pub fn cut_value(&self) -> Cap {
        let n = self.n_nodes();
        let mut c: Cap = 0;
        for v in 0..n {
            if self.in_source(v) {
                c += self.term_t[v];
                for a in self.first[v] as usize..self.first[v + 1] as usize {
                    if !self.in_source(self.head[a] as usize) {
                        c += self.cap[a];
                    }
                }
            } else {
                c += self.term_s[v];
            }
        }
        c
    }

    pub fn state(&self) -> FlowState {
        FlowState {
            rcap: self.rcap.clone(),
            tr: self.tr.clone(),
            term_s: self.term_s.clone(),
            term_t: self.term_t.clone(),
            cap: self.cap.clone(),
            flow: self.flow,
            offset: self.offset,
        }
    }

    /// Restores residual state saved from a network with identical topology.
    pub fn restore(&mut self, s: FlowState) -> Result<()> {
        if s.rcap.len() != self.rcap.len() || s.tr.len() != self.tr.len() || s.cap.len() != self.cap.len() {
            return Err(Error::InvalidInput("flow state does not match network topology".into()));
        }
        for a in 0..s.rcap.len() {
            let b = self.sister[a] as usize;
            if s.rcap[a] < 0 || s.rcap[a] + s.rcap[b] != s.cap[a] + s.cap[b] {
                return Err(Error::InvalidInput("flow state is not a valid residual".into()));
            }
        }
        self.rcap = s.rcap;
        self.tr = s.tr;
        self.term_s = s.term_s;
        self.term_t = s.term_t;
        self.cap = s.cap;
        self.flow = s.flow;
        self.offset = s.offset;
        self.trees_valid = false;
        self.clear_marks();
        Ok(())
    }

    /// Solves from scratch, discarding previous flow.
    pub fn solve_cold(&mut self) -> Cap {
        self.reset_flow();
        self.solve()
    }

    /// Solves, reusing the previous search trees when available.
    pub fn solve(&mut self) -> Cap {
        if self.trees_valid {
            self.reuse_trees_init();
        } else {
            self.init_trees();
        }
        self.run();
        self.trees_valid = true;
        self.flow_value()
    }

    fn set_active(&mut self, i: u32) {
        if !self.in_active[i as usize] {
            self.in_active[i as usize] = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.active.pop_front() {
            self.in_active[i as usize] = false;
            if self.parent[i as usize] != NONE {
                return Some(i);
            }
        }
        None
    }

    fn init_trees(&mut self) {
        let n = self.n_nodes();
        self.active.clear();
        self.orphans.clear();
        self.in_active.iter_mut().for_each(|x| *x = false);
        self.time = 0;
        for i in 0..n {
            self.ts[i] = 0;
            if self.tr[i] > 0 {
                self.is_sink[i] = false;
                self.parent[i] = TERMINAL;
                self.dist[i] = 1;
                self.set_active(i as u32);
            } else if self.tr[i] < 0 {
                self.is_sink[i] = true;
                self.parent[i] = TERMINAL;
                self.dist[i] = 1;
                self.set_active(i as u32);
            } else {
                self.parent[i] = NONE;
            }
        }
        self.clear_marks();
    }

    fn reuse_trees_init(&mut self) {
        self.orphans.clear();
        self.time += 1;
        let list = std::mem::take(&mut self.marked_list);
        for &i in &list {
            self.marked[i as usize] = false;
        }
        for &i in &list {
            let iu = i as usize;
            self.set_active(i);
            if self.tr[iu] == 0 {
                if self.parent[iu] != NONE {
                    self.set_orphan_rear(i);
                }
                continue;
            }
            if self.tr[iu] > 0 {
                if self.parent[iu] == NONE || self.is_sink[iu] {
                    self.is_sink[iu] = false;
                    for a in self.first[iu] as usize..self.first[iu + 1] as usize {
                        let j = self.head[a] as usize;
                        if self.parent[j] == self.sister[a] {
                            self.set_orphan_rear(j as u32);
                        }
                        if self.parent[j] != NONE && self.is_sink[j] && self.rcap[a] > 0 {
                            self.set_active(j as u32);
                        }
                    }
                }
            } else if self.parent[iu] == NONE || !self.is_sink[iu] {
                self.is_sink[iu] = true;
                for a in self.first[iu] as usize..self.first[iu + 1] as usize {
                    let j = self.head[a] as usize;
                    if self.parent[j] == self.sister[a] {
                        self.set_orphan_rear(j as u32);
                    }
                    if self.parent[j] != NONE && !self.is_sink[j] && self.rcap[self.sister[a] as usize] > 0 {
                        self.set_active(j as u32);
                    }
                }
            }
            self.parent[iu] = TERMINAL;
            self.ts[iu] = self.time;
            self.dist[iu] = 1;
        }
        self.adopt();
    }

    fn set_orphan_rear(&mut self, i: u32) {
        self.parent[i as usize] = ORPHAN;
        self.orphans.push_back(i);
    }

    fn set_orphan_front(&mut self, i: u32) {
        self.parent[i as usize] = ORPHAN;
        self.orphans.push_front(i);
    }

    fn adopt(&mut self) {
        while let Some(i) = self.orphans.pop_front() {
            // a node may be queued twice; only process genuine orphans
            if self.parent[i as usize] != ORPHAN {
                continue;
            }
            if self.is_sink[i as usize] {
                self.process_orphan::<true>(i as usize);
            } else {
                self.process_orphan::<false>(i as usize);
            }
        }
    }

    fn run(&mut self) {
        let mut current: Option<u32> = None;
        loop {
            let i = match current.take() {
                Some(i) => {
                    self.in_active[i as usize] = false;
                    if self.parent[i as usize] == NONE {
                        match self.next_active() {
                            Some(x) => x,
                            None => break,
                        }
                    } else {
                        i
                    }
                }
                None => match self.next_active() {
                    Some(x) => x,
                    None => break,
                },
            };
            let iu = i as usize;
            let mut found: Option<usize> = None;
            if !self.is_sink[iu] {
                for a in self.first[iu] as usize..self.first[iu + 1] as usize {
                    if self.rcap[a] == 0 {
                        continue;
                    }
                    let j = self.head[a] as usize;
                    if self.parent[j] == NONE {
                        self.is_sink[j] = false;
                        self.parent[j] = self.sister[a];
                        self.ts[j] = self.ts[iu];
                        self.dist[j] = self.dist[iu] + 1;
                        self.set_active(j as u32);
                    } else if self.is_sink[j] {
                        found = Some(a);
                        break;
                    } else if self.ts[j] <= self.ts[iu] && self.dist[j] > self.dist[iu] {
                        self.parent[j] = self.sister[a];
                        self.ts[j] = self.ts[iu];
                        self.dist[j] = self.dist[iu] + 1;
                    }
                }
            } else {
                for a in self.first[iu] as usize..self.first[iu + 1] as usize {
                    let s = self.sister[a] as usize;
                    if self.rcap[s] == 0 {
                        continue;
                    }
                    let j = self.head[a] as usize;
                    if self.parent[j] == NONE {
                        self.is_sink[j] = true;
                        self.parent[j] = s as u32;
                        self.ts[j] = self.ts[iu];
                        self.dist[j] = self.dist[iu] + 1;
                        self.set_active(j as u32);
                    } else if !self.is_sink[j] {
                        found = Some(s);
                        break;
                    } else if self.ts[j] <= self.ts[iu] && self.dist[j] > self.dist[iu] {
                        self.parent[j] = s as u32;
                        self.ts[j] = self.ts[iu];
                        self.dist[j] = self.dist[iu] + 1;
                    }
                }
            }
            self.time += 1;
            if let Some(a) = found {
                self.in_active[iu] = true;
                current = Some(i);
                self.augment(a);
                self.adopt();
            }
        }
    }

    /// Augments along the path through middle arc `a` (source tree -> sink tree).
    fn augment(&mut self, mid: usize) {
        let mut b = self.rcap[mid];
        // source side
        let mut i = self.head[self.sister[mid] as usize] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                break;
            }
            b = b.min(self.rcap[self.sister[a as usize] as usize]);
            i = self.head[a as usize] as usize;
        }
        b = b.min(self.tr[i]);
        // sink side
        let mut i = self.head[mid] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                break;
            }
            b = b.min(self.rcap[a as usize]);
            i = self.head[a as usize] as usize;
        }
        b = b.min(-self.tr[i]);

        let ms = self.sister[mid] as usize;
        self.rcap[ms] += b;
        self.rcap[mid] -= b;
        let mut i = self.head[ms] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                break;
            }
            let a = a as usize;
            let s = self.sister[a] as usize;
            self.rcap[a] += b;
            self.rcap[s] -= b;
            if self.rcap[s] == 0 {
                self.set_orphan_front(i as u32);
            }
            i = self.head[a] as usize;
        }
        self.tr[i] -= b;
        if self.tr[i] == 0 {
            self.set_orphan_front(i as u32);
        }
        let mut i = self.head[mid] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                break;
            }
            let a = a as usize;
            let s = self.sister[a] as usize;
            self.rcap[s] += b;
            self.rcap[a] -= b;
            if self.rcap[a] == 0 {
                self.set_orphan_front(i as u32);
            }
            i = self.head[a] as usize;
        }
        self.tr[i] += b;
        if self.tr[i] == 0 {
            self.set_orphan_front(i as u32);
        }
        self.flow += b;
    }

    fn process_orphan<const SINK: bool>(&mut self, i: usize) {
        let mut best: u32 = NONE;
        let mut d_min = INF_D;
        for a0 in self.first[i] as usize..self.first[i + 1] as usize {
            // residual into i (source tree) or out of i (sink tree)
            let r = if SINK { self.rcap[a0] } else { self.rcap[self.sister[a0] as usize] };
            if r == 0 {
                continue;
            }
            let mut j = self.head[a0] as usize;
            if self.is_sink[j] != SINK || self.parent[j] == NONE {
                continue;
            }
            let mut d: u32 = 0;
            loop {
                if self.ts[j] == self.time {
                    d = d.saturating_add(self.dist[j]);
                    break;
                }
                let a = self.parent[j];
                d += 1;
                if a == TERMINAL {
                    self.ts[j] = self.time;
                    self.dist[j] = 1;
                    break;
                }
                if a == ORPHAN {
                    d = INF_D;
                    break;
                }
                j = self.head[a as usize] as usize;
            }
            if d < INF_D {
                if d < d_min {
                    best = a0 as u32;
                    d_min = d;
                }
                let mut j = self.head[a0] as usize;
                while self.ts[j] != self.time {
                    self.ts[j] = self.time;
                    self.dist[j] = d;
                    d -= 1;
                    j = self.head[self.parent[j] as usize] as usize;
                }
            }
        }
        if best != NONE {
            self.parent[i] = best;
            self.ts[i] = self.time;
            self.dist[i] = d_min + 1;
            return;
        }
        for a0 in self.first[i] as usize..self.first[i + 1] as usize {
            let j = self.head[a0] as usize;
            let a = self.parent[j];
            if self.is_sink[j] != SINK || a == NONE {
                continue;
            }
            let r = if SINK { self.rcap[a0] } else { self.rcap[self.sister[a0] as usize] };
            if r > 0 {
                self.set_active(j as u32);
            }
            if a != TERMINAL && a != ORPHAN && self.head[a as usize] as usize == i {
                self.set_orphan_rear(j as u32);
            }
        }
        self.parent[i] = NONE;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Min cut by enumerating every partition.
    fn brute_cut(n: usize, edges: &[(usize, usize, Cap, Cap)], term: &[(Cap, Cap)]) -> Cap {
        let mut best = Cap::MAX;
        for mask in 0u32..(1 << n) {
            let s = |v: usize| mask >> v & 1 == 1;
            let mut c = 0;
            for v in 0..n {
                c += if s(v) { term[v].1 } else { term[v].0 };
            }
            for &(u, v, a, b) in edges {
                if s(u) && !s(v) {
                    c += a;
                }
                if s(v) && !s(u) {
                    c += b;
                }
            }
            best = best.min(c);
        }
        best
    }

    fn random_net(rng: &mut ChaCha8Rng, n: usize) -> (Vec<(usize, usize, Cap, Cap)>, Vec<(Cap, Cap)>) {
        let mut edges = Vec::new();
        for _ in 0..rng.gen_range(n..3 * n) {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u != v {
                edges.push((u, v, rng.gen_range(0..10), rng.gen_range(0..4)));
            }
        }
        let term = (0..n).map(|_| (rng.gen_range(0..12), rng.gen_range(0..12))).collect();
        (edges, term)
    }

    fn build(n: usize, edges: &[(usize, usize, Cap, Cap)], term: &[(Cap, Cap)]) -> MaxFlow {
        let mut b = FlowBuilder::new(n);
        for &(u, v, c, r) in edges {
            b.add_edge(u, v, c, r);
        }
        for (v, &(s, t)) in term.iter().enumerate() {
            b.add_terminal(v, s, t);
        }
        b.build()
    }

    #[test]
    fn matches_brute_force_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.gen_range(1..10);
            let (edges, term) = random_net(&mut rng, n);
            let mut mf = build(n, &edges, &term);
            let f = mf.solve();
            assert_eq!(f, brute_cut(n, &edges, &term));
            assert_eq!(mf.cut_value(), f);
        }
    }

    #[test]
    fn warm_edits_match_cold() {
        
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let n = rng.gen_range(2..12);
            let (mut edges, mut term) = random_net(&mut rng, n);
            let mut mf = build(n, &edges, &term);
            mf.solve();
            for _ in 0..rng.gen_range(1..6) {
                for _ in 0..rng.gen_range(1..4) {
                    if rng.gen_bool(0.6) || edges.is_empty() {
                        let v = rng.gen_range(0..n);
                        term[v] = (rng.gen_range(0..12), rng.gen_range(0..12));
                        mf.set_terminal(v, term[v].0, term[v].1);
                    } else {
                        let e = rng.gen_range(0..edges.len());
                        edges[e].2 = rng.gen_range(0..10);
                        edges[e].3 = rng.gen_range(0..4);
                        mf.set_edge(e, edges[e].2, edges[e].3);
                    }
                }
                let warm = mf.solve();
                let mut cold = build(n, &edges, &term);
                assert_eq!(warm, cold.solve());
                assert_eq!(warm, brute_cut(n, &edges, &term));
                assert_eq!(mf.cut_value(), warm);
                for v in 0..n {
                    assert_eq!(mf.in_source(v), cold.in_source(v), "partition differs at {v}");
                }
            }
        }
    }

    #[test]
    fn restore_resumes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (edges, term) = random_net(&mut rng, 9);
        let mut mf = build(9, &edges, &term);
        let f = mf.solve();
        let st = mf.state();
        let mut other = build(9, &edges, &term);
        other.restore(st).unwrap();
        assert_eq!(other.solve(), f);
        let mut bad = mf.state();
        bad.rcap[0] = -1;
        assert!(other.restore(bad).is_err());
    }

    #[test]
    fn chain_flow() {
        let mut b = FlowBuilder::new(3);
        b.add_edge(0, 1, 5, 0);
        b.add_edge(1, 2, 3, 0);
        b.add_terminal(0, 10, 0);
        b.add_terminal(2, 0, 10);
        let mut mf = b.build();
        assert_eq!(mf.solve(), 3);
        assert!(mf.in_source(0) && mf.in_source(1) && !mf.in_source(2));
    }
}
