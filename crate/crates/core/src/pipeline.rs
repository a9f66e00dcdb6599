//! End-to-end drivers: pre-segmentation, cost assignment, 3D and 4D
//! solves, forest training and evaluation against phantom truth.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::columns::{build_columns, fit_mean_shape, ColumnParams, ColumnSet};
use crate::costs::{gradient_costs, GradientCostParams, SurfaceKind};
use crate::error::{Error, Result};
use crate::features::{node_features, FeatureStack, NodeFeatures};
use crate::forest::naf::{naf_train, NafParams};
use crate::forest::patches::{sample_patches, TrainingImage};
use crate::forest::rf::RfParams;
use crate::forest::{make_training_labels, rf_node_costs, shape_regions, train_region_forests, ForestBundle, NodeSample};
use crate::geom::{Affine, Frame, Plane, Vec3};
use crate::graph::{
    build_graph, check_solution, ConstraintSpec, CostTable, LogismosGraph, Separation, SurfaceSolution, TemporalLimits,
    TemporalMode,
};
use crate::mesh::TriMesh;
use crate::phantom::PhantomCase;
use crate::registration::{transform_mesh, two_step_register, IcpParams};
use crate::rng::{derive_seed, stream};
use crate::stats;
use crate::subplates::{self, Region, RegionErrorReport, LOAD_BEARING_FRACTION};
use crate::volume::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CostMode {
    #[serde(rename = "gradient")]
    Gradient,
    #[serde(rename = "rf-only")]
    RfOnly,
    #[serde(rename = "naf+rf")]
    NafRf,
}

impl CostMode {
    pub fn learned(self) -> bool {
        self != CostMode::Gradient
    }

    pub fn name(self) -> &'static str {
        match self {
            CostMode::Gradient => "gradient",
            CostMode::RfOnly => "rf-only",
            CostMode::NafRf => "naf+rf",
        }
    }
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(CostMode::Gradient),
            "rf-only" => Ok(CostMode::RfOnly),
            "naf+rf" => Ok(CostMode::NafRf),
            _ => Err(Error::InvalidInput(format!("unknown cost mode {s}"))),
        }
    }
}

/// Column and constraint parameters for one cost mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub n_nodes: usize,
    pub node_spacing_mm: f64,
    pub column_length_mm: f64,
    pub smoothness_mm: f64,
    pub inter_surface_max_mm: f64,
    pub inter_object_max_mm: f64,
    /// Fraction of each column inside the pre-segmented bone.
    #[serde(default = "default_inner_fraction")]
    pub inner_fraction: f64,
}

fn default_inner_fraction() -> f64 {
    0.2
}

impl GraphParams {
    pub fn learned() -> Self {
        GraphParams {
            n_nodes: 121,
            node_spacing_mm: 0.15,
            column_length_mm: 18.15,
            smoothness_mm: 0.6,
            inter_surface_max_mm: 6.0,
            inter_object_max_mm: 18.0,
            inner_fraction: default_inner_fraction(),
        }
    }

    pub fn gradient() -> Self {
        GraphParams {
            n_nodes: 61,
            node_spacing_mm: 0.2,
            column_length_mm: 12.2,
            smoothness_mm: 0.4,
            inter_surface_max_mm: 4.0,
            inter_object_max_mm: 12.0,
            inner_fraction: default_inner_fraction(),
        }
    }

    /// Same column length and spacing ratio with `n_nodes` nodes.
    pub fn rescaled(&self, n_nodes: usize) -> Self {
        let s = self.column_length_mm / n_nodes as f64;
        GraphParams { n_nodes, node_spacing_mm: s, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 5 || !(self.node_spacing_mm > 0.0) {
            return Err(Error::InvalidInput("graph needs at least 5 nodes and a positive spacing".into()));
        }
        let len = self.n_nodes as f64 * self.node_spacing_mm;
        if (len - self.column_length_mm).abs() > 1e-6 * self.column_length_mm.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "column length {} mm does not match {} nodes x {} mm",
                self.column_length_mm, self.n_nodes, self.node_spacing_mm
            )));
        }
        if !(self.smoothness_mm >= 0.0 && self.inter_surface_max_mm >= 0.0 && self.inter_object_max_mm >= 0.0) {
            return Err(Error::InvalidInput("graph distances must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.inner_fraction) {
            return Err(Error::InvalidInput("inner fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn column_params(&self) -> ColumnParams {
        ColumnParams { inner_fraction: self.inner_fraction, ..ColumnParams::new(self.n_nodes, self.node_spacing_mm) }
    }

    pub fn constraint_spec(&self, temporal: &TemporalConfig) -> ConstraintSpec {
        ConstraintSpec {
            node_spacing_mm: self.node_spacing_mm,
            smoothness_mm: vec![self.smoothness_mm; 2],
            inter_surface: vec![Separation { min_mm: 0.0, max_mm: self.inter_surface_max_mm }; 2],
            inter_object: Separation { min_mm: 0.0, max_mm: self.inter_object_max_mm },
            temporal: temporal.limits(),
            temporal_mode: temporal.mode,
            ..ConstraintSpec::learned()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresegmentParams {
    pub mesh_level: u32,
    pub n_nodes: usize,
    pub node_spacing_mm: f64,
    pub column_length_mm: f64,
    pub smoothness_mm: f64,
    /// Fraction of the column inside the fitted mean shape.
    pub inner_fraction: f64,
    /// Umbrella smoothing passes on the solved surface.
    pub smooth_iterations: usize,
}

impl Default for PresegmentParams {
    fn default() -> Self {
        PresegmentParams {
            mesh_level: 3,
            n_nodes: 41,
            node_spacing_mm: 0.3,
            column_length_mm: 12.3,
            smoothness_mm: 0.6,
            inner_fraction: 0.3,
            smooth_iterations: 2,
        }
    }
}

impl PresegmentParams {
    pub fn validate(&self) -> Result<()> {
        GraphParams {
            n_nodes: self.n_nodes,
            node_spacing_mm: self.node_spacing_mm,
            column_length_mm: self.column_length_mm,
            smoothness_mm: self.smoothness_mm,
            inter_surface_max_mm: 0.0,
            inter_object_max_mm: 0.0,
            inner_fraction: self.inner_fraction,
        }
        .validate()?;
        if !(0.0..=1.0).contains(&self.inner_fraction) {
            return Err(Error::InvalidInput("inner fraction must lie in [0, 1]".into()));
        }
        if self.mesh_level > 6 {
            return Err(Error::InvalidInput("mesh level above 6".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub mode: TemporalMode,
    pub delta_min_mm: f64,
    /// `inf` disables the temporal arcs.
    pub delta_max_mm: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        TemporalConfig { mode: TemporalMode::Symmetric, delta_min_mm: 0.0, delta_max_mm: 0.6 }
    }
}

impl TemporalConfig {
    pub fn limits(&self) -> TemporalLimits {
        TemporalLimits {
            delta_min_mm: self.delta_min_mm,
            delta_max_mm: if self.delta_max_mm.is_finite() { Some(self.delta_max_mm) } else { None },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_min_mm >= 0.0) || !(self.delta_max_mm >= self.delta_min_mm) {
            return Err(Error::InvalidInput(format!(
                "temporal limits need delta_max >= delta_min >= 0, got {} and {}",
                self.delta_max_mm, self.delta_min_mm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub naf: NafParams,
    pub rf: RfParams,
    /// k-means regions per object.
    pub n_regions: usize,
    /// Negatives kept per positive node.
    pub neg_ratio: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { naf: NafParams::default(), rf: RfParams::default(), n_regions: 40, neg_ratio: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub run_dir: Option<String>,
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub mode: CostMode,
    pub presegment: PresegmentParams,
    pub learned: GraphParams,
    pub gradient: GraphParams,
    pub costs: GradientCostParams,
    pub temporal: TemporalConfig,
    pub forests: ForestConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            mode: CostMode::Gradient,
            presegment: PresegmentParams::default(),
            learned: GraphParams::learned(),
            gradient: GraphParams::gradient(),
            costs: GradientCostParams::default(),
            temporal: TemporalConfig::default(),
            forests: ForestConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let c: PipelineConfig = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.presegment.validate()?;
        self.learned.validate()?;
        self.gradient.validate()?;
        self.costs.validate()?;
        self.temporal.validate()?;
        self.forests.naf.validate()?;
        if self.forests.n_regions == 0 || self.forests.neg_ratio == 0 || self.forests.rf.n_trees == 0 {
            return Err(Error::InvalidInput("forest regions, negative ratio and tree count must be positive".into()));
        }
        Ok(())
    }

    /// Graph parameters of the configured cost mode.
    pub fn graph(&self) -> &GraphParams {
        if self.mode.learned() {
            &self.learned
        } else {
            &self.gradient
        }
    }

    pub fn constraint_spec(&self) -> ConstraintSpec {
        self.graph().constraint_spec(&self.temporal)
    }
}

/// Bounding boxes of the truth bone meshes, the initialisation box for
/// each object.
pub fn bone_bounds(case: &PhantomCase) -> Vec<(Vec3, Vec3)> {
    case.truth.iter().map(|t| t[0].bounds()).collect()
}

/// Umbrella smoothing with step 0.5.
pub fn smooth_mesh(mesh: &TriMesh, iterations: usize) -> Result<TriMesh> {
    let nb = mesh.neighbors();
    let mut v = mesh.vertices.clone();
    for _ in 0..iterations {
        v = (0..v.len())
            .map(|i| {
                if nb[i].is_empty() {
                    return v[i];
                }
                let m = nb[i].iter().map(|&j| v[j as usize]).sum::<Vec3>() / nb[i].len() as f64;
                v[i] + (m - v[i]) * 0.5
            })
            .collect();
    }
    mesh.with_vertices(v)
}

fn flatten(per_column: Vec<Vec<f64>>) -> Vec<f64> {
    per_column.into_iter().flatten().collect()
}

/// Bone surfaces: affine fit of each mean shape into its box, columns,
/// gradient bone costs and a single-surface solve per object.
pub fn presegment(vol: &Volume3D, means: &[TriMesh], bounds: &[(Vec3, Vec3)], cfg: &PipelineConfig) -> Result<Vec<TriMesh>> {
    let p = &cfg.presegment;
    p.validate()?;
    if means.len() != bounds.len() {
        return Err(Error::InvalidInput("one box per mean shape".into()));
    }
    let mut params = ColumnParams::new(p.n_nodes, p.node_spacing_mm);
    params.inner_fraction = p.inner_fraction;
    let spec = ConstraintSpec {
        node_spacing_mm: p.node_spacing_mm,
        smoothness_mm: vec![p.smoothness_mm],
        inter_surface: vec![Separation { min_mm: 0.0, max_mm: 0.0 }],
        temporal: TemporalLimits { delta_min_mm: 0.0, delta_max_mm: None },
        ..ConstraintSpec::learned()
    };
    let mut out = Vec::with_capacity(means.len());
    for (o, (mean, b)) in means.iter().zip(bounds).enumerate() {
        let fitted = fit_mean_shape(mean, *b)?;
        let cs = build_columns(&fitted, &params, o)?;
        let costs = flatten(gradient_costs(vol, &cs, SurfaceKind::Bone, &cfg.costs)?);
        let table = CostTable { n_nodes: p.n_nodes, costs: vec![vec![vec![costs]]] };
        let columns = vec![vec![cs]];
        let mut g = build_graph(&columns, &table, &spec)?;
        let sol = g.solve()?;
        let mesh = columns[0][0].surface(sol.surface(0, 0, 0))?;
        out.push(smooth_mesh(&mesh, p.smooth_iterations)?);
    }
    Ok(out)
}

/// Per-volume inputs of the learned costs.
pub struct LearnedContext {
    pub naf: Volume3D,
    pub stack: FeatureStack,
}

impl LearnedContext {
    /// NAF probability (zero for an RF-only bundle) and the feature stack.
    pub fn new(vol: &Volume3D, bundle: &ForestBundle) -> Result<Self> {
        let naf = match &bundle.naf {
            Some(m) => m.predict(vol)?,
            None => vol.with_data(vec![0.0; vol.len()])?,
        };
        let stack = FeatureStack::compute(vol, &naf)?;
        Ok(LearnedContext { naf, stack })
    }

    pub fn column_features(&self, vol: &Volume3D, cs: &ColumnSet) -> Vec<Vec<NodeFeatures>> {
        use rayon::prelude::*;
        (0..cs.n_columns()).into_par_iter().map(|c| node_features(&self.stack, vol, &self.naf, cs, c)).collect()
    }
}

/// Checks that the bundle matches the cost mode.
pub fn check_bundle(mode: CostMode, bundle: Option<&ForestBundle>) -> Result<()> {
    match (mode, bundle) {
        (CostMode::Gradient, _) => Ok(()),
        (_, None) => Err(Error::InvalidInput(format!("cost mode {mode} needs a trained forest bundle"))),
        (CostMode::NafRf, Some(b)) if !b.uses_naf() => Err(Error::InvalidInput("naf+rf mode needs a bundle with a NAF".into())),
        (CostMode::RfOnly, Some(b)) if b.uses_naf() => Err(Error::InvalidInput("rf-only mode needs a bundle without a NAF".into())),
        _ => Ok(()),
    }
}

/// Bone and cartilage costs of one object, each flat `c * K + k`.
pub fn object_costs(
    vol: &Volume3D,
    cs: &ColumnSet,
    cfg: &PipelineConfig,
    learned: Option<(&ForestBundle, &LearnedContext)>,
) -> Result<Vec<Vec<f64>>> {
    let bone = flatten(gradient_costs(vol, cs, SurfaceKind::Bone, &cfg.costs)?);
    let cart = match (cfg.mode, learned) {
        (CostMode::Gradient, _) => flatten(gradient_costs(vol, cs, SurfaceKind::Cartilage, &cfg.costs)?),
        (_, Some((bundle, ctx))) => {
            let forests = bundle
                .objects
                .get(cs.object)
                .ok_or_else(|| Error::InvalidInput(format!("bundle has no forests for object {}", cs.object)))?;
            if forests.vertex_region.len() != cs.n_columns() {
                return Err(Error::GeometryMismatch(format!(
                    "bundle regions cover {} columns, graph has {}",
                    forests.vertex_region.len(),
                    cs.n_columns()
                )));
            }
            flatten(rf_node_costs(forests, &ctx.column_features(vol, cs)))
        }
        (mode, None) => return Err(Error::InvalidInput(format!("cost mode {mode} needs a trained forest bundle"))),
    };
    Ok(vec![bone, cart])
}

/// A solved graph with its columns `[t][object]`.
pub struct Segmentation {
    pub columns: Vec<Vec<ColumnSet>>,
    pub costs: CostTable,
    pub graph: LogismosGraph,
    pub solution: SurfaceSolution,
    /// Rigid maps from each time-point into the first (identity for 3D).
    pub transforms: Vec<Affine>,
}

impl Segmentation {
    pub fn n_violations(&self) -> Result<usize> {
        Ok(check_solution(&self.graph, &self.solution)?.len())
    }

    pub fn meshes(&self) -> Result<std::collections::BTreeMap<(usize, usize, usize), TriMesh>> {
        crate::graph::solution_to_meshes(&self.solution, &self.columns)
    }
}

/// Main columns on pre-segmented bone meshes.
pub fn main_columns(bones: &[TriMesh], cfg: &PipelineConfig) -> Result<Vec<ColumnSet>> {
    let params = cfg.graph().column_params();
    bones.iter().enumerate().map(|(o, m)| build_columns(m, &params, o)).collect()
}

fn solve_columns(
    vols: &[&Volume3D],
    columns: Vec<Vec<ColumnSet>>,
    cfg: &PipelineConfig,
    bundle: Option<&ForestBundle>,
    ctxs: &[Option<LearnedContext>],
    transforms: Vec<Affine>,
) -> Result<Segmentation> {
    let spec = cfg.constraint_spec();
    let mut costs = Vec::with_capacity(columns.len());
    for (t, per_t) in columns.iter().enumerate() {
        let learned = match (bundle, ctxs.get(t).and_then(|c| c.as_ref())) {
            (Some(b), Some(c)) => Some((b, c)),
            _ => None,
        };
        costs.push(per_t.iter().map(|cs| object_costs(vols[t], cs, cfg, learned)).collect::<Result<Vec<_>>>()?);
    }
    let table = CostTable { n_nodes: cfg.graph().n_nodes, costs };
    let mut graph = build_graph(&columns, &table, &spec)?;
    let solution = graph.solve()?;
    Ok(Segmentation { columns, costs: table, graph, solution, transforms })
}

fn contexts(vols: &[&Volume3D], cfg: &PipelineConfig, bundle: Option<&ForestBundle>) -> Result<Vec<Option<LearnedContext>>> {
    check_bundle(cfg.mode, bundle)?;
    vols.iter()
        .map(|v| match (cfg.mode.learned(), bundle) {
            (true, Some(b)) => LearnedContext::new(v, b).map(Some),
            _ => Ok(None),
        })
        .collect()
}

/// Two objects with bone and cartilage surfaces, solved jointly.
pub fn segment3d(vol: &Volume3D, bones: &[TriMesh], cfg: &PipelineConfig, bundle: Option<&ForestBundle>) -> Result<Segmentation> {
    cfg.validate()?;
    let ctxs = contexts(&[vol], cfg, bundle)?;
    let columns = vec![main_columns(bones, cfg)?];
    solve_columns(&[vol], columns, cfg, bundle, &ctxs, vec![Affine::identity()])
}

/// Columns for every time-point, traced on that time-point's own
/// pre-segmentation. Pre-segmentations share the mean-shape topology, so
/// column `i` corresponds across time-points; registration onto the first
/// time-point checks that corresponding vertices land on the same anatomy.
pub fn longitudinal_columns(bones: &[Vec<TriMesh>], cfg: &PipelineConfig) -> Result<(Vec<Vec<ColumnSet>>, Vec<Affine>)> {
    if bones.len() < 2 {
        return Err(Error::InvalidInput("4D segmentation needs at least two time-points".into()));
    }
    let n_obj = bones[0].len();
    if n_obj != 2 || bones.iter().any(|b| b.len() != n_obj) {
        return Err(Error::InvalidInput("every time-point needs a femur and a tibia mesh".into()));
    }
    for o in 0..n_obj {
        if bones.iter().any(|b| b[o].n_vertices() != bones[0][o].n_vertices()) {
            return Err(Error::GeometryMismatch(format!("object {o} differs in vertex count across time-points")));
        }
    }
    let params = cfg.graph().column_params();
    // corresponding vertices must stay within the inner part of the column
    let reach = params.vertex_node() as f64 * params.spacing_mm;
    let mut transforms = vec![Affine::identity()];
    for (t, b) in bones.iter().enumerate().skip(1) {
        let tr = two_step_register(&b[0], &b[1], &bones[0][0], &bones[0][1], &IcpParams::default())?;
        for o in 0..n_obj {
            let moved = transform_mesh(&b[o], &tr);
            let d = mean_of(moved.vertices.iter().zip(&bones[0][o].vertices).map(|(a, b)| (a - b).norm()));
            if !(d <= reach) {
                return Err(Error::GeometryMismatch(format!(
                    "object {o} at time-point {t} is {d:.2} mm from its registered counterpart on average (limit {reach:.2} mm)"
                )));
            }
        }
        transforms.push(tr);
    }
    let columns = bones.iter().map(|b| main_columns(b, cfg)).collect::<Result<_>>()?;
    Ok((columns, transforms))
}

/// Joint segmentation of all time-points with temporal arcs.
pub fn segment4d(vols: &[&Volume3D], bones: &[Vec<TriMesh>], cfg: &PipelineConfig, bundle: Option<&ForestBundle>) -> Result<Segmentation> {
    cfg.validate()?;
    if vols.len() != bones.len() {
        return Err(Error::InvalidInput("one volume per time-point".into()));
    }
    let ctxs = contexts(vols, cfg, bundle)?;
    let (columns, transforms) = longitudinal_columns(bones, cfg)?;
    solve_columns(vols, columns, cfg, bundle, &ctxs, transforms)
}

/// Errors of one object at one time-point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub object: usize,
    pub bone: RegionErrorReport,
    pub cartilage: RegionErrorReport,
    /// Per-column absolute thickness errors (mm), columns where both truth
    /// surfaces are hit.
    pub thickness_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub t: usize,
    pub objects: Vec<ObjectReport>,
    pub bone_unsigned_mm: f64,
    pub cartilage_unsigned_mm: f64,
    pub cartilage_signed_mm: f64,
    pub thickness_band_90_mm: f64,
    pub notch_found: bool,
}

/// Sub-plate context for region breakdowns.
#[derive(Debug, Clone, Copy)]
pub struct AnatomyHint {
    pub frame: Frame,
    pub isolate_plane: Plane,
    pub step_mm: f64,
    pub n_contours: usize,
}

impl AnatomyHint {
    pub fn from_case(case: &PhantomCase) -> Self {
        AnatomyHint {
            frame: case.frame,
            isolate_plane: case.isolate_plane,
            step_mm: case.spec.voxel_mm(),
            n_contours: case.spec.notch_contours,
        }
    }
}

/// Column labels from the segmented bone surfaces.
pub fn column_regions(femur_bone: &TriMesh, tibia_bone: &TriMesh, hint: &AnatomyHint) -> Result<[Vec<Region>; 2]> {
    let notch = subplates::detect_trochlear_notch(femur_bone, &hint.frame, &hint.isolate_plane, hint.step_mm, hint.n_contours)?;
    let f = subplates::femur_subplates(femur_bone, &notch, &hint.frame, LOAD_BEARING_FRACTION)?;
    let t = subplates::tibia_subplates(tibia_bone, &notch, &hint.frame)?;
    Ok([f.labels, t.labels])
}

fn mean_of(x: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = x.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        stats::mean(&v)
    }
}

/// Errors of time-point `t` against truth meshes `[object][surface]`.
pub fn evaluate(seg: &Segmentation, t: usize, truth: &[[TriMesh; 2]], hint: Option<&AnatomyHint>) -> Result<CaseReport> {
    let cols = seg.columns.get(t).ok_or_else(|| Error::InvalidInput(format!("no time-point {t}")))?;
    if truth.len() != cols.len() {
        return Err(Error::InvalidInput("truth needs one mesh pair per object".into()));
    }
    let spacing = cols[0].spacing_mm;
    let labels = match hint {
        Some(h) if cols.len() == 2 => {
            let m0 = cols[0].surface(seg.solution.surface(t, 0, 0))?;
            let m1 = cols[1].surface(seg.solution.surface(t, 1, 0))?;
            column_regions(&m0, &m1, h).ok()
        }
        _ => None,
    };
    let mut objects = Vec::new();
    let (mut bone_u, mut cart_u, mut cart_s, mut all_thick) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (o, cs) in cols.iter().enumerate() {
        let tb = cs.intersect_mesh(&truth[o][0]);
        let tc = cs.intersect_mesh(&truth[o][1]);
        let kb: Vec<f64> = seg.solution.surface(t, o, 0).iter().map(|&k| k as f64).collect();
        let kc: Vec<f64> = seg.solution.surface(t, o, 1).iter().map(|&k| k as f64).collect();
        let thick: Vec<f64> = (0..cs.n_columns())
            .filter_map(|c| Some((((kc[c] - kb[c]) - (tc[c]? - tb[c]?)) * spacing).abs()))
            .collect();
        let lab: &[Region] = labels.as_ref().map_or(&[], |l| &l[o][..]);
        let bone = subplates::region_errors(&kb, &tb, spacing, lab, &[])?;
        let cartilage = subplates::region_errors(&kc, &tc, spacing, lab, &thick)?;
        for c in 0..cs.n_columns() {
            if let Some(x) = tb[c] {
                bone_u.push(((x - kb[c]) * spacing).abs());
            }
            if let Some(x) = tc[c] {
                cart_u.push(((x - kc[c]) * spacing).abs());
                cart_s.push((x - kc[c]) * spacing);
            }
        }
        all_thick.extend_from_slice(&thick);
        objects.push(ObjectReport { object: o, bone, cartilage, thickness_errors: thick });
    }
    Ok(CaseReport {
        t,
        objects,
        bone_unsigned_mm: mean_of(bone_u.into_iter()),
        cartilage_unsigned_mm: mean_of(cart_u.into_iter()),
        cartilage_signed_mm: mean_of(cart_s.into_iter()),
        thickness_band_90_mm: if all_thick.is_empty() { f64::NAN } else { stats::top_band_mean(&all_thick, 0.9) },
        notch_found: labels.is_some(),
    })
}

/// Training case lists: the NAF learns from `split1`, the region forests
/// from NAF predictions on `split2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub split1: Vec<String>,
    pub split2: Vec<String>,
}

impl TrainingManifest {
    pub fn validate(&self, mode: CostMode) -> Result<()> {
        if self.split2.is_empty() || (mode == CostMode::NafRf && self.split1.is_empty()) {
            return Err(Error::InvalidInput("training splits must not be empty".into()));
        }
        let a: BTreeSet<&str> = self.split1.iter().map(|s| s.as_str()).collect();
        if a.len() != self.split1.len() {
            return Err(Error::InvalidInput("split 1 lists a case twice".into()));
        }
        let mut b = BTreeSet::new();
        for s in &self.split2 {
            if a.contains(s.as_str()) {
                return Err(Error::InvalidInput(format!("case {s} appears in both training splits")));
            }
            if !b.insert(s.as_str()) {
                return Err(Error::InvalidInput("split 2 lists a case twice".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOob {
    pub object: usize,
    pub region: usize,
    pub n_samples: usize,
    pub oob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub mode: CostMode,
    pub n_patches: usize,
    pub n_samples: Vec<usize>,
    pub regions: Vec<RegionOob>,
    pub pooled_oob: Vec<Option<f64>>,
    pub median_oob: f64,
}

/// Labelled nodes of one object from one training case, keeping every
/// positive and `neg_ratio` random negatives per positive.
fn collect_samples(
    vol: &Volume3D,
    cs: &ColumnSet,
    truth_cartilage: &TriMesh,
    ctx: &LearnedContext,
    vertex_region: &[u32],
    neg_ratio: usize,
    seed: u64,
) -> Vec<NodeSample> {
    let truth = cs.intersect_mesh(truth_cartilage);
    let feats = ctx.column_features(vol, cs);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (c, col) in feats.into_iter().enumerate() {
        let labels = make_training_labels(truth[c], cs.n_nodes);
        for (x, l) in col.into_iter().zip(labels) {
            if let Some(l) = l {
                let s = NodeSample { region: vertex_region[c], features: x, label: l };
                if l == 1 {
                    pos.push(s);
                } else {
                    neg.push(s);
                }
            }
        }
    }
    let keep = pos.len() * neg_ratio;
    if neg.len() > keep {
        neg.shuffle(&mut stream(seed, "train/negatives"));
        neg.truncate(keep);
    }
    pos.extend(neg);
    pos
}

/// Trains the forest bundle for a learned cost mode.
pub fn train(
    split1: &[&PhantomCase],
    split2: &[&PhantomCase],
    means: &[TriMesh],
    cfg: &PipelineConfig,
) -> Result<(ForestBundle, TrainingReport)> {
    cfg.validate()?;
    if !cfg.mode.learned() {
        return Err(Error::InvalidInput("gradient mode has nothing to train".into()));
    }
    if split2.is_empty() || (cfg.mode == CostMode::NafRf && split1.is_empty()) {
        return Err(Error::InvalidInput("training splits must not be empty".into()));
    }
    let seed = cfg.seed;
    let fp = &cfg.forests;
    let mut n_patches = 0;
    let naf = if cfg.mode == CostMode::NafRf {
        let images = split1
            .iter()
            .map(|c| TrainingImage::new(c.volume(), c.labels(), fp.naf.band))
            .collect::<Result<Vec<_>>>()?;
        let patches = sample_patches(&images, fp.naf.patch, fp.naf.max_patches, fp.naf.roi, derive_seed(seed, "train/patches"));
        n_patches = patches.len();
        Some(naf_train(&images, &patches, &fp.naf, derive_seed(seed, "train/naf"))?)
    } else {
        None
    };
    let proto = ForestBundle { naf, objects: Vec::new(), seed };
    let n_obj = means.len();
    let mut regions = Vec::with_capacity(n_obj);
    for (o, m) in means.iter().enumerate() {
        regions.push(shape_regions(m, fp.n_regions, seed, o)?);
    }
    let mut samples: Vec<Vec<NodeSample>> = vec![Vec::new(); n_obj];
    for (i, case) in split2.iter().enumerate() {
        let vol = case.volume();
        let ctx = LearnedContext::new(vol, &proto)?;
        let bones = presegment(vol, means, &bone_bounds(case), cfg)?;
        let cols = main_columns(&bones, cfg)?;
        for (o, cs) in cols.iter().enumerate() {
            let s = collect_samples(
                vol,
                cs,
                case.truth_mesh(o, 1),
                &ctx,
                &regions[o].1,
                fp.neg_ratio,
                derive_seed(seed, &format!("train/case/{i}/{o}")),
            );
            samples[o].extend(s);
        }
    }
    let mut objects = Vec::with_capacity(n_obj);
    let mut report_regions = Vec::new();
    let mut pooled_oob = Vec::new();
    for (o, (centers, vr)) in regions.into_iter().enumerate() {
        let rf = train_region_forests(&samples[o], centers, vr, &fp.rf, fp.neg_ratio, derive_seed(seed, "train/rf"), o)?;
        for (r, f) in rf.forests.iter().enumerate() {
            report_regions.push(RegionOob {
                object: o,
                region: r,
                n_samples: samples[o].iter().filter(|s| s.region as usize == r).count(),
                oob: f.as_ref().and_then(|f| f.oob_accuracy),
            });
        }
        pooled_oob.push(rf.pooled.oob_accuracy);
        objects.push(rf);
    }
    let oobs: Vec<f64> = report_regions.iter().filter_map(|r| r.oob).collect();
    let report = TrainingReport {
        mode: cfg.mode,
        n_patches,
        n_samples: samples.iter().map(|s| s.len()).collect(),
        regions: report_regions,
        pooled_oob,
        median_oob: if oobs.is_empty() { f64::NAN } else { stats::median(&oobs) },
    };
    Ok((ForestBundle { objects, ..proto }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};

    #[test]
    fn defaults_match_published_graph_parameters() {
        let c = PipelineConfig::default();
        let l = &c.learned;
        assert_eq!((l.n_nodes, l.node_spacing_mm, l.column_length_mm), (121, 0.15, 18.15));
        assert_eq!((l.inter_surface_max_mm, l.inter_object_max_mm, l.smoothness_mm), (6.0, 18.0, 0.6));
        let g = &c.gradient;
        assert_eq!((g.column_length_mm, g.inter_surface_max_mm, g.inter_object_max_mm, g.smoothness_mm), (12.2, 4.0, 12.0, 0.4));
        assert_eq!(c.temporal.delta_max_mm, 0.6);
        assert_eq!(c.temporal.delta_min_mm, 0.0);
        assert_eq!(c.forests.naf.n_trees, 200);
        assert_eq!(c.forests.naf.positions, 1521);
        assert_eq!(c.forests.naf.max_patches, 40_000);
        assert_eq!(c.forests.n_regions * 2, 80);
        c.validate().unwrap();
        let s = c.constraint_spec();
        assert_eq!(s.temporal.delta_max_mm, Some(0.6));
    }

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::default();
        c.learned.column_length_mm = 18.0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.temporal.delta_min_mm = 1.0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.temporal.delta_max_mm = f64::INFINITY;
        c.validate().unwrap();
        assert_eq!(c.constraint_spec().temporal.delta_max_mm, None);
        assert_eq!(GraphParams::learned().rescaled(41).column_length_mm, 18.15);
        GraphParams::learned().rescaled(41).validate().unwrap();
    }

    #[test]
    fn config_toml_roundtrip() {
        let c = PipelineConfig { mode: CostMode::NafRf, ..Default::default() };
        let s = c.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&s).unwrap(), c);
        let p = PipelineConfig::from_toml("mode = \"rf-only\"\n[temporal]\ndelta_max_mm = inf\n").unwrap();
        assert_eq!(p.mode, CostMode::RfOnly);
        assert!(p.temporal.delta_max_mm.is_infinite());
        assert!(PipelineConfig::from_toml("[learned]\nn_nodes = 10\n").is_err());
    }

    #[test]
    fn manifest_rejects_overlap() {
        let m = TrainingManifest { split1: vec!["a".into(), "b".into()], split2: vec!["c".into()] };
        m.validate(CostMode::NafRf).unwrap();
        let m = TrainingManifest { split1: vec!["a".into()], split2: vec!["c".into(), "a".into()] };
        assert!(m.validate(CostMode::NafRf).is_err());
        let m = TrainingManifest { split1: vec![], split2: vec!["c".into()] };
        assert!(m.validate(CostMode::NafRf).is_err());
        m.validate(CostMode::RfOnly).unwrap();
    }

    #[test]
    fn bundle_mode_checks() {
        assert!(check_bundle(CostMode::NafRf, None).is_err());
        assert!(check_bundle(CostMode::Gradient, None).is_ok());
        let b = ForestBundle { naf: None, objects: vec![], seed: 0 };
        assert!(check_bundle(CostMode::RfOnly, Some(&b)).is_ok());
        assert!(check_bundle(CostMode::NafRf, Some(&b)).is_err());
    }

    #[test]
    fn presegment_quiet_phantom() {
        let spec = PhantomSpec { noise_percent: 0.0, ..PhantomSpec::small() };
        let case = generate_phantom(&spec, 2).unwrap();
        let cfg = PipelineConfig::default();
        let means = spec.mean_shapes(cfg.presegment.mesh_level).unwrap();
        let bones = presegment(case.volume(), &means, &bone_bounds(&case), &cfg).unwrap();
        let again = presegment(case.volume(), &means, &bone_bounds(&case), &cfg).unwrap();
        assert_eq!(bones, again);
        for (o, b) in bones.iter().enumerate() {
            let truth = case.truth_mesh(o, 0);
            let tree = crate::registration::KdTree::new(&crate::registration::densify(truth, 6));
            let d: Vec<f64> = b.vertices.iter().map(|v| tree.nearest(v).1.sqrt()).collect();
            let m = stats::mean(&d);
            assert!(m < cfg.presegment.node_spacing_mm, "object {o} mean error {m}");
        }
    }
}
