//! Command-line front end.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestBundle;
use crate::geom::arr;
use crate::jei::GraphFile;
use crate::mesh::TriMesh;
use crate::phantom::{generate_longitudinal, generate_phantom, load_case, save_case, LongitudinalSpec, PhantomCase, PhantomSpec};
use crate::pipeline::{self, AnatomyHint, CostMode, PipelineConfig, Segmentation, TrainingManifest};
use crate::registration::{densify, KdTree};
use crate::run::RunDir;
use crate::subplates::{self, Region, SubplateLabeling, LOAD_BEARING_FRACTION};

#[derive(Parser, Debug)]
#[command(name = "logismos", version, about = "Optimal surface segmentation of knee bone and cartilage")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a phantom case (or a longitudinal series).
    Phantom(PhantomArgs),
    /// Pre-segment the bones of a case.
    Presegment(CaseArgs),
    /// Train the forest bundle from a manifest.
    Train(TrainArgs),
    /// Segment one case.
    Segment3d(CaseArgs),
    /// Segment a longitudinal series jointly.
    Segment4d(Segment4dArgs),
    /// Surface distances between two meshes.
    Metrics(MetricsArgs),
    /// Sub-plate labelling and regional thickness.
    Subplates(SubplatesArgs),
    /// Serve the JEI HTTP API.
    JeiServe(ServeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML pipeline config; defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the cost mode: gradient, rf-only or naf+rf.
    #[arg(long)]
    pub mode: Option<String>,
    /// Forest bundle for the learned modes.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// 64^3 instead of 96^3.
    #[arg(long)]
    pub small: bool,
    #[arg(long)]
    pub fluid: bool,
    #[arg(long)]
    pub lesions: bool,
    /// Noise sigma in percent of the cartilage contrast.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Number of time-points; more than one writes `t0`, `t1`, ...
    #[arg(long, default_value_t = 1)]
    pub times: usize,
    /// Noise of the later time-points.
    #[arg(long)]
    pub later_noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CaseArgs {
    /// Case directory written by `phantom`.
    #[arg(long)]
    pub case: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON with `split1` and `split2` case directories.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct Segment4dArgs {
    /// Case directories in time order.
    #[arg(long = "case", num_args = 1.., required = true)]
    pub cases: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SubplatesArgs {
    /// Case directory supplying the anatomical frame and groove plane.
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub femur_bone: PathBuf,
    #[arg(long)]
    pub tibia_bone: PathBuf,
    /// Cartilage meshes with the bone topology, for regional thickness.
    #[arg(long)]
    pub femur_cartilage: Option<PathBuf>,
    #[arg(long)]
    pub tibia_cartilage: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = &c.mode {
        cfg.mode = m.parse()?;
    }
    if let Some(m) = &c.model {
        cfg.paths.model = Some(m.to_string_lossy().into_owned());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_bundle(cfg: &PipelineConfig) -> Result<Option<ForestBundle>> {
    if !cfg.mode.learned() {
        return Ok(None);
    }
    let p = cfg
        .paths
        .model
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("cost mode {} needs --model", cfg.mode)))?;
    Ok(Some(ForestBundle::load(Path::new(p))?))
}

fn run_dir(c: &Common, cfg: &PipelineConfig, command: &str, inputs: Vec<String>) -> Result<RunDir> {
    let text = cfg.to_toml()?;
    let mut r = RunDir::create(&c.out, command, cfg.seed, &text, inputs)?;
    r.write_bytes("config.toml", text.as_bytes())?;
    Ok(r)
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn phantom(a: &PhantomArgs) -> Result<()> {
    let mut spec = if a.small { PhantomSpec::small() } else { PhantomSpec::default() };
    spec.fluid = a.fluid;
    spec.lesions = a.lesions;
    if let Some(n) = a.noise {
        spec.noise_percent = n;
    }
    let mut run = RunDir::create(&a.out, "phantom", a.seed, &serde_json::to_string(&spec)?, Vec::new())?;
    let write_case = |run: &mut RunDir, case: &PhantomCase, sub: &str| -> Result<()> {
        save_case(case, &run.path(sub))?;
        let prefix = if sub.is_empty() { String::new() } else { format!("{sub}/") };
        let mut names = vec!["case.json".to_string(), "volume.vol".into(), "volume.json".into(), "labels.vol".into(), "labels.json".into()];
        for o in 0..case.truth.len() {
            for s in 0..2 {
                names.push(format!("truth_o{o}_s{s}.json"));
            }
        }
        for n in names {
            run.add_file(&format!("{prefix}{n}"))?;
        }
        Ok(())
    };
    if a.times <= 1 {
        let case = generate_phantom(&spec, a.seed)?;
        write_case(&mut run, &case, "")?;
    } else {
        let mut ls = LongitudinalSpec { n_times: a.times, ..Default::default() };
        if let Some(n) = a.later_noise {
            ls.noise_percent = (0..a.times).map(|t| if t == 0 { spec.noise_percent } else { n }).collect();
        }
        let lc = generate_longitudinal(&spec, &ls, a.seed)?;
        for (t, case) in lc.cases.iter().enumerate() {
            write_case(&mut run, case, &format!("t{t}"))?;
        }
        run.write_json("transforms.json", &lc.transforms)?;
    }
    run.finish()?;
    Ok(())
}

fn means_for(case: &PhantomCase, cfg: &PipelineConfig) -> Result<Vec<TriMesh>> {
    case.spec.mean_shapes(cfg.presegment.mesh_level)
}

fn presegment(a: &CaseArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let case = load_case(&a.case)?;
    let mut run = run_dir(&a.common, &cfg, "presegment", vec![path_str(&a.case)])?;
    let bones = pipeline::presegment(case.volume(), &means_for(&case, &cfg)?, &pipeline::bone_bounds(&case), &cfg)?;
    for (o, m) in bones.iter().enumerate() {
        m.write_json(&run.path(&format!("bone_o{o}.json")))?;
        run.add_file(&format!("bone_o{o}.json"))?;
    }
    run.finish()?;
    Ok(())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let q = Path::new(p);
    if q.is_absolute() {
        q.to_path_buf()
    } else {
        base.join(q)
    }
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let m: TrainingManifest = serde_json::from_slice(&std::fs::read(&a.manifest)?)?;
    m.validate(cfg.mode)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let load = |v: &[String]| v.iter().map(|p| load_case(&resolve(base, p))).collect::<Result<Vec<_>>>();
    let s1 = if cfg.mode == CostMode::NafRf { load(&m.split1)? } else { Vec::new() };
    let s2 = load(&m.split2)?;
    let first = s2.first().ok_or_else(|| Error::InvalidInput("split 2 is empty".into()))?;
    let means = means_for(first, &cfg)?;
    let r1: Vec<&PhantomCase> = s1.iter().collect();
    let r2: Vec<&PhantomCase> = s2.iter().collect();
    let mut run = run_dir(&a.common, &cfg, "train", vec![path_str(&a.manifest)])?;
    let (bundle, report) = pipeline::train(&r1, &r2, &means, &cfg)?;
    run.write_bytes("model.lgsf", &bundle.to_bytes()?)?;
    run.write_json("training_report.json", &report)?;
    run.finish()?;
    Ok(())
}

fn write_segmentation(run: &mut RunDir, seg: &Segmentation, reports: &[pipeline::CaseReport]) -> Result<()> {
    run.write_json("solution.json", &seg.solution)?;
    run.write_json("transforms.json", &seg.transforms)?;
    for ((t, o, s), m) in seg.meshes()? {
        let name = format!("meshes/t{t}_o{o}_s{s}.json");
        m.write_json(&run.path(&name))?;
        run.add_file(&name)?;
    }
    run.write_bytes("graph.lgsg", &GraphFile::from_graph(&seg.graph, seg.columns.clone()).to_bytes()?)?;
    run.write_json("report.json", &reports)?;
    let mut csv = String::new();
    for r in reports {
        for ob in &r.objects {
            for (surface, rep) in [("bone", &ob.bone), ("cartilage", &ob.cartilage)] {
                for line in rep.to_csv().lines().skip(if csv.is_empty() { 0 } else { 1 }) {
                    if csv.is_empty() {
                        csv += &format!("t,object,surface,{line}\n");
                    } else {
                        csv += &format!("{},{},{surface},{line}\n", r.t, ob.object);
                    }
                }
            }
        }
    }
    run.write_bytes("report.csv", csv.as_bytes())?;
    run.write_json("violations.json", &crate::graph::check_solution(&seg.graph, &seg.solution)?)?;
    Ok(())
}

fn segment3d(a: &CaseArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let bundle = load_bundle(&cfg)?;
    let case = load_case(&a.case)?;
    let mut run = run_dir(&a.common, &cfg, "segment3d", vec![path_str(&a.case)])?;
    let bones = pipeline::presegment(case.volume(), &means_for(&case, &cfg)?, &pipeline::bone_bounds(&case), &cfg)?;
    let seg = pipeline::segment3d(case.volume(), &bones, &cfg, bundle.as_ref())?;
    let report = pipeline::evaluate(&seg, 0, &case.truth, Some(&AnatomyHint::from_case(&case)))?;
    write_segmentation(&mut run, &seg, &[report])?;
    run.finish()?;
    Ok(())
}

fn segment4d(a: &Segment4dArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let bundle = load_bundle(&cfg)?;
    let cases = a.cases.iter().map(|p| load_case(p)).collect::<Result<Vec<_>>>()?;
    let mut run = run_dir(&a.common, &cfg, "segment4d", a.cases.iter().map(|p| path_str(p)).collect())?;
    let mut bones = Vec::new();
    for c in &cases {
        bones.push(pipeline::presegment(c.volume(), &means_for(c, &cfg)?, &pipeline::bone_bounds(c), &cfg)?);
    }
    let vols: Vec<_> = cases.iter().map(|c| c.volume()).collect();
    let seg = pipeline::segment4d(&vols, &bones, &cfg, bundle.as_ref())?;
    let reports = cases
        .iter()
        .enumerate()
        .map(|(t, c)| pipeline::evaluate(&seg, t, &c.truth, Some(&AnatomyHint::from_case(c))))
        .collect::<Result<Vec<_>>>()?;
    write_segmentation(&mut run, &seg, &reports)?;
    run.finish()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub n: usize,
    pub mean_mm: f64,
    pub rms_mm: f64,
    pub max_mm: f64,
}

/// Symmetric vertex-to-surface distances, each side measured against a
/// densified copy of the other mesh.
pub fn mesh_distance(a: &TriMesh, b: &TriMesh) -> DistanceReport {
    let one = |p: &TriMesh, q: &TriMesh| -> Vec<f64> {
        let tree = KdTree::new(&densify(q, 4));
        p.vertices.iter().map(|v| tree.nearest(v).1.sqrt()).collect()
    };
    let mut d = one(a, b);
    d.extend(one(b, a));
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n.max(1) as f64;
    let rms = (d.iter().map(|x| x * x).sum::<f64>() / n.max(1) as f64).sqrt();
    DistanceReport { n, mean_mm: mean, rms_mm: rms, max_mm: d.iter().cloned().fold(0.0, f64::max) }
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let r = mesh_distance(&TriMesh::read_json(&a.reference)?, &TriMesh::read_json(&a.test)?);
    let text = serde_json::to_string_pretty(&r)?;
    match &a.out {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub vertices: usize,
    pub area_mm2: f64,
    pub mean_thickness_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubplateReport {
    pub notch: [f64; 3],
    pub femur: BTreeMap<String, RegionSummary>,
    pub tibia: BTreeMap<String, RegionSummary>,
}

fn summarize(mesh: &TriMesh, lab: &SubplateLabeling, cart: Option<&TriMesh>) -> Result<BTreeMap<String, RegionSummary>> {
    let means = match cart {
        Some(c) => Some(subplates::region_means(mesh, lab, &subplates::vertex_thickness(mesh, c)?)),
        None => None,
    };
    let mut out = BTreeMap::new();
    for r in Region::ALL {
        let n = lab.count(r);
        if n == 0 || r == Region::Other {
            continue;
        }
        out.insert(
            r.name().to_string(),
            RegionSummary {
                vertices: n,
                area_mm2: lab.area(mesh, r),
                mean_thickness_mm: means.as_ref().and_then(|m| m.get(&r).copied()),
            },
        );
    }
    Ok(out)
}

fn subplates_cmd(a: &SubplatesArgs) -> Result<()> {
    let case = load_case(&a.case)?;
    let hint = AnatomyHint::from_case(&case);
    let femur = TriMesh::read_json(&a.femur_bone)?;
    let tibia = TriMesh::read_json(&a.tibia_bone)?;
    let notch = subplates::detect_trochlear_notch(&femur, &hint.frame, &hint.isolate_plane, hint.step_mm, hint.n_contours)?;
    let fl = subplates::femur_subplates(&femur, &notch, &hint.frame, LOAD_BEARING_FRACTION)?;
    let tl = subplates::tibia_subplates(&tibia, &notch, &hint.frame)?;
    let fc = a.femur_cartilage.as_ref().map(|p| TriMesh::read_json(p)).transpose()?;
    let tc = a.tibia_cartilage.as_ref().map(|p| TriMesh::read_json(p)).transpose()?;
    let rep = SubplateReport { notch: arr(&notch), femur: summarize(&femur, &fl, fc.as_ref())?, tibia: summarize(&tibia, &tl, tc.as_ref())? };
    if let Some(d) = a.out.parent() {
        if !d.as_os_str().is_empty() {
            std::fs::create_dir_all(d)?;
        }
    }
    std::fs::write(&a.out, serde_json::to_vec_pretty(&rep)?)?;
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::InvalidInput(format!("bad address: {e}")))?;
    crate::jei::server::serve(addr)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Presegment(a) => presegment(a),
        Command::Train(a) => train(a),
        Command::Segment3d(a) => segment3d(a),
        Command::Segment4d(a) => segment4d(a),
        Command::Metrics(a) => metrics(a),
        Command::Subplates(a) => subplates_cmd(a),
        Command::JeiServe(a) => serve(a),
    }
}
