//! Evaluation harness: seeded corpora, ground-truth oracle scorers, per-query
//! localization outcomes and the aggregate report.

mod report;
mod svg;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{EncoderParams, Embedding, LABEL_POINTS};
use crate::error::{Error, Result};
use crate::localize::{
    decode_refine, grid_poses, icp_localize, optimize_pose, rank, vdr_refine, GridDatabase, GridEntry, IcpConfig,
    LatentCost, PipelineConfig, Stages,
};
use crate::metrics::{chamfer_prepared, PreparedCloud, SimilarityMetric};
use crate::render::{
    backproject, horizontal_scan, render_furnished_depth, render_layout_depth, PanoDepth, EMBED_HEIGHT, EMBED_WIDTH,
    LOC_HEIGHT, LOC_WIDTH,
};
use crate::scene::{
    extrude, generate_floorplan, place_furniture_avoiding, sample_query_poses, FloorPlan, FurnishedScene,
    FurnitureLevel, GenerationParams, Pose, Scene3D,
};
use crate::seed;

pub use report::{export_csv, export_markdown, parse_csv, CorpusDescriptor, CsvRow, EvalReport, ReportRow, CSV_HEADER};
pub use svg::distance_field_svg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub scenes: usize,
    pub queries_per_scene: usize,
    pub grid_resolution: f64,
    pub clearance: f64,
    pub furniture: FurnitureLevel,
    pub seed: u64,
    pub generation: GenerationParams,
}

impl CorpusConfig {
    /// 20 scenes, 10 unfurnished queries each, 0.5 m grid, 0.3 m clearance.
    pub fn desk(seed: u64) -> Self {
        CorpusConfig {
            scenes: 20,
            queries_per_scene: 10,
            grid_resolution: 0.5,
            clearance: 0.3,
            furniture: FurnitureLevel::Empty,
            seed,
            generation: GenerationParams::default(),
        }
    }

    /// Plans whose splits often land at midpoints, so that several rooms
    /// share their dimensions.
    pub fn ambiguity(seed: u64) -> Self {
        CorpusConfig {
            generation: GenerationParams {
                symmetric_split_probability: 0.5,
                merge_probability: 0.0,
                ..GenerationParams::default().with_rooms(4, 5)
            },
            ..CorpusConfig::desk(seed)
        }
    }

    /// Single rectangular rooms.
    pub fn single_room(seed: u64) -> Self {
        CorpusConfig {
            generation: GenerationParams {
                merge_probability: 0.0,
                ..GenerationParams::default().with_size(5.0, 4.0).with_rooms(1, 1)
            },
            ..CorpusConfig::desk(seed)
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.scenes == 0 || self.queries_per_scene == 0 {
            return Err(Error::Empty("corpus needs at least one scene and one query".into()));
        }
        if !(self.grid_resolution > 0.0) || !(self.clearance >= 0.0) {
            return Err(Error::InvalidParams("grid resolution must be positive and clearance non-negative".into()));
        }
        Ok(())
    }

    pub fn scene_seed(&self, i: usize) -> u64 {
        seed::sub_seed(self.seed, &format!("scene-{i}"))
    }
}

/// One evaluation scene: its plan, furniture, query poses and grid.
#[derive(Debug, Clone)]
pub struct EvalScene {
    pub seed: u64,
    pub model: Scene3D<f64>,
    pub furnished: FurnishedScene<f64>,
    pub queries: Vec<Pose<f64>>,
    pub grid: Vec<Pose<f64>>,
}

impl EvalScene {
    pub fn plan(&self) -> &FloorPlan<f64> {
        &self.furnished.plan
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub scenes: Vec<EvalScene>,
}

impl Corpus {
    /// Queries are drawn from the plan first and furniture is then placed
    /// around them, so that corpora differing only in furniture level share
    /// plans and queries.
    pub fn build(config: &CorpusConfig) -> Result<Self> {
        config.check()?;
        let scenes = (0..config.scenes)
            .into_par_iter()
            .map(|i| {
                let s = config.scene_seed(i);
                let plan: FloorPlan<f64> = generate_floorplan(s, &config.generation)?;
                let queries = sample_query_poses(
                    &plan,
                    config.queries_per_scene,
                    seed::sub_seed(s, "queries"),
                    config.clearance,
                )?;
                let furnished = place_furniture_avoiding(
                    &plan,
                    config.furniture,
                    seed::sub_seed(s, "furniture"),
                    &queries,
                    config.clearance,
                )?;
                let grid = grid_poses(&plan, config.grid_resolution, config.clearance)?;
                Ok(EvalScene {
                    seed: s,
                    model: extrude(&plan),
                    furnished,
                    queries,
                    grid,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            config: config.clone(),
            scenes,
        })
    }

    pub fn query_count(&self) -> usize {
        self.scenes.iter().map(|s| s.queries.len()).sum()
    }

    pub fn descriptor(&self) -> CorpusDescriptor {
        CorpusDescriptor {
            scene_seeds: self.scenes.iter().map(|s| s.seed).collect(),
            queries: self.query_count(),
            grid_resolution: self.config.grid_resolution,
            furniture: self.config.furniture,
        }
    }
}

/// Ranks grid entries by a ground-truth layout metric against a query
/// layout render, bypassing any embedding.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    pub renders: Vec<PanoDepth<f64>>,
    clouds: Vec<PreparedCloud<f64>>,
}

impl OracleScorer {
    /// Renders the layout at every grid pose. Clouds for the 3D Chamfer
    /// metric keep at most `LABEL_POINTS` points, as for training labels.
    pub fn new(model: &Scene3D<f64>, grid: &[Pose<f64>]) -> Result<Self> {
        let items = grid
            .par_iter()
            .map(|&p| {
                let r = render_layout_depth(model, p, EMBED_WIDTH, EMBED_HEIGHT)?;
                let c = PreparedCloud::new(backproject(&r).subsample(LABEL_POINTS))?;
                Ok((r, c))
            })
            .collect::<Result<Vec<_>>>()?;
        let (renders, clouds) = items.into_iter().unzip();
        Ok(OracleScorer { renders, clouds })
    }

    pub fn len(&self) -> usize {
        self.renders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.renders.is_empty()
    }

    /// Distance from the query render to every grid entry under `metric`.
    pub fn scores(&self, metric: SimilarityMetric, query: &PanoDepth<f64>) -> Result<Vec<f64>> {
        match metric {
            SimilarityMetric::Chamfer3d => {
                let q = PreparedCloud::new(backproject(query).subsample(LABEL_POINTS))?;
                self.clouds.iter().map(|c| chamfer_prepared(&q, c)).collect()
            }
            m => self.renders.iter().map(|r| m.between(query, r)).collect(),
        }
    }
}

/// A localization method as it appears in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Retrieval by a ground-truth layout metric on the true layout.
    Oracle(SimilarityMetric),
    /// The grid pose nearest to the ground truth.
    PoseOracle,
    Icp,
    Latent(Stages),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Oracle(m) => format!("oracle-{m}"),
            Method::PoseOracle => "pose-oracle".into(),
            Method::Icp => "icp".into(),
            Method::Latent(Stages::VdrLpo) => "latent".into(),
            Method::Latent(s) => format!("latent-{s}"),
        }
    }

    pub fn needs_models(&self) -> bool {
        matches!(self, Method::Latent(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose-oracle" => return Ok(Method::PoseOracle),
            "icp" => return Ok(Method::Icp),
            "latent" => return Ok(Method::Latent(Stages::VdrLpo)),
            _ => {}
        }
        if let Some(m) = s.strip_prefix("oracle-") {
            return m.parse().map(Method::Oracle);
        }
        if let Some(st) = s.strip_prefix("latent-") {
            return st.parse().map(Method::Latent);
        }
        Err(Error::InvalidParams(format!("unknown method '{s}'")))
    }
}

/// Trained branches for the latent methods.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a> {
    pub layout: &'a EncoderParams<f64>,
    pub query: &'a EncoderParams<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub pipeline: PipelineConfig,
    pub icp: IcpConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            pipeline: PipelineConfig::default(),
            icp: IcpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub scene: usize,
    pub gt: Pose<f64>,
    pub estimate: Pose<f64>,
    /// Grid entry chosen by retrieval, or the entry nearest the estimate
    /// for methods without a retrieval stage.
    pub retrieved: usize,
    pub layout_correct: bool,
    pub pose_correct: bool,
    pub correct_room: bool,
    pub error: f64,
}

/// Per-query ground truth shared by every method.
struct Truth {
    layout: PanoDepth<f64>,
    chamfer: Vec<f64>,
    nearest: usize,
}

const TIE: f64 = 1e-12;

fn judge(scene: &EvalScene, idx: usize, gt: Pose<f64>, truth: &Truth, estimate: Pose<f64>, k: usize) -> QueryOutcome {
    let best_layout = truth.chamfer.iter().copied().fold(f64::INFINITY, f64::min);
    let best_pose = scene.grid[truth.nearest].distance(gt);
    let plan = scene.plan();
    QueryOutcome {
        scene: idx,
        gt,
        estimate,
        retrieved: k,
        layout_correct: truth.chamfer[k] <= best_layout + TIE,
        pose_correct: scene.grid[k].distance(gt) <= best_pose + TIE,
        correct_room: plan.room_containing(estimate).is_some() && plan.room_containing(estimate) == plan.room_containing(gt),
        error: estimate.distance(gt),
    }
}

/// Relative score difference treated as a tie by the oracles. Rooms with
/// identical geometry render identical layouts up to rounding, and without
/// this the choice between them would follow floating-point noise.
pub const ORACLE_TIE: f64 = 1e-9;

/// Lowest index among the entries scoring within `ORACLE_TIE` of the best.
pub fn oracle_top(scores: &[f64]) -> usize {
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    scores
        .iter()
        .position(|&s| s <= best + ORACLE_TIE * best.abs().max(1.0))
        .unwrap_or(0)
}

fn nearest_index(grid: &[Pose<f64>], p: Pose<f64>) -> usize {
    let d: Vec<f64> = grid.iter().map(|g| g.distance(p)).collect();
    rank(&d)[0].0
}

/// Latent database of one scene, built only when a latent method runs.
fn latent_db(scene: &EvalScene, scorer: &OracleScorer, layout: &EncoderParams<f64>, resolution: f64) -> Result<GridDatabase<f64>> {
    let entries = scene
        .grid
        .par_iter()
        .zip(&scorer.renders)
        .map(|(&pose, r)| {
            Ok(GridEntry {
                pose,
                embedding: layout.encode(r)?,
                depth: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridDatabase { resolution, entries })
}

struct LatentRun<'a> {
    plan: &'a FloorPlan<f64>,
    model: &'a Scene3D<f64>,
    models: Models<'a>,
    db: &'a GridDatabase<f64>,
    settings: &'a EvalSettings,
}

impl LatentRun<'_> {
    /// Estimates for every requested stage set from one retrieval and at
    /// most one Vogel-disc pass, mirroring `localize_full`.
    fn run(&self, query: &Embedding<f64>, stages: &[Stages]) -> Result<Vec<(usize, Pose<f64>)>> {
        let cfg = &self.settings.pipeline;
        let scores: Vec<f64> = self.db.entries.iter().map(|e| e.embedding.distance(query)).collect();
        let top = rank(&scores)[0].0;
        let retrieved = self.db.entries[top].pose;
        let latent = LatentCost {
            scene: self.model,
            params: self.models.layout,
            query,
        };
        let vdr = if stages.iter().any(|s| s.uses_vdr()) {
            let radius = cfg.vdr_radius.unwrap_or(2.0 * self.db.resolution);
            Some(vdr_refine(self.plan, retrieved, &latent, radius, cfg.vdr_samples)?.0)
        } else {
            None
        };
        stages
            .iter()
            .map(|&s| {
                let pose = match s {
                    Stages::Retrieval => retrieved,
                    Stages::Vdr => vdr.expect("computed above"),
                    Stages::Lpo => optimize_pose(self.plan, retrieved, &latent, &cfg.lpo)?.pose,
                    Stages::VdrLpo => optimize_pose(self.plan, vdr.expect("computed above"), &latent, &cfg.lpo)?.pose,
                    Stages::VdrDecode => {
                        let target = self.models.layout.decode(query)?;
                        decode_refine(self.plan, self.model, vdr.expect("computed above"), &target, &cfg.lpo)?.pose
                    }
                };
                Ok((top, pose))
            })
            .collect()
    }
}

/// Outcomes of every method on every query, indexed `[method][query]` with
/// queries in corpus order.
pub fn evaluate_outcomes(
    corpus: &Corpus,
    methods: &[Method],
    models: Option<Models<'_>>,
    settings: &EvalSettings,
) -> Result<Vec<Vec<QueryOutcome>>> {
    if methods.is_empty() {
        return Err(Error::Empty("no methods to evaluate".into()));
    }
    if corpus.query_count() == 0 {
        return Err(Error::Empty("corpus has no queries".into()));
    }
    if methods.iter().any(Method::needs_models) && models.is_none() {
        return Err(Error::InvalidParams("latent methods need trained layout and query params".into()));
    }
    settings.pipeline.lpo.check()?;
    settings.icp.check()?;
    let latent_stages: Vec<Stages> = methods
        .iter()
        .filter_map(|m| match m {
            Method::Latent(s) => Some(*s),
            _ => None,
        })
        .collect();
    let mut out: Vec<Vec<QueryOutcome>> = vec![Vec::new(); methods.len()];
    for (si, scene) in corpus.scenes.iter().enumerate() {
        let scorer = OracleScorer::new(&scene.model, &scene.grid)?;
        let db = match models {
            Some(m) if !latent_stages.is_empty() => {
                Some(latent_db(scene, &scorer, m.layout, corpus.config.grid_resolution)?)
            }
            _ => None,
        };
        let per_query = scene
            .queries
            .par_iter()
            .map(|&gt| {
                let layout = render_layout_depth(&scene.model, gt, EMBED_WIDTH, EMBED_HEIGHT)?;
                let chamfer = scorer.scores(SimilarityMetric::Chamfer3d, &layout)?;
                let truth = Truth {
                    layout,
                    chamfer,
                    nearest: nearest_index(&scene.grid, gt),
                };
                let mut latent = Vec::new();
                if let (Some(m), Some(db)) = (models, &db) {
                    let observed =
                        render_furnished_depth(&scene.model, &scene.furnished.furniture, gt, EMBED_WIDTH, EMBED_HEIGHT)?;
                    let q = m.query.encode(&observed)?;
                    let run = LatentRun {
                        plan: scene.plan(),
                        model: &scene.model,
                        models: m,
                        db,
                        settings,
                    };
                    latent = run.run(&q, &latent_stages)?;
                }
                let mut next_latent = latent.into_iter();
                methods
                    .iter()
                    .map(|m| {
                        let (k, est) = match m {
                            Method::Oracle(SimilarityMetric::Chamfer3d) => {
                                let k = oracle_top(&truth.chamfer);
                                (k, scene.grid[k])
                            }
                            Method::Oracle(metric) => {
                                let k = oracle_top(&scorer.scores(*metric, &truth.layout)?);
                                (k, scene.grid[k])
                            }
                            Method::PoseOracle => (truth.nearest, scene.grid[truth.nearest]),
                            Method::Icp => {
                                let obs = render_furnished_depth(
                                    &scene.model,
                                    &scene.furnished.furniture,
                                    gt,
                                    LOC_WIDTH,
                                    LOC_HEIGHT,
                                )?;
                                let r = icp_localize(&horizontal_scan(&obs), scene.plan(), &scene.grid, &settings.icp)?;
                                (nearest_index(&scene.grid, r.pose), r.pose)
                            }
                            Method::Latent(_) => next_latent.next().expect("one estimate per latent method"),
                        };
                        Ok(judge(scene, si, gt, &truth, est, k))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for q in per_query {
            for (mi, o) in q.into_iter().enumerate() {
                out[mi].push(o);
            }
        }
    }
    Ok(out)
}

/// One report row per method over the whole corpus.
pub fn evaluate_suite(
    corpus: &Corpus,
    methods: &[Method],
    models: Option<Models<'_>>,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let outcomes = evaluate_outcomes(corpus, methods, models, settings)?;
    let rows = methods
        .iter()
        .zip(&outcomes)
        .map(|(m, o)| ReportRow::from_outcomes(m.label(), o))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        corpus: corpus.descriptor(),
        rows,
    })
}

/// The latent pipeline with each stage combination, plus the oracle and
/// ICP reference rows.
pub fn main_methods() -> Vec<Method> {
    let mut m = vec![Method::Oracle(SimilarityMetric::Chamfer3d), Method::Icp];
    m.extend(Stages::ALL.into_iter().map(Method::Latent));
    m
}

/// The four metric oracles and the pose oracle.
pub fn ablation_methods() -> Vec<Method> {
    let mut m: Vec<Method> = SimilarityMetric::ALL.into_iter().map(Method::Oracle).collect();
    m.push(Method::PoseOracle);
    m
}

/// Rows suffixed with the variant that produced them, e.g. `latent [full]`.
pub fn combine(variants: Vec<(String, EvalReport)>) -> Result<EvalReport> {
    let mut corpus = None;
    let mut rows = Vec::new();
    for (name, rep) in variants {
        corpus.get_or_insert(rep.corpus);
        rows.extend(rep.rows.into_iter().map(|mut r| {
            r.method = format!("{} [{name}]", r.method);
            r
        }));
    }
    let corpus = corpus.ok_or_else(|| Error::Empty("no reports to combine".into()))?;
    Ok(EvalReport { corpus, rows })
}

/// The same plans and queries at each furniture level.
pub fn furniture_sweep(
    config: &CorpusConfig,
    levels: &[FurnitureLevel],
    methods: &[Method],
    models: Option<Models<'_>>,
    settings: &EvalSettings,
) -> Result<Vec<(String, EvalReport)>> {
    levels
        .iter()
        .map(|&level| {
            let corpus = Corpus::build(&CorpusConfig {
                furniture: level,
                ..config.clone()
            })?;
            Ok((level.name().to_owned(), evaluate_suite(&corpus, methods, models, settings)?))
        })
        .collect()
}

pub fn grid_resolution_sweep(
    config: &CorpusConfig,
    resolutions: &[f64],
    methods: &[Method],
    models: Option<Models<'_>>,
    settings: &EvalSettings,
) -> Result<Vec<(String, EvalReport)>> {
    resolutions
        .iter()
        .map(|&r| {
            let corpus = Corpus::build(&CorpusConfig {
                grid_resolution: r,
                ..config.clone()
            })?;
            Ok((format!("grid={r}"), evaluate_suite(&corpus, methods, models, settings)?))
        })
        .collect()
}

/// VDR-only and VDR+LPO at each sample count, from identical retrievals.
pub fn vdr_sweep(
    corpus: &Corpus,
    ns: &[usize],
    models: Models<'_>,
    settings: &EvalSettings,
) -> Result<Vec<(String, EvalReport)>> {
    if ns.iter().any(|&n| n == 0) {
        return Err(Error::InvalidParams("Vogel sample counts must be at least 1".into()));
    }
    let methods = [Method::Latent(Stages::Vdr), Method::Latent(Stages::VdrLpo)];
    ns.iter()
        .map(|&n| {
            let s = EvalSettings {
                pipeline: PipelineConfig {
                    vdr_samples: n,
                    ..settings.pipeline.clone()
                },
                ..settings.clone()
            };
            Ok((format!("n={n}"), evaluate_suite(corpus, &methods, Some(models), &s)?))
        })
        .collect()
}
