use std::path::{Path, PathBuf};

use floorloc::embed::{
    load_params, mean_l2, train_layout_branch, train_query_branch, write_params, Branch, EncoderParams, QueryLoss,
    TrainConfig, TrainingCorpus,
};
use floorloc::eval::{
    ablation_methods, combine, distance_field_svg, evaluate_suite, export_csv, export_markdown, furniture_sweep,
    grid_resolution_sweep, main_methods, parse_csv, vdr_sweep, Corpus, CorpusConfig, EvalReport, EvalSettings,
    Method, Models, OracleScorer,
};
use floorloc::localize::{build_database, grid_poses, localize_full, LocalizationResult, PipelineConfig, Stages};
use floorloc::metrics::SimilarityMetric;
use floorloc::render::{
    load_depth, render_furnished_depth, render_layout_depth, write_depth, EMBED_HEIGHT, EMBED_WIDTH,
};
use floorloc::scene::{
    extrude, generate_floorplan, load_scene, place_furniture, plan_to_json, FloorPlan, FurnishedScene,
    FurnitureLevel, GenerationParams, Pose,
};
use serde::Serialize;
use serde_json::json;

use crate::failure::Failure;
use crate::manifest::Manifest;
use crate::{
    out_dir, CorpusKind, EvalArgs, GenerateArgs, LocalizeArgs, PlotArgs, RenderArgs, Suite, TrainLayoutArgs,
    TrainQueryArgs, TrainShared,
};

fn parse<T: std::str::FromStr<Err = floorloc::Error>>(s: &str) -> Result<T, Failure> {
    s.parse().map_err(Failure::from)
}

fn params_bytes(params: &EncoderParams) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write_params(params, &mut buf).map_err(|e| Failure::new("io", e.to_string()))?;
    Ok(buf)
}

fn to_json(value: &impl Serialize) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::new("internal", e.to_string()))
}

/// Plan files of a `generate` output directory, in name order.
fn load_scenes(dir: &Path) -> Result<Vec<FurnishedScene>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.ends_with("manifest.json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::new("empty", format!("no plan files in {}", dir.display())));
    }
    paths.iter().map(|p| load_scene(p).map_err(Failure::from)).collect()
}

fn load_branch(path: &Path, branch: Branch) -> Result<EncoderParams, Failure> {
    let p: EncoderParams = load_params(path)?;
    if p.branch != branch {
        return Err(Failure::new(
            "invalid_params",
            format!("{} holds {:?}-branch params, expected {:?}", path.display(), p.branch, branch),
        ));
    }
    Ok(p)
}

pub fn generate(seed: u64, a: &GenerateArgs) -> Result<(), Failure> {
    let level: FurnitureLevel = parse(&a.furniture)?;
    let params = GenerationParams {
        width: a.width,
        height: a.height,
        min_rooms: a.min_rooms,
        max_rooms: a.max_rooms,
        merge_probability: a.merge,
        symmetric_split_probability: a.symmetric,
        ..GenerationParams::default()
    };
    out_dir(&a.out)?;
    let mut m = Manifest::new("generate", seed, a);
    for i in 0..a.scenes as usize {
        let s = m.sub_seed(&format!("scene-{i}"));
        let plan: FloorPlan = generate_floorplan(s, &params)?;
        let scene = place_furniture(&plan, level, floorloc::seed::sub_seed(s, "furniture"))?;
        m.write(&a.out, &format!("scene-{i:03}.json"), plan_to_json(&scene))?;
    }
    m.finish(&a.out)
}

fn train_config(base: TrainConfig, a: &TrainShared, seed: u64) -> Result<TrainConfig, Failure> {
    let c = TrainConfig {
        epochs: a.epochs.unwrap_or(base.epochs),
        lr: a.lr.unwrap_or(base.lr),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        poses_per_scene: a.poses_per_scene.unwrap_or(base.poses_per_scene),
        n_neg: a.n_neg.unwrap_or(base.n_neg),
        seed,
        ..base
    };
    c.check()?;
    Ok(c)
}

fn trace_csv(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

pub fn train_layout(seed: u64, a: &TrainLayoutArgs) -> Result<(), Failure> {
    let scenes = load_scenes(&a.shared.scenes)?;
    out_dir(&a.shared.out)?;
    let mut m = Manifest::new("train layout", seed, a);
    let config = train_config(TrainConfig::layout_default(), &a.shared, m.sub_seed("train-layout"))?;
    let plans: Vec<FloorPlan> = scenes.into_iter().map(|s| s.plan).collect();
    let corpus = TrainingCorpus::layout(&plans, &config)?;
    let report = train_layout_branch(&corpus.pools, &config)?;
    m.write(&a.shared.out, "layout.params", params_bytes(&report.params)?)?;
    m.write(&a.shared.out, "trace.csv", trace_csv(&report.epoch_losses))?;
    m.params = json!({ "args": m.params, "config": config });
    m.results = json!({
        "first_loss": report.epoch_losses.first(),
        "final_loss": report.epoch_losses.last(),
    });
    m.finish(&a.shared.out)
}

pub fn train_query(seed: u64, a: &TrainQueryArgs) -> Result<(), Failure> {
    let Some(layout_path) = &a.layout else {
        return Err(Failure::new(
            "missing_prerequisite",
            "train query needs --layout <params> written by `train layout`",
        ));
    };
    let layout = load_branch(layout_path, Branch::Layout)?;
    let loss: QueryLoss = parse(&a.loss)?;
    let levels = a.levels.iter().map(|l| parse(l)).collect::<Result<Vec<FurnitureLevel>, _>>()?;
    let scenes = load_scenes(&a.shared.scenes)?;
    if a.holdout >= scenes.len() {
        return Err(Failure::usage(format!(
            "--holdout {} leaves no training plans out of {}",
            a.holdout,
            scenes.len()
        )));
    }
    out_dir(&a.shared.out)?;
    let mut m = Manifest::new("train query", seed, a);
    let config = train_config(TrainConfig::query_default(), &a.shared, m.sub_seed("train-query"))?;
    let plans: Vec<FloorPlan> = scenes.into_iter().map(|s| s.plan).collect();
    let (train_plans, held_plans) = plans.split_at(plans.len() - a.holdout);
    let corpus = TrainingCorpus::query(train_plans, &levels, &config)?;
    let report = train_query_branch(&corpus.pairs, &layout, loss, &config)?;
    m.write(&a.shared.out, "query.params", params_bytes(&report.params)?)?;
    m.write(&a.shared.out, "trace.csv", trace_csv(&report.epoch_losses))?;
    let mut results = json!({
        "first_loss": report.epoch_losses.first(),
        "final_loss": report.epoch_losses.last(),
    });
    if !held_plans.is_empty() {
        let held_config = TrainConfig {
            seed: m.sub_seed("holdout"),
            ..config.clone()
        };
        let held = TrainingCorpus::query(held_plans, &levels, &held_config)?;
        let init = EncoderParams::random(Branch::Query, floorloc::seed::sub_seed(config.seed, "query-init"));
        results["holdout_l2_init"] = json!(mean_l2(&init, &layout, &held.pairs)?);
        results["holdout_l2_trained"] = json!(mean_l2(&report.params, &layout, &held.pairs)?);
    }
    m.params = json!({ "args": m.params, "config": config });
    m.results = results;
    m.finish(&a.shared.out)
}

#[derive(Serialize)]
struct LocalizeOutput {
    #[serde(flatten)]
    result: LocalizationResult,
    error: Option<f64>,
}

pub fn localize(seed: u64, a: &LocalizeArgs) -> Result<(), Failure> {
    let stages: Stages = parse(&a.stages)?;
    let scene = load_scene::<f64>(&a.plan)?;
    let layout = load_branch(&a.layout, Branch::Layout)?;
    let query_params = match &a.query {
        Some(p) => Some(load_branch(p, Branch::Query)?),
        None => None,
    };
    let depth = load_depth::<f64>(&a.depth)?;
    if (depth.width, depth.height) != (EMBED_WIDTH, EMBED_HEIGHT) {
        return Err(Failure::new(
            "dimension",
            format!(
                "query depth is {}x{}, the encoders take {EMBED_WIDTH}x{EMBED_HEIGHT}",
                depth.width, depth.height
            ),
        ));
    }
    let embedding = query_params.as_ref().unwrap_or(&layout).encode(&depth)?;
    let config = PipelineConfig {
        stages,
        vdr_radius: a.vdr_radius,
        vdr_samples: a.vdr_samples,
        ..PipelineConfig::default()
    };
    let plan = &scene.plan;
    let db = build_database(plan, a.grid, a.clearance, &layout, false)?;
    let model = extrude(plan);
    let gt = a.gt.map(|(x, y)| Pose::new(x, y));
    let result = localize_full(&embedding, plan, &model, &layout, &db, &config, gt)?;
    out_dir(&a.out)?;
    let mut m = Manifest::new("localize", seed, a);
    let output = LocalizeOutput {
        error: result.error(),
        result,
    };
    m.write(&a.out, "result.json", to_json(&output)?)?;
    m.params = json!({ "args": m.params, "pipeline": config });
    m.results = json!({ "pose": output.result.refined_pose, "error": output.error });
    m.finish(&a.out)
}

fn corpus_config(a: &EvalArgs, seed: u64) -> Result<CorpusConfig, Failure> {
    let kind = a.corpus.unwrap_or(if a.suite == Suite::MetricAblation {
        CorpusKind::Ambiguity
    } else {
        CorpusKind::Desk
    });
    let base = match kind {
        CorpusKind::Desk => CorpusConfig::desk(seed),
        CorpusKind::Ambiguity => CorpusConfig::ambiguity(seed),
        CorpusKind::SingleRoom => CorpusConfig::single_room(seed),
    };
    let c = CorpusConfig {
        scenes: a.scenes,
        queries_per_scene: a.queries,
        grid_resolution: a.grid,
        furniture: parse(&a.furniture)?,
        ..base
    };
    c.check()?;
    Ok(c)
}

fn default_methods(suite: Suite) -> Vec<Method> {
    match suite {
        Suite::Main | Suite::GridResolution => main_methods(),
        Suite::MetricAblation => ablation_methods(),
        Suite::Furniture => vec![Method::Icp, Method::Latent(Stages::VdrLpo)],
        Suite::VdrSweep => vec![Method::Latent(Stages::Vdr), Method::Latent(Stages::VdrLpo)],
    }
}

pub fn eval(seed: u64, a: &EvalArgs) -> Result<(), Failure> {
    let mut m = Manifest::new("eval", seed, a);
    let config = corpus_config(a, m.sub_seed("corpus"))?;
    let methods = match &a.methods {
        Some(list) => list.iter().map(|s| parse(s)).collect::<Result<Vec<Method>, _>>()?,
        None => default_methods(a.suite),
    };
    if methods.is_empty() {
        return Err(Failure::usage("no methods to evaluate"));
    }
    let layout = a.layout.as_deref().map(|p| load_branch(p, Branch::Layout)).transpose()?;
    let query = a.query.as_deref().map(|p| load_branch(p, Branch::Query)).transpose()?;
    let models = match (&layout, &query) {
        (Some(layout), Some(query)) => Some(Models { layout, query }),
        _ => None,
    };
    let needs_models = a.suite == Suite::VdrSweep || methods.iter().any(Method::needs_models);
    if needs_models && models.is_none() {
        return Err(Failure::new(
            "missing_prerequisite",
            "latent methods need --layout and --query params from `train`",
        ));
    }
    let settings = EvalSettings::default();
    let report: EvalReport = match a.suite {
        Suite::Main => evaluate_suite(&Corpus::build(&config)?, &methods, models, &settings)?,
        Suite::MetricAblation | Suite::GridResolution => {
            combine(grid_resolution_sweep(&config, &a.grids, &methods, models, &settings)?)?
        }
        Suite::Furniture => {
            let levels = a.levels.iter().map(|l| parse(l)).collect::<Result<Vec<FurnitureLevel>, _>>()?;
            combine(furniture_sweep(&config, &levels, &methods, models, &settings)?)?
        }
        Suite::VdrSweep => {
            let models = models.expect("checked above");
            combine(vdr_sweep(&Corpus::build(&config)?, &a.n, models, &settings)?)?
        }
    };
    report.validate()?;
    let csv = export_csv(&report)?;
    if parse_csv(&csv)?.len() != report.rows.len() {
        return Err(Failure::new("validation", "CSV export does not round-trip"));
    }
    out_dir(&a.out)?;
    m.write(&a.out, "report.csv", &csv)?;
    m.write(&a.out, "report.md", export_markdown(&report))?;
    m.write(&a.out, "report.json", to_json(&report)?)?;
    if a.svg {
        let corpus = Corpus::build(&config)?;
        for (i, scene) in corpus.scenes.iter().enumerate() {
            let Some(&q) = scene.queries.first() else { continue };
            let scorer = OracleScorer::new(&scene.model, &scene.grid)?;
            let depth = render_furnished_depth(&scene.model, &scene.furnished.furniture, q, EMBED_WIDTH, EMBED_HEIGHT)?;
            let scores = scorer.scores(SimilarityMetric::Chamfer3d, &depth)?;
            let svg = distance_field_svg(scene.plan(), &scene.grid, &scores, config.grid_resolution, q)?;
            m.write(&a.out, &format!("field-scene{i:03}.svg"), svg)?;
        }
    }
    m.params = json!({ "args": m.params, "corpus": config, "methods": methods, "settings": settings });
    m.results = report
        .rows
        .iter()
        .map(|r| (r.method.clone(), json!({ "pose_r1": r.pose_r1, "median_cm": r.median_cm })))
        .collect::<serde_json::Map<_, _>>()
        .into();
    m.finish(&a.out)
}

pub fn render(seed: u64, a: &RenderArgs) -> Result<(), Failure> {
    let scene = load_scene::<f64>(&a.plan)?;
    let pose = Pose::new(a.pose.0, a.pose.1);
    let model = extrude(&scene.plan);
    let depth = if a.layout_only {
        render_layout_depth(&model, pose, a.width, a.height)?
    } else {
        render_furnished_depth(&model, &scene.furniture, pose, a.width, a.height)?
    };
    let mut bytes = Vec::new();
    write_depth(&depth, &mut bytes).map_err(|e| Failure::new("io", e.to_string()))?;
    out_dir(&a.out)?;
    let mut m = Manifest::new("render", seed, a);
    m.write(&a.out, "depth.pdph", bytes)?;
    m.finish(&a.out)
}

pub fn plot(seed: u64, a: &PlotArgs) -> Result<(), Failure> {
    let scene = load_scene::<f64>(&a.plan)?;
    let plan = &scene.plan;
    let q = Pose::new(a.query.0, a.query.1);
    let model = extrude(plan);
    let depth = render_layout_depth(&model, q, EMBED_WIDTH, EMBED_HEIGHT)?;
    let (grid, scores) = if a.metric == "latent" {
        let Some(path) = &a.layout else {
            return Err(Failure::new("missing_prerequisite", "--metric latent needs --layout params"));
        };
        let layout = load_branch(path, Branch::Layout)?;
        let db = build_database(plan, a.grid, a.clearance, &layout, false)?;
        let e = layout.encode(&depth)?;
        let scores = db.entries.iter().map(|x| x.embedding.distance(&e)).collect();
        (db.poses(), scores)
    } else {
        let metric: SimilarityMetric = parse(&a.metric)?;
        let grid = grid_poses(plan, a.grid, a.clearance)?;
        let scores = OracleScorer::new(&model, &grid)?.scores(metric, &depth)?;
        (grid, scores)
    };
    let svg = distance_field_svg(plan, &grid, &scores, a.grid, q)?;
    out_dir(&a.out)?;
    let mut m = Manifest::new("plot", seed, a);
    m.write(&a.out, "field.svg", svg)?;
    m.finish(&a.out)
}
