//! Acceptance checks. Each test prints one `PASS`/`FAIL` line and asserts
//! the outcome. The tests share one trained model pair and run one at a time
//! so that the runtime bounds are measured without contention.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use floorloc::embed::{
    loss, mean_l2, train_layout_branch, train_query_branch, write_params, Branch, EncoderParams, QueryLoss,
    TrainConfig, TrainingCorpus,
};
use floorloc::eval::{
    ablation_methods, evaluate_suite, main_methods, vdr_sweep, Corpus, CorpusConfig, EvalReport, EvalSettings,
    Method, Models,
};
use floorloc::geometry::{point_segment_distance, Vec2};
use floorloc::localize::{latent_pose_optimize, LpoConfig, Stages};
use floorloc::metrics::{chamfer_3d, SimilarityMetric};
use floorloc::render::{backproject, depth_pose_jacobian, fd_depth_jacobian, render_layout_depth, PointCloud};
use floorloc::scene::{extrude, generate_floorplan, sample_query_poses, FloorPlan, FurnitureLevel, GenerationParams};
use floorloc::seed::sub_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAIN_SEED: u64 = 7;
const TRAIN_PLANS: usize = 20;
const HOLDOUT_PLANS: usize = 4;
const CORPUS_SEED: u64 = 1;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to stdout so the line shows without `--nocapture`.
fn verdict(name: &str, pass: bool, detail: &str, elapsed: Duration) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("{tag} {name}: {detail} ({:.1}s)\n", elapsed.as_secs_f64());
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    pass
}

struct Trained {
    layout: EncoderParams<f64>,
    query: EncoderParams<f64>,
    layout_bytes_before: Vec<u8>,
    layout_bytes_after: Vec<u8>,
    holdout_init: f64,
    holdout_trained: f64,
}

fn bytes(params: &EncoderParams<f64>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_params(params, &mut buf).unwrap();
    buf
}

fn plans(name: &str, n: usize) -> Vec<FloorPlan> {
    (0..n)
        .map(|i| generate_floorplan(sub_seed(TRAIN_SEED, &format!("{name}-{i}")), &GenerationParams::default()).unwrap())
        .collect()
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let train = plans("train-plan", TRAIN_PLANS);
        let lc = TrainConfig::layout_default().with_seed(TRAIN_SEED);
        let corpus = TrainingCorpus::layout(&train, &lc).unwrap();
        let layout = train_layout_branch(&corpus.pools, &lc).unwrap().params;

        let qc = TrainConfig::query_default().with_seed(TRAIN_SEED + 1);
        let pairs = TrainingCorpus::query(&train, &FurnitureLevel::ALL, &qc).unwrap();
        let layout_bytes_before = bytes(&layout);
        let query = train_query_branch(&pairs.pairs, &layout, QueryLoss::L2, &qc).unwrap().params;
        let layout_bytes_after = bytes(&layout);

        let held = plans("holdout-plan", HOLDOUT_PLANS);
        let hc = TrainConfig::query_default().with_seed(TRAIN_SEED + 2);
        let held = TrainingCorpus::query(&held, &FurnitureLevel::ALL, &hc).unwrap();
        let init = EncoderParams::random(Branch::Query, sub_seed(qc.seed, "query-init"));
        let holdout_init = mean_l2(&init, &layout, &held.pairs).unwrap();
        let holdout_trained = mean_l2(&query, &layout, &held.pairs).unwrap();
        let line = format!("trained {TRAIN_PLANS} plans in {:.1}s\n", t.elapsed().as_secs_f64());
        std::io::stdout().write_all(line.as_bytes()).unwrap();
        Trained { layout, query, layout_bytes_before, layout_bytes_after, holdout_init, holdout_trained }
    })
}

fn models(t: &Trained) -> Models<'_> {
    Models { layout: &t.layout, query: &t.query }
}

fn median_cm(report: &EvalReport, method: &str) -> f64 {
    report.row(method).unwrap_or_else(|| panic!("no row {method}")).median_cm
}

fn close(analytic: &[f64], numeric: &[f64]) -> bool {
    let num: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-3);
    num / den < 1e-5
}

fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|k| {
            let (mut up, mut down) = (x.to_vec(), x.to_vec());
            up[k] += h;
            down[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_correctness() {
    let _g = serial();
    let t = Instant::now();
    let mut pixels = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let plan: FloorPlan = generate_floorplan(seed, &GenerationParams::default()).unwrap();
        let scene = extrude(&plan);
        for pose in sample_query_poses(&plan, 2, sub_seed(seed, "jacobian"), 0.3).unwrap() {
            let a = depth_pose_jacobian(&scene, pose, 64, 32).unwrap();
            let f = fd_depth_jacobian(&scene, pose, 64, 32, 1e-4).unwrap();
            for i in (0..a.valid.len()).filter(|&i| a.valid[i] && f.valid[i]) {
                for (x, y) in [(a.d_dx[i], f.d_dx[i]), (a.d_dy[i], f.d_dy[i])] {
                    worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(1e-6));
                }
                pixels += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let vec = |rng: &mut ChaCha8Rng| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (mut configs, mut bad) = (0, 0);
    while configs < 100 {
        let (p, g, i, j) = (vec(&mut rng), vec(&mut rng), vec(&mut rng), vec(&mut rng));
        let (ci, cj) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
        let Ok(r) = loss::log_ratio(&p, &i, &j, ci, cj) else { continue };
        let Ok((_, kd)) = loss::kd_lr(&p, &g, &i, &j) else { continue };
        let target: Vec<f64> = g.iter().map(|v| v + 0.37).collect();
        if p.iter().zip(&target).any(|(a, b)| (a - b).abs() < 1e-4) {
            continue;
        }
        let ok = close(&r.anchor, &fd(|x| loss::log_ratio(x, &i, &j, ci, cj).unwrap().value, &p))
            && close(&r.first, &fd(|x| loss::log_ratio(&p, x, &j, ci, cj).unwrap().value, &i))
            && close(&r.second, &fd(|x| loss::log_ratio(&p, &i, x, ci, cj).unwrap().value, &j))
            && close(&kd, &fd(|x| loss::kd_lr(x, &g, &i, &j).unwrap().0, &p))
            && close(&loss::l2(&p, &g).1, &fd(|x| loss::l2(x, &g).0, &p))
            && close(&loss::decode(&p, &target).unwrap().1, &fd(|x| loss::decode(x, &target).unwrap().0, &p));
        configs += 1;
        bad += usize::from(!ok);
    }

    let elapsed = t.elapsed();
    let pass = pixels >= 1000 && worst < 1e-4 && bad == 0 && elapsed < Duration::from_secs(60);
    let detail = format!("{pixels} pixels, worst relative error {worst:.2e}; {bad}/{configs} loss configs off");
    assert!(verdict("gradient correctness", pass, &detail, elapsed));
}

#[test]
fn oracle_retrieval() {
    let _g = serial();
    let t = Instant::now();
    let corpus = Corpus::build(&CorpusConfig::desk(CORPUS_SEED)).unwrap();
    let oracle = Method::Oracle(SimilarityMetric::Chamfer3d);
    let report = evaluate_suite(&corpus, &[oracle], None, &EvalSettings::default()).unwrap();
    let row = &report.rows[0];
    let elapsed = t.elapsed();
    let pass = row.layout_r1 == 1.0 && row.pose_r1 >= 0.85 && elapsed < Duration::from_secs(300);
    let detail = format!("layout R@1 {:.1}%, pose R@1 {:.1}%", 100.0 * row.layout_r1, 100.0 * row.pose_r1);
    assert!(verdict("oracle retrieval", pass, &detail, elapsed));
}

#[test]
fn icp_on_clean_and_furnished_layouts() {
    let _g = serial();
    let t = Instant::now();
    let median = |level| {
        let corpus = Corpus::build(&CorpusConfig { furniture: level, ..CorpusConfig::desk(CORPUS_SEED) }).unwrap();
        let report = evaluate_suite(&corpus, &[Method::Icp], None, &EvalSettings::default()).unwrap();
        report.rows[0].median_cm
    };
    let (clean, full) = (median(FurnitureLevel::Empty), median(FurnitureLevel::Full));
    let pass = clean <= 1.0 && full >= 5.0 * clean;
    let detail = format!("clean median {clean:.3} cm, furnished {full:.2} cm, ratio {:.1}", full / clean);
    assert!(verdict("icp clean and furnished", pass, &detail, t.elapsed()));
}

#[test]
fn lpo_basin_of_convergence() {
    let _g = serial();
    let model = trained();
    let t = Instant::now();
    let corpus = Corpus::build(&CorpusConfig { scenes: 10, ..CorpusConfig::single_room(CORPUS_SEED) }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(CORPUS_SEED, "basin"));
    let (mut trials, mut hits) = (0, 0);
    for scene in &corpus.scenes {
        for &gt in &scene.queries {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let init = gt.offset(0.25 * angle.cos(), 0.25 * angle.sin());
            let query = model.layout.encode(&render_layout_depth(&scene.model, gt, 64, 32).unwrap()).unwrap();
            let out = latent_pose_optimize(scene.plan(), &scene.model, init, &query, &model.layout, &LpoConfig::default())
                .unwrap();
            trials += 1;
            hits += usize::from(out.pose.distance(gt) < 0.05);
        }
    }
    let elapsed = t.elapsed();
    let pass = trials == 100 && hits >= 90 && elapsed < Duration::from_secs(300);
    assert!(verdict("lpo basin", pass, &format!("{hits}/{trials} converged below 5 cm"), elapsed));
}

#[test]
fn pipeline_stage_ordering() {
    let _g = serial();
    let model = trained();
    let t = Instant::now();
    let corpus = Corpus::build(&CorpusConfig::desk(CORPUS_SEED)).unwrap();
    let methods: Vec<Method> = main_methods().into_iter().filter(Method::needs_models).collect();
    let report = evaluate_suite(&corpus, &methods, Some(models(model)), &EvalSettings::default()).unwrap();
    let m = |s: Stages| median_cm(&report, &Method::Latent(s).label());
    let (ret, vdr, full, dec) = (m(Stages::Retrieval), m(Stages::Vdr), m(Stages::VdrLpo), m(Stages::VdrDecode));
    let pass = ret > vdr && vdr >= full && dec > full;
    let detail = format!("medians: retrieval {ret:.2}, vdr {vdr:.2}, vdr+lpo {full:.2}, vdr+decode {dec:.2} cm");
    assert!(verdict("pipeline ordering", pass, &detail, t.elapsed()));
}

#[test]
fn metric_ablation() {
    let _g = serial();
    let t = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for grid in [0.5, 1.0] {
        let config = CorpusConfig { grid_resolution: grid, ..CorpusConfig::ambiguity(CORPUS_SEED) };
        let corpus = Corpus::build(&config).unwrap();
        let methods: Vec<Method> = ablation_methods().into_iter().filter(|m| matches!(m, Method::Oracle(_))).collect();
        let report = evaluate_suite(&corpus, &methods, None, &EvalSettings::default()).unwrap();
        let chamfer = report.row(&Method::Oracle(SimilarityMetric::Chamfer3d).label()).unwrap();
        let others = report.rows.iter().filter(|r| r.method != chamfer.method);
        let (best_r1, best_room) =
            others.fold((0.0f64, 0.0f64), |(a, b), r| (a.max(r.pose_r1), b.max(r.correct_room)));
        pass &= chamfer.pose_r1 > best_r1 && chamfer.correct_room > best_room;
        detail.push(format!(
            "grid {grid}: chamfer R@1 {:.1}% vs {:.1}%, room {:.1}% vs {:.1}%",
            100.0 * chamfer.pose_r1,
            100.0 * best_r1,
            100.0 * chamfer.correct_room,
            100.0 * best_room
        ));
    }
    assert!(verdict("metric ablation", pass, &detail.join("; "), t.elapsed()));
}

#[test]
fn vdr_sample_sweep() {
    let _g = serial();
    let model = trained();
    let t = Instant::now();
    let corpus = Corpus::build(&CorpusConfig::desk(CORPUS_SEED)).unwrap();
    let sweep = vdr_sweep(&corpus, &[1, 10, 50, 200], models(model), &EvalSettings::default()).unwrap();
    let vdr: Vec<f64> = sweep.iter().map(|(_, r)| median_cm(r, "latent-vdr")).collect();
    let full: Vec<f64> = sweep.iter().map(|(_, r)| median_cm(r, "latent")).collect();
    let monotone = vdr.windows(2).all(|w| w[1] <= w[0]);
    let (gap_full, gap_vdr) = (full[0] - full[3], vdr[0] - vdr[3]);
    let pass = monotone && gap_full < gap_vdr;
    let detail = format!("vdr medians {vdr:.2?} cm; vdr+lpo gap {gap_full:.2} < vdr gap {gap_vdr:.2}");
    assert!(verdict("vdr sweep", pass, &detail, t.elapsed()));
}

fn surface_residual(plan: &FloorPlan, p: [f64; 3]) -> f64 {
    let xy = Vec2::new(p[0], p[1]);
    let mut best = p[2].abs().min((p[2] - plan.ceiling_height).abs());
    for ring in &plan.rooms {
        for i in 0..ring.len() {
            best = best.min(point_segment_distance(xy, ring[i], ring[(i + 1) % ring.len()]));
        }
    }
    best
}

fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let d = |p: &[f64; 3], q: &[f64; 3]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    let side = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter().map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
    };
    side(a, b) + side(b, a)
}

fn floorloc(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_floorloc")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

/// Runs generate, both training stages and an evaluation in a fresh
/// directory and returns every file written.
fn cli_run(jobs: &str) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--seed", "5", "--jobs", jobs];
        full.extend_from_slice(args);
        floorloc(dir.path(), &full);
    };
    run(&["generate", "--scenes", "3", "--out", "scenes", "--width", "7", "--height", "6"]);
    let small = ["--epochs", "2", "--poses-per-scene", "8", "--n-neg", "4"];
    let mut layout = vec!["train", "layout", "--scenes", "scenes", "--out", "layout"];
    layout.extend_from_slice(&small);
    run(&layout);
    let mut query = vec!["train", "query", "--scenes", "scenes", "--layout", "layout/layout.params", "--out", "query"];
    query.extend_from_slice(&small);
    run(&query);
    run(&[
        "eval", "main", "--layout", "layout/layout.params", "--query", "query/query.params", "--scenes", "2",
        "--queries", "2", "--out", "eval",
    ]);
    tree(dir.path())
}

#[test]
fn invariant_suites() {
    let _g = serial();
    let t = Instant::now();
    let mut failures = Vec::new();

    let mut residual: f64 = 0.0;
    for seed in 0..10u64 {
        let plan: FloorPlan = generate_floorplan(seed, &GenerationParams::default()).unwrap();
        let scene = extrude(&plan);
        for pose in sample_query_poses(&plan, 3, seed, 0.2).unwrap() {
            for q in backproject(&render_layout_depth(&scene, pose, 64, 32).unwrap()).points {
                let w = [q[0] + pose.x, q[1] + pose.y, q[2] + plan.camera_height];
                residual = residual.max(surface_residual(&plan, w));
            }
        }
    }
    if residual >= 1e-9 {
        failures.push(format!("surface residual {residual:.2e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut chamfer_gap: f64 = 0.0;
    for _ in 0..50 {
        let cloud = |rng: &mut ChaCha8Rng| -> Vec<[f64; 3]> {
            let n = rng.random_range(1..=500);
            (0..n).map(|_| [0; 3].map(|_| rng.random_range(-5.0..5.0))).collect()
        };
        let (a, b) = (cloud(&mut rng), cloud(&mut rng));
        let fast = chamfer_3d(&PointCloud { points: a.clone() }, &PointCloud { points: b.clone() }).unwrap();
        chamfer_gap = chamfer_gap.max((fast - brute_chamfer(&a, &b)).abs());
    }
    if chamfer_gap >= 1e-9 {
        failures.push(format!("chamfer gap {chamfer_gap:.2e}"));
    }

    let corpus = Corpus::build(&CorpusConfig { scenes: 3, queries_per_scene: 4, ..CorpusConfig::desk(CORPUS_SEED) })
        .unwrap();
    let mut methods = main_methods();
    methods.extend(ablation_methods());
    let model = EncoderParams::random(Branch::Layout, 1);
    let report =
        evaluate_suite(&corpus, &methods, Some(Models { layout: &model, query: &model }), &EvalSettings::default())
            .unwrap();
    let monotone = report.rows.iter().all(|r| r.fractions().windows(2).all(|w| w[0] <= w[1]));
    if !monotone || report.validate().is_err() {
        failures.push("threshold fractions not monotone".into());
    }

    let (one, two) = (cli_run("1"), cli_run("2"));
    if one != two {
        failures.push("cli outputs differ between --jobs 1 and --jobs 2".into());
    }
    if cli_run("1") != one {
        failures.push("cli outputs differ between repeated runs".into());
    }

    let pass = failures.is_empty();
    let detail = if pass {
        format!("residual {residual:.1e}, chamfer gap {chamfer_gap:.1e}, {} report rows, {} cli files identical", report.rows.len(), one.len())
    } else {
        failures.join("; ")
    };
    assert!(verdict("invariant suites", pass, &detail, t.elapsed()));
}

#[test]
fn frozen_teacher() {
    let _g = serial();
    let model = trained();
    let t = Instant::now();
    let frozen = model.layout_bytes_before == model.layout_bytes_after;
    let gain = 1.0 - model.holdout_trained / model.holdout_init;
    let pass = frozen && gain >= 0.5;
    let detail = format!(
        "layout bytes {}; held-out l2 {:.3} -> {:.3} ({:.0}% lower)",
        if frozen { "unchanged" } else { "changed" },
        model.holdout_init,
        model.holdout_trained,
        100.0 * gain
    );
    assert!(verdict("frozen teacher", pass, &detail, t.elapsed()));
}
