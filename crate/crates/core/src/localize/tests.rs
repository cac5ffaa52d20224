use super::*;
use crate::embed::Branch;
use crate::geometry::Vec2;
use crate::render::{horizontal_scan, LOC_HEIGHT, LOC_WIDTH};
use crate::scene::{generate_floorplan, sample_query_poses, GenerationParams};
use crate::seed;
use rand::Rng;

fn rect(w: f64, h: f64) -> FloorPlan<f64> {
    let r = vec![Vec2::new(0.0, 0.0), Vec2::new(w, 0.0), Vec2::new(w, h), Vec2::new(0.0, h)];
    FloorPlan::new("rect", vec![r], 2.6, 1.6).unwrap()
}

fn layout_params() -> EncoderParams<f64> {
    EncoderParams::random(Branch::Layout, 11)
}

fn embed_at(plan: &FloorPlan<f64>, params: &EncoderParams<f64>, pose: Pose<f64>) -> Embedding<f64> {
    let scene = extrude(plan);
    params
        .encode(&render_layout_depth(&scene, pose, EMBED_WIDTH, EMBED_HEIGHT).unwrap())
        .unwrap()
}

#[test]
fn grid_counts_on_square_room() {
    let plan = rect(4.0, 4.0);
    let fine = grid_poses(&plan, 0.5, 0.3).unwrap();
    assert_eq!(fine.len(), 49);
    // Oracle: interior lattice points at least 0.3 from every side.
    let oracle = (0..=8)
        .flat_map(|i| (0..=8).map(move |j| (i as f64 * 0.5, j as f64 * 0.5)))
        .filter(|&(x, y)| x.min(y).min(4.0 - x).min(4.0 - y) >= 0.3)
        .count();
    assert_eq!(fine.len(), oracle);
    let coarse = grid_poses(&plan, 1.0, 0.3).unwrap();
    assert!(coarse.len() < fine.len());
    assert!(matches!(grid_poses(&plan, 5.0, 0.3), Err(Error::Empty(_))));
    assert!(grid_poses(&plan, 0.0, 0.3).is_err());
    for w in fine.windows(2) {
        let (dx, dy) = ((w[1].x - w[0].x).abs(), (w[1].y - w[0].y).abs());
        assert!((dx - 0.5).abs() < 1e-12 || (dy - 0.5).abs() < 1e-12);
    }
}

#[test]
fn database_embeddings_are_unit_norm_and_deterministic() {
    let plan = generate_floorplan(3, &GenerationParams::default()).unwrap();
    let params = layout_params();
    let db = build_database(&plan, 0.5, 0.3, &params, false).unwrap();
    assert!(!db.is_empty());
    for e in &db.entries {
        assert!(plan.in_free_space(e.pose));
        assert!((crate::embed::l2_norm(&e.embedding.values) - 1.0).abs() < 1e-9);
        assert!(e.depth.is_none());
    }
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let again = single.install(|| build_database(&plan, 0.5, 0.3, &params, false).unwrap());
    assert_eq!(db, again);
    let cached = build_database(&plan, 0.5, 0.3, &params, true).unwrap();
    assert!(cached.entries.iter().all(|e| e.depth.is_some()));
}

#[test]
fn retrieval_matches_brute_force() {
    let plan = generate_floorplan(4, &GenerationParams::default()).unwrap();
    let params = layout_params();
    let db = build_database(&plan, 0.5, 0.3, &params, false).unwrap();
    for (k, &q) in sample_query_poses(&plan, 10, 9, 0.3).unwrap().iter().enumerate() {
        let query = embed_at(&plan, &params, q);
        let ranked = retrieve_nn(&query, &db);
        let mut brute: Vec<(usize, f64)> = Vec::new();
        for (i, e) in db.entries.iter().enumerate() {
            let d = crate::embed::euclidean(&e.embedding.values, &query.values);
            let pos = brute.iter().position(|&(_, b)| b > d).unwrap_or(brute.len());
            brute.insert(pos, (i, d));
        }
        assert_eq!(ranked.len(), brute.len());
        for (a, b) in ranked.iter().zip(&brute) {
            assert_eq!(a.0, b.0, "query {k}");
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }
    let exact = db.entries[7].embedding.clone();
    let top = retrieve_nn(&exact, &db)[0];
    assert_eq!(top, (7, 0.0));
}

#[test]
fn rank_breaks_ties_by_index() {
    assert_eq!(rank(&[0.5, 0.1, 0.5, 0.1]), vec![(1, 0.1), (3, 0.1), (0, 0.5), (2, 0.5)]);
}

#[test]
fn vogel_disc_geometry() {
    let plan = rect(10.0, 10.0);
    let c = Pose::new(5.0, 5.0);
    let (radius, n) = (1.0, 200);
    let pts = vogel_points(&plan, c, radius, n);
    assert_eq!(pts.len(), n + 1);
    assert_eq!(pts[0], c);
    for p in &pts {
        assert!(p.distance(c) <= radius + 1e-12);
    }
    assert!((pts[n].distance(c) - radius).abs() < 1e-12);
    let min_gap = 0.25 * radius / (n as f64).sqrt();
    for i in 1..pts.len() {
        for j in i + 1..pts.len() {
            assert!(pts[i].distance(pts[j]) >= min_gap, "{i} {j}");
        }
    }
    let near_wall = vogel_points(&plan, Pose::new(0.5, 5.0), radius, n);
    assert!(near_wall.len() < n + 1);
    assert!(near_wall.iter().all(|&p| plan.in_free_space(p)));
}

#[test]
fn vdr_never_increases_latent_cost() {
    let plan = generate_floorplan(6, &GenerationParams::default()).unwrap();
    let scene = extrude(&plan);
    let params = layout_params();
    let poses = sample_query_poses(&plan, 6, 2, 0.3).unwrap();
    for w in poses.windows(2) {
        let query = embed_at(&plan, &params, w[0]);
        let cost = LatentCost {
            scene: &scene,
            params: &params,
            query: &query,
        };
        let before = cost.cost(w[1]).unwrap();
        let (p, after) = vdr_refine(&plan, w[1], &cost, 1.0, 50).unwrap();
        assert!(after <= before);
        assert_eq!(after, cost.cost(p).unwrap());
    }
    let query = embed_at(&plan, &params, poses[0]);
    let cost = LatentCost {
        scene: &scene,
        params: &params,
        query: &query,
    };
    assert_eq!(vdr_refine(&plan, poses[0], &cost, 1.0, 50).unwrap(), (poses[0], 0.0));
}

#[test]
fn vdr_with_oracle_cost_lands_near_truth() {
    // Cost is the distance to the true pose: a stand-in for a perfect
    // embedding on a convex room.
    struct Oracle(Pose<f64>);
    impl PoseCost<f64> for Oracle {
        fn cost(&self, pose: Pose<f64>) -> Result<f64> {
            Ok(pose.distance(self.0))
        }
    }
    let plan = rect(6.0, 6.0);
    let mut rng = seed::rng(5);
    let (radius, n) = (1.0, 200);
    let bound = radius * (1.0 / n as f64).sqrt() * 2.0;
    for _ in 0..20 {
        let c = Pose::new(rng.random_range(2.0..4.0), rng.random_range(2.0..4.0));
        let r = 0.9 * rng.random::<f64>().sqrt();
        let a = std::f64::consts::TAU * rng.random::<f64>();
        let gt = c.offset(r * a.cos(), r * a.sin());
        let (p, _) = vdr_refine(&plan, c, &Oracle(gt), radius, n).unwrap();
        assert!(p.distance(gt) <= bound, "{}", p.distance(gt));
    }
}

#[test]
fn analytic_latent_gradient_matches_central_differences() {
    let plan = generate_floorplan(8, &GenerationParams::default()).unwrap();
    let scene = extrude(&plan);
    let params = layout_params();
    let poses = sample_query_poses(&plan, 12, 4, 0.4).unwrap();
    let query = embed_at(&plan, &params, poses[0]);
    let cost = LatentCost {
        scene: &scene,
        params: &params,
        query: &query,
    };
    let h = 1e-6;
    let mut checked = 0;
    for &p in &poses[1..] {
        let (c, g) = cost.cost_and_gradient(p).unwrap().unwrap();
        assert!((c - cost.cost(p).unwrap()).abs() < 1e-12);
        let gx = (cost.cost(p.offset(h, 0.0)).unwrap() - cost.cost(p.offset(-h, 0.0)).unwrap()) / (2.0 * h);
        let gy = (cost.cost(p.offset(0.0, h)).unwrap() - cost.cost(p.offset(0.0, -h)).unwrap()) / (2.0 * h);
        let diff = ((g[0] - gx).powi(2) + (g[1] - gy).powi(2)).sqrt();
        let scale = (gx * gx + gy * gy).sqrt().max(1e-3);
        assert!(diff / scale < 1e-3, "{p:?}: analytic {g:?} fd ({gx}, {gy})");
        checked += 1;
    }
    assert_eq!(checked, 11);
}

#[test]
fn lpo_at_truth_stops_with_zero_cost() {
    let plan = rect(4.0, 4.0);
    let scene = extrude(&plan);
    let params = layout_params();
    let gt = Pose::new(1.3, 2.2);
    let query = embed_at(&plan, &params, gt);
    let out = latent_pose_optimize(&plan, &scene, gt, &query, &params, &LpoConfig::default()).unwrap();
    assert_eq!(out.pose, gt);
    assert_eq!(out.cost, 0.0);
    assert_eq!(out.trace.len(), 1);
    let outside = latent_pose_optimize(&plan, &scene, Pose::new(5.0, 1.0), &query, &params, &LpoConfig::default());
    assert!(matches!(outside, Err(Error::OutsideFreeSpace { .. })));
}

#[test]
fn lpo_returns_best_seen_and_stays_in_free_space() {
    let plan = generate_floorplan(12, &GenerationParams::default()).unwrap();
    let scene = extrude(&plan);
    let params = layout_params();
    let poses = sample_query_poses(&plan, 8, 1, 0.3).unwrap();
    for mode in [GradientMode::FiniteDifference, GradientMode::Analytic] {
        let config = LpoConfig {
            gradient_mode: mode,
            ..LpoConfig::default()
        };
        for w in poses.windows(2).step_by(2) {
            let query = embed_at(&plan, &params, w[0]);
            let out = latent_pose_optimize(&plan, &scene, w[1], &query, &params, &config).unwrap();
            let best = out.trace.iter().map(|t| t.cost).fold(f64::INFINITY, f64::min);
            assert_eq!(out.cost, best);
            assert!(out.trace.iter().any(|t| t.pose == out.pose && t.cost == out.cost));
            assert!(out.cost <= out.trace[0].cost);
            assert!(out.trace.len() <= config.max_iterations);
            assert!(out.trace.iter().all(|t| plan.in_free_space(t.pose)));
        }
    }
}

#[test]
fn lpo_converges_from_a_quarter_meter() {
    let plan = rect(4.0, 4.0);
    let scene = extrude(&plan);
    let params = layout_params();
    let config = LpoConfig::default();
    let mut rng = seed::rng(21);
    let trials = 100;
    let mut hits = 0;
    for _ in 0..trials {
        let gt = Pose::new(rng.random_range(0.8..3.2), rng.random_range(0.8..3.2));
        let a = std::f64::consts::TAU * rng.random::<f64>();
        let init = gt.offset(0.25 * a.cos(), 0.25 * a.sin());
        let query = embed_at(&plan, &params, gt);
        let out = latent_pose_optimize(&plan, &scene, init, &query, &params, &config).unwrap();
        if out.pose.distance(gt) < 0.05 {
            hits += 1;
        }
    }
    assert!(hits * 10 >= trials * 9, "{hits}/{trials}");
}

#[test]
fn decode_refine_keeps_a_matching_init() {
    let plan = rect(4.0, 4.0);
    let scene = extrude(&plan);
    let init = Pose::new(1.5, 2.5);
    let depth = render_layout_depth(&scene, init, EMBED_WIDTH, EMBED_HEIGHT).unwrap();
    let target = DecodedDepth {
        width: EMBED_WIDTH,
        height: EMBED_HEIGHT,
        values: clipped_depth(&depth).unwrap(),
    };
    let out = decode_refine(&plan, &scene, init, &target, &LpoConfig::default()).unwrap();
    assert_eq!(out.pose, init);
    assert_eq!(out.cost, 0.0);

    let shifted = decode_refine(&plan, &scene, init.offset(0.2, -0.1), &target, &LpoConfig::default()).unwrap();
    let best = shifted.trace.iter().map(|t| t.cost).fold(f64::INFINITY, f64::min);
    assert_eq!(shifted.cost, best);
    assert!(shifted.pose.distance(init) < init.offset(0.2, -0.1).distance(init));
}

#[test]
fn downsample_merges_cells() {
    let pts = vec![
        Vec2::new(0.01f64, 0.01),
        Vec2::new(0.03, 0.03),
        Vec2::new(0.2, 0.0),
        Vec2::new(-0.01, 0.0),
    ];
    let out = downsample(&pts, 0.05);
    assert_eq!(out.len(), 3);
    assert!(out.iter().any(|p| (p.x - 0.02).abs() < 1e-12 && (p.y - 0.02).abs() < 1e-12));
    let walls = plan_cloud(&rect(4.0, 4.0), 0.025);
    assert_eq!(walls.len(), 4 * 160);
    assert!(downsample(&walls, 0.05).len() <= walls.len());
}

#[test]
fn icp_recovers_a_rigid_offset() {
    let plan = rect(4.0, 4.0);
    let walls = plan_cloud(&plan, 0.025);
    let gt = Pose::new(2.0, 2.0);
    let scan: Vec<Vec2<f64>> = walls.iter().map(|&p| p - gt.point()).collect();
    let config = IcpConfig::default();
    let same = icp_align(&scan, &walls, gt, &config).unwrap();
    assert!(same.pose.distance(gt) < 1e-3, "{:?}", same);
    assert!(same.rmse < 0.02);
    for (dx, dy) in [(0.3, -0.2), (-0.5, 0.4), (0.8, 0.0)] {
        let r = icp_align(&scan, &walls, gt.offset(dx, dy), &config).unwrap();
        assert!(r.pose.distance(gt) < 1e-3, "({dx}, {dy}): {:?}", r.pose);
        assert_eq!(r.yaw, 0.0);
    }
    let with_rotation = IcpConfig {
        estimate_rotation: true,
        ..IcpConfig::default()
    };
    let r = icp_align(&scan, &walls, gt.offset(0.3, -0.2), &with_rotation).unwrap();
    assert!(r.pose.distance(gt) < 1e-3);
    assert!(r.yaw.abs() < 1e-3);
    assert!(matches!(icp_align(&[], &walls, gt, &config), Err(Error::Empty(_))));
}

#[test]
fn icp_localize_finds_a_clean_query() {
    let plan = generate_floorplan(2, &GenerationParams::default()).unwrap();
    let scene = extrude(&plan);
    let starts = grid_poses(&plan, 0.5, 0.3).unwrap();
    let config = IcpConfig::default();
    let mut errors = Vec::new();
    let mut queries = sample_query_poses(&plan, 8, 3, 0.3).unwrap();
    queries.push(starts[starts.len() / 2]);
    for &q in &queries {
        let depth = render_layout_depth(&scene, q, LOC_WIDTH, LOC_HEIGHT).unwrap();
        let scan = horizontal_scan(&depth);
        let r = icp_localize(&scan, &plan, &starts, &config).unwrap();
        assert_eq!(r, icp_localize(&scan, &plan, &starts, &config).unwrap());
        errors.push(r.pose.distance(q));
    }
    assert!(errors[errors.len() - 1] < 0.01, "{errors:?}");
    errors.sort_by(f64::total_cmp);
    assert!(errors[errors.len() / 2] <= 0.01, "{errors:?}");
}

#[test]
fn pipeline_stages_are_consistent_and_deterministic() {
    let plan = generate_floorplan(9, &GenerationParams::default()).unwrap();
    let scene = extrude(&plan);
    let params = layout_params();
    let db = build_database(&plan, 0.5, 0.3, &params, false).unwrap();
    let gt = sample_query_poses(&plan, 1, 13, 0.3).unwrap()[0];
    let query = embed_at(&plan, &params, gt);
    let top = retrieve_nn(&query, &db)[0].0;
    for stages in Stages::ALL {
        assert_eq!(stages.name().parse::<Stages>().unwrap(), stages);
        let config = PipelineConfig {
            stages,
            vdr_samples: 50,
            ..PipelineConfig::default()
        };
        let r = localize_full(&query, &plan, &scene, &params, &db, &config, Some(gt)).unwrap();
        assert_eq!(r, localize_full(&query, &plan, &scene, &params, &db, &config, Some(gt)).unwrap());
        assert_eq!(r.retrieved_pose, db.entries[top].pose);
        assert!(r.stage_costs.retrieval >= 0.0);
        match stages {
            Stages::Retrieval => {
                assert_eq!(r.refined_pose, r.retrieved_pose);
                assert!(r.lpo_trace.is_empty());
            }
            Stages::Vdr => {
                assert!(r.stage_costs.vdr.unwrap() <= r.stage_costs.retrieval);
                assert_eq!(r.refined_pose, r.vdr_pose);
            }
            Stages::Lpo | Stages::VdrLpo | Stages::VdrDecode => {
                assert!(!r.lpo_trace.is_empty());
                assert!(r.stage_costs.refined.unwrap() >= 0.0);
            }
        }
        assert!(r.error().unwrap() >= 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("refined_pose"));
    }
    assert!("vdr+icp".parse::<Stages>().is_err());
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

    #[test]
    fn icp_recovers_offsets_within_the_inradius(r in 0.0f64..0.8, a in 0.0f64..std::f64::consts::TAU) {
        let plan = rect(4.0, 4.0);
        let walls = plan_cloud(&plan, 0.025);
        let gt = Pose::new(2.0, 2.0);
        let scan: Vec<Vec2<f64>> = walls.iter().map(|&p| p - gt.point()).collect();
        let out = icp_align(&scan, &walls, gt.offset(r * a.cos(), r * a.sin()), &IcpConfig::default()).unwrap();
        proptest::prop_assert!(out.pose.distance(gt) < 1e-3, "{:?}", out);
    }
}
