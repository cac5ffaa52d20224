use floorloc::embed::{Branch, EncoderParams};
use floorloc::localize::{
    build_database, latent_pose_optimize, localize_full, retrieve_nn, vdr_refine, vogel_points, LatentCost,
    LpoConfig, PipelineConfig, PoseCost, Stages,
};
use floorloc::render::render_layout_depth;
use floorloc::scene::{extrude, generate_floorplan, sample_query_poses, FloorPlan, GenerationParams};
use proptest::prelude::*;

fn small_plan(seed: u64) -> FloorPlan {
    let params = GenerationParams::default().with_size(6.0, 5.0).with_rooms(2, 3);
    generate_floorplan(seed, &params).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn retrieval_equals_a_linear_scan(seed in any::<u64>()) {
        let plan = small_plan(seed);
        let scene = extrude(&plan);
        let params = EncoderParams::<f64>::random(Branch::Layout, seed);
        let db = build_database(&plan, 0.5, 0.3, &params, false).unwrap();
        for pose in sample_query_poses(&plan, 4, seed, 0.3).unwrap() {
            let q = params.encode(&render_layout_depth(&scene, pose, 64, 32).unwrap()).unwrap();
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, e) in db.entries.iter().enumerate() {
                let d: f64 = e.embedding.values.iter().zip(&q.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if d < best.1 {
                    best = (i, d);
                }
            }
            let ranked = retrieve_nn(&q, &db);
            prop_assert_eq!(ranked[0].0, best.0);
            prop_assert!((ranked[0].1 - best.1).abs() < 1e-12);
            prop_assert!(ranked.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn refinement_never_raises_the_latent_cost(seed in any::<u64>(), n in 1usize..60) {
        let plan = small_plan(seed);
        let scene = extrude(&plan);
        let params = EncoderParams::<f64>::random(Branch::Layout, seed);
        let poses = sample_query_poses(&plan, 2, seed, 0.3).unwrap();
        let q = params.encode(&render_layout_depth(&scene, poses[0], 64, 32).unwrap()).unwrap();
        let cost = LatentCost { scene: &scene, params: &params, query: &q };
        let start = cost.cost(poses[1]).unwrap();
        let (p, c) = vdr_refine(&plan, poses[1], &cost, 1.0, n).unwrap();
        prop_assert!(c <= start);
        prop_assert!(vogel_points(&plan, poses[1], 1.0, n).contains(&p));
        let config = LpoConfig { max_iterations: 30, convergence_window: 10, ..LpoConfig::default() };
        let out = latent_pose_optimize(&plan, &scene, p, &q, &params, &config).unwrap();
        let best = out.trace.iter().map(|t| t.cost).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(out.cost, best);
        prop_assert!(out.cost <= c);
    }
}

#[test]
fn pipeline_runs_are_repeatable() {
    let plan = small_plan(3);
    let scene = extrude(&plan);
    let params = EncoderParams::<f64>::random(Branch::Layout, 3);
    let db = build_database(&plan, 0.5, 0.3, &params, false).unwrap();
    let gt = sample_query_poses(&plan, 1, 3, 0.3).unwrap()[0];
    let q = params.encode(&render_layout_depth(&scene, gt, 64, 32).unwrap()).unwrap();
    for stages in Stages::ALL {
        let config = PipelineConfig { stages, vdr_samples: 20, ..PipelineConfig::default() };
        let a = localize_full(&q, &plan, &scene, &params, &db, &config, Some(gt)).unwrap();
        let b = localize_full(&q, &plan, &scene, &params, &db, &config, Some(gt)).unwrap();
        assert_eq!(a, b, "{stages}");
        if stages == Stages::Retrieval {
            assert_eq!(a.refined_pose, db.entries[retrieve_nn(&q, &db)[0].0].pose);
        }
    }
}
