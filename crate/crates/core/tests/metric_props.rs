use floorloc::metrics::{chamfer_3d, l1_relative_depth, rmse_points, SimilarityMetric};
use floorloc::render::{render_layout_depth, PanoDepth, PointCloud};
use floorloc::scene::{extrude, generate_floorplan, sample_query_poses, FloorPlan, GenerationParams};
use floorloc::geometry::Vec2;
use proptest::prelude::*;

fn renders(seed: u64) -> (PanoDepth, PanoDepth) {
    let plan: FloorPlan = generate_floorplan(seed, &GenerationParams::default()).unwrap();
    let scene = extrude(&plan);
    let p = sample_query_poses(&plan, 2, seed, 0.3).unwrap();
    (
        render_layout_depth(&scene, p[0], 64, 32).unwrap(),
        render_layout_depth(&scene, p[1], 64, 32).unwrap(),
    )
}

fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let d = |p: &[f64; 3], q: &[f64; 3]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    let side = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter().map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
    };
    side(a, b) + side(b, a)
}

fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), 1..500)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_metric_is_zero_on_identical_renders_and_symmetric(seed in any::<u64>()) {
        let (a, b) = renders(seed);
        for m in SimilarityMetric::ALL {
            prop_assert_eq!(m.between(&a, &a).unwrap(), 0.0);
            let (ab, ba) = (m.between(&a, &b).unwrap(), m.between(&b, &a).unwrap());
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0), "{m}: {ab} vs {ba}");
        }
    }

    #[test]
    fn relative_depth_ignores_scale(seed in any::<u64>(), s in 0.01..100.0f64) {
        let (a, _) = renders(seed);
        let scaled = PanoDepth { depth: a.depth.iter().map(|d| d * s).collect(), ..a.clone() };
        prop_assert!(l1_relative_depth(&a, &scaled).unwrap() < 1e-12);
    }

    #[test]
    fn chamfer_matches_brute_force(a in cloud(), b in cloud()) {
        let fast = chamfer_3d(&PointCloud { points: a.clone() }, &PointCloud { points: b.clone() }).unwrap();
        let slow = brute_chamfer(&a, &b);
        prop_assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn rmse_matches_direct_sum(pairs in prop::collection::vec(prop::array::uniform4(-10.0..10.0f64), 1..200)) {
        let a: Vec<Vec2<f64>> = pairs.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        let b: Vec<Vec2<f64>> = pairs.iter().map(|p| Vec2::new(p[2], p[3])).collect();
        let direct = (pairs.iter().map(|p| (p[0] - p[2]).powi(2) + (p[1] - p[3]).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt();
        prop_assert!((rmse_points(&a, &b).unwrap() - direct).abs() < 1e-12);
    }
}
