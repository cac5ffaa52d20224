use floorloc::embed::{loss, read_params, write_params, Branch, EncoderParams};
use floorloc::render::render_layout_depth;
use floorloc::scene::{extrude, generate_floorplan, sample_query_poses, FloorPlan, GenerationParams};
use proptest::prelude::*;

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, n)
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

fn close(a: &[f64], b: &[f64]) -> bool {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
    num / den < 1e-5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn loss_gradients_match_finite_differences(
        p in vector(8), i in vector(8), j in vector(8), g in vector(8),
        ch in (0.1..3.0f64, 0.1..3.0f64),
    ) {
        let (ci, cj) = ch;
        if let Ok(r) = loss::log_ratio(&p, &i, &j, ci, cj) {
            prop_assert!(close(&r.anchor, &fd(|x| loss::log_ratio(x, &i, &j, ci, cj).unwrap().value, &p)));
            prop_assert!(close(&r.first, &fd(|x| loss::log_ratio(&p, x, &j, ci, cj).unwrap().value, &i)));
            prop_assert!(close(&r.second, &fd(|x| loss::log_ratio(&p, &i, x, ci, cj).unwrap().value, &j)));
        }
        if let Ok((_, gr)) = loss::kd_lr(&p, &g, &i, &j) {
            prop_assert!(close(&gr, &fd(|x| loss::kd_lr(x, &g, &i, &j).unwrap().0, &p)));
        }
        let (_, gr) = loss::l2(&p, &g);
        prop_assert!(close(&gr, &fd(|x| loss::l2(x, &g).0, &p)));
        // Shift the target off the kinks of |x|.
        let t: Vec<f64> = g.iter().map(|v| v + 0.37).collect();
        if p.iter().zip(&t).all(|(a, b)| (a - b).abs() > 1e-4) {
            let (_, gr) = loss::decode(&p, &t).unwrap();
            prop_assert!(close(&gr, &fd(|x| loss::decode(x, &t).unwrap().0, &p)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn embeddings_are_unit_norm_and_pure(seed in any::<u64>(), branch in prop_oneof![Just(Branch::Layout), Just(Branch::Query)]) {
        let plan: FloorPlan = generate_floorplan(seed, &GenerationParams::default()).unwrap();
        let scene = extrude(&plan);
        let params = EncoderParams::<f64>::random(branch, seed);
        for pose in sample_query_poses(&plan, 3, seed, 0.3).unwrap() {
            let depth = render_layout_depth(&scene, pose, 64, 32).unwrap();
            let e = params.encode(&depth).unwrap();
            let norm: f64 = e.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            prop_assert_eq!(e, params.encode(&depth).unwrap());
        }
    }

    #[test]
    fn params_survive_a_write_read_cycle(seed in any::<u64>()) {
        // The file stores float32, so start from values that are exact in it.
        let params = EncoderParams::<f64>::random(Branch::Layout, seed).cast::<f32>().cast::<f64>();
        let mut buf = Vec::new();
        write_params(&params, &mut buf).unwrap();
        prop_assert_eq!(read_params::<f64, _>(buf.as_slice(), "<memory>").unwrap(), params);
    }

    #[test]
    fn single_precision_encoding_tracks_double(seed in any::<u64>()) {
        let plan: FloorPlan = generate_floorplan(seed, &GenerationParams::default()).unwrap();
        let pose = sample_query_poses(&plan, 1, seed, 0.3).unwrap()[0];
        let params = EncoderParams::<f64>::random(Branch::Layout, seed);
        let e64 = params.encode(&render_layout_depth(&extrude(&plan), pose, 64, 32).unwrap()).unwrap();
        let plan32: floorloc::single::FloorPlan = plan.cast();
        let depth32 = render_layout_depth(&extrude(&plan32), pose.cast(), 64, 32).unwrap();
        let e32 = params.cast::<f32>().encode(&depth32).unwrap();
        for (a, b) in e64.values.iter().zip(&e32.values) {
            prop_assert!((a - *b as f64).abs() < 1e-4);
        }
    }
}
