use moving_frame::coeffs::{build_model, transform_to_frame, ModelSelection};
use moving_frame::experiment::config_hash;
use moving_frame::frame::{ContractionSemigroup, DilationFrame, DEFAULT_EPS_FRAME};
use moving_frame::hilbert::HVec;
use moving_frame::simulate::{stream_id, sup_distance, DirectScheme, FrameScheme, MildScheme, NoisePlan};
use proptest::prelude::*;
use serde_json::{json, Map, Value};

const DX: f64 = 0.125;

fn shift() -> (ContractionSemigroup<f64>, DilationFrame<f64>) {
    let sg = ContractionSemigroup::shift(DX, 6).unwrap();
    let frame = DilationFrame::with_minimal_window(&sg, DX, 1.0, DEFAULT_EPS_FRAME).unwrap();
    (sg, frame)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_frame_laws_are_exact(x in prop::collection::vec(-10.0f64..10.0, 6), k in 0usize..=8, j in 0usize..=8) {
        let (sg, frame) = shift();
        let x = HVec::from_vec(sg.space(), x).unwrap();
        let (t, s) = (k as f64 * DX, j as f64 * DX);
        prop_assert_eq!(frame.diagram(t, &x).unwrap(), sg.apply(t, &x).unwrap());
        let h = frame.embed(&x).unwrap();
        let moved = frame.translate(t, &h).unwrap();
        prop_assert_eq!(moved.norm(), h.norm());
        prop_assert_eq!(frame.translate_adjoint(t, &moved).unwrap(), h.clone());
        if k + j <= 8 {
            let two = frame.translate(s, &moved).unwrap();
            prop_assert_eq!(two, frame.translate(t + s, &h).unwrap());
        }
    }

    #[test]
    fn schemes_agree_for_any_seed(seed in any::<u64>(), x in prop::collection::vec(-1.0f64..1.0, 6)) {
        let (sg, frame) = shift();
        let sel = ModelSelection {
            id: "allen-cahn".into(),
            params: json!({"sigma0": {"kind": "cosine", "amplitudes": [0.5, 0.2]}}),
            constants: None,
        };
        let m = build_model::<f64>(&sel, sg.space(), 1.0).unwrap();
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: DX, steps: 8, seed };
        let inc = plan.increments(stream_id(0, 0));
        let xi = HVec::from_vec(sg.space(), x).unwrap();
        let a = DirectScheme::new(&m, &sg).unwrap().states(&xi, &inc, 0, 8).unwrap();
        let b = FrameScheme::new(dc).states(&xi, &inc, 0, 8).unwrap();
        prop_assert!(sup_distance(&a, &b).unwrap() <= 1e-8);
    }

    #[test]
    fn config_hash_is_key_order_invariant(entries in prop::collection::btree_map("[a-z]{1,6}", -1000i64..1000, 1..8)) {
        let forward: Map<String, Value> = entries.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        let text: Vec<String> = entries.iter().rev().map(|(k, v)| format!("{k:?}: {v}")).collect();
        let reversed: Value = serde_json::from_str(&format!("{{{}}}", text.join(", "))).unwrap();
        prop_assert_eq!(config_hash(&Value::Object(forward)), config_hash(&reversed));
    }
}
