//! Property tests for the numeric invariants.

use proptest::prelude::*;

use nore_core::metrics::hausdorff;
use nore_core::numerics::tensor::{softmax_vec, Tensor};
use nore_core::numerics::{digamma, entropy_categorical, AdamConfig, GruCell, Mlp, ParamSet};
use nore_core::rng::seeded_rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_is_normalized_and_nonnegative(xs in prop::collection::vec(-30.0f64..30.0, 1..24)) {
        let p = softmax_vec(&xs);
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant(xs in prop::collection::vec(-20.0f64..20.0, 1..16), c in -50.0f64..50.0) {
        let p = softmax_vec(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let q = softmax_vec(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn digamma_recurrence(x in 0.1f64..100.0) {
        let lhs = digamma(x + 1.0).unwrap();
        let rhs = digamma(x).unwrap() + 1.0 / x;
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn entropy_of_normalized_vector_is_bounded(xs in prop::collection::vec(1e-6f64..1.0, 2..32)) {
        let total: f64 = xs.iter().sum();
        let p: Vec<f64> = xs.iter().map(|x| x / total).collect();
        let h = entropy_categorical(&p).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn adam_zero_gradient_is_identity(values in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let mut ps = ParamSet::new();
        let n = values.len();
        let p = ps.register("p", Tensor::param(&[n], values.clone()));
        let zeros = Tensor::constant(&[n], vec![0.0; n]);
        p.mul(&zeros).sum().backward();
        ps.adam_step(&AdamConfig::default()).unwrap();
        prop_assert_eq!(p.values(), values);
    }

    #[test]
    fn gru_output_bounded_given_bounded_hidden(
        seed in 0u64..1000,
        h0 in prop::collection::vec(-0.999f64..0.999, 4),
        x in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let mut rng = seeded_rng(seed);
        let mut ps = ParamSet::new();
        let cell = GruCell::new(&mut ps, "g", 3, 4, &mut rng);
        let h = cell
            .step(&Tensor::constant(&[3], x), &Tensor::constant(&[4], h0))
            .unwrap();
        for v in h.values() {
            prop_assert!(v > -1.0 && v < 1.0);
        }
    }

    #[test]
    fn mlp_zero_weights_return_bias(x in prop::collection::vec(-10.0f64..10.0, 3)) {
        let mut rng = seeded_rng(1);
        let mut ps = ParamSet::new();
        let mlp = Mlp::new(&mut ps, "m", &[3, 2], &mut rng);
        ps.get("m.l0.w").unwrap().set_values(&[0.0; 6]);
        ps.get("m.l0.b").unwrap().set_values(&[1.5, -2.5]);
        let y = mlp.forward(&Tensor::constant(&[3], x)).unwrap();
        prop_assert_eq!(y.values(), vec![1.5, -2.5]);
    }

    #[test]
    fn hausdorff_metric_properties(
        a in prop::collection::vec((0i32..10, 0i32..10), 1..12),
        b in prop::collection::vec((0i32..10, 0i32..10), 1..12),
        c in prop::collection::vec((0i32..10, 0i32..10), 1..12),
    ) {
        let to_f = |v: &Vec<(i32, i32)>| -> Vec<(f64, f64)> {
            v.iter().map(|(x, y)| (*x as f64, *y as f64)).collect()
        };
        let (a, b, c) = (to_f(&a), to_f(&b), to_f(&c));
        let ab = hausdorff(&a, &b).unwrap();
        let ba = hausdorff(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        let bc = hausdorff(&b, &c).unwrap();
        let ac = hausdorff(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }
}
