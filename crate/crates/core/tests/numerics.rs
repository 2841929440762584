//! Algebraic properties of the parameter container, the SGD step and the
//! deterministic random streams.

use ldia_core::flsim::{local_train, ClientState, LocalTrainConfig};
use ldia_core::numerics::{sgd_step, Activation, Segment};
use ldia_core::{MlpModel, ParameterVector, RngStream};
use proptest::prelude::*;
use rand::Rng;

fn vector(values: Vec<f64>) -> ParameterVector {
    let n = values.len();
    ParameterVector::from_values(vec![Segment::new("a", &[1]), Segment::new("b", &[n - 1])], values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sgd_is_linear_in_the_gradient(
        (p, g, h) in (2usize..20).prop_flat_map(|n| (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )),
        lr in 0.0f64..2.0,
    ) {
        let (p, g, h) = (vector(p), vector(g), vector(h));
        let sum = g.with_values(g.values().iter().zip(h.values()).map(|(a, b)| a + b).collect()).unwrap();
        let once = sgd_step(&p, &sum, lr).unwrap();
        let twice = sgd_step(&sgd_step(&p, &g, lr).unwrap(), &h, lr).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
        prop_assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p.clone());
        prop_assert_eq!(once.layout(), p.layout());
    }

    #[test]
    fn streams_are_pure_functions_of_their_keys(seed in any::<u64>(), id in any::<u64>(), round in 0u64..1000) {
        let draw = |s: RngStream| -> Vec<u64> { let mut r = s.rng(); (0..4).map(|_| r.random()).collect() };
        let a = RngStream::new(seed, id).child("round", round);
        prop_assert_eq!(draw(a), draw(RngStream::new(seed, id).child("round", round)));
        prop_assert_ne!(draw(a), draw(RngStream::new(seed, id).child("round", round + 1)));
    }
}

#[test]
fn local_training_is_pure() {
    let data = ldia_core::datasets::gen_synthetic(3, 4, 40, 3.0, RngStream::root(5)).unwrap();
    let global = MlpModel::init(&[4, 6, 3], &[Activation::Relu, Activation::Identity], RngStream::root(6)).unwrap();
    let cfg = LocalTrainConfig { local_epochs: 2, batch_size: 8, lr: 0.1 };
    let client = ClientState::new(0, data, &cfg, 9).unwrap();
    let before = global.clone();
    let a = local_train(&global, &client, 3).unwrap();
    let b = local_train(&global, &client, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(global, before);
    let c = local_train(&global, &client, 4).unwrap();
    assert_ne!(a.params, c.params);
    assert_ne!(a.params, *global.params());
}
