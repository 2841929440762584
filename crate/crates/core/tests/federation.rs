//! Aggregation, privatisation and federation-level invariants.

use ldia_core::datasets::gen_synthetic;
use ldia_core::flsim::{
    apply_ldp, local_train, run_federation, weighted_mean, ClientState, Federation, LdpConfig, LocalTrainConfig,
};
use ldia_core::numerics::{grad_l2_norm, Activation, ParameterVector, Segment};
use ldia_core::{MlpModel, RngStream};
use proptest::prelude::*;

fn pv(v: Vec<f64>) -> ParameterVector {
    ParameterVector::from_values(vec![Segment::new("w", &[v.len()])], v).unwrap()
}

proptest! {
    #[test]
    fn aggregate_stays_within_client_range(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..6),
        sizes in prop::collection::vec(1usize..100, 6),
    ) {
        let params: Vec<ParameterVector> = rows.iter().cloned().map(pv).collect();
        let refs: Vec<&ParameterVector> = params.iter().collect();
        let out = weighted_mean(&refs, &sizes[..refs.len()]).unwrap();
        for j in 0..4 {
            let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.values()[j] >= lo && out.values()[j] <= hi);
        }
    }

    #[test]
    fn identical_inputs_aggregate_to_themselves(v in prop::collection::vec(-1e3f64..1e3, 5), k in 1usize..8) {
        let p = pv(v);
        let refs = vec![&p; k];
        let sizes: Vec<usize> = (1..=k).collect();
        prop_assert_eq!(weighted_mean(&refs, &sizes).unwrap(), p);
    }

    #[test]
    fn clipping_bounds_the_noise_free_norm(v in prop::collection::vec(-5.0f64..5.0, 6)) {
        let cfg = LdpConfig { epsilon: 1e15, delta: 1e-5, clip_norm: 1.0 };
        let out = apply_ldp(&pv(v.clone()), &cfg, RngStream::root(0)).unwrap();
        let n = grad_l2_norm(&pv(v.clone()));
        let expect: Vec<f64> = v.iter().map(|x| if n > 1.0 { x / n } else { *x }).collect();
        for (o, e) in out.values().iter().zip(&expect) {
            prop_assert!((o - e).abs() < 1e-9);
        }
    }
}

#[test]
fn weighted_mean_examples() {
    let out = weighted_mean(&[&pv(vec![0.0]), &pv(vec![4.0])], &[1, 3]).unwrap();
    assert_eq!(out.values(), &[3.0]);
    let out = weighted_mean(&[&pv(vec![1.0, 3.0]), &pv(vec![3.0, 5.0])], &[7, 7]).unwrap();
    assert_eq!(out.values(), &[2.0, 4.0]);
}

fn small_federation(ldp: Option<LdpConfig>) -> Federation {
    let data = gen_synthetic(3, 5, 60, 3.0, RngStream::root(4)).unwrap();
    let initial = MlpModel::init(&[5, 6, 3], &[Activation::Relu, Activation::Identity], RngStream::root(5)).unwrap();
    let local = LocalTrainConfig::default();
    let clients = (0..3)
        .map(|k| {
            let rows: Vec<usize> = (k * 50..k * 50 + 50).collect();
            ClientState::new(k, data.subset(&rows), &local, 100 + k as u64).unwrap()
        })
        .collect();
    Federation {
        initial,
        clients,
        rounds: 4,
        ldp,
        eval_set: Some(data),
    }
}

#[test]
fn federation_replays_bit_identically() {
    for ldp in [None, Some(LdpConfig::new(10.0))] {
        let fed = small_federation(ldp);
        assert_eq!(run_federation(&fed, &mut []).unwrap(), run_federation(&fed, &mut []).unwrap());
    }
}

#[test]
fn upload_norm_is_norm_of_update() {
    let fed = small_federation(None);
    let h = run_federation(&fed, &mut []).unwrap();
    for round in &h.uploads {
        for u in round {
            assert_eq!(u.grad_norm, grad_l2_norm(&u.grad_update));
        }
    }
    let up = local_train(&fed.initial, &fed.clients[0], 1).unwrap();
    assert_eq!(up, h.uploads[0][0]);
}
