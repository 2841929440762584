//! Statistical and exactness properties of the partition regimes, and IDX
//! round trips.

mod common;

use common::ks_statistic;
use ldia_core::datasets::{
    gen_synthetic, load_idx, partition_with_regime, sample_dirichlet, write_idx, ClientSample,
};
use ldia_core::{Dataset, Error, Regime, RngStream};
use proptest::prelude::*;

#[test]
fn dirichlet_mean_is_uniform() {
    let draws = 10_000;
    let mut mean = [0.0; 10];
    for i in 0..draws {
        let p = sample_dirichlet(1.0, 10, RngStream::new(21, i)).unwrap();
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / draws as f64;
        }
    }
    for m in mean {
        assert!((m - 0.1).abs() < 0.01, "{mean:?}");
    }
}

#[test]
fn large_alpha_concentrates_at_uniform() {
    for i in 0..100 {
        let p = sample_dirichlet(1000.0, 10, RngStream::new(22, i)).unwrap();
        assert!(p.iter().all(|v| (v - 0.1).abs() < 0.05), "{p:?}");
    }
}

#[test]
fn dirichlet_coordinates_are_exchangeable() {
    let draws: Vec<Vec<f64>> = (0..5000).map(|i| sample_dirichlet(1.0, 3, RngStream::new(23, i)).unwrap()).collect();
    let col = |k: usize| draws.iter().map(|d| d[k]).collect::<Vec<_>>();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let d = ks_statistic(&col(a), &col(b));
        assert!(d < 0.05, "KS({a},{b}) = {d}");
    }
}

#[test]
fn image_alphas_are_accepted() {
    let pool = gen_synthetic(10, 4, 400, 3.0, RngStream::root(1)).unwrap();
    for alpha in [0.5, 1.0, 2.0] {
        let s = partition_with_regime(&pool, 300, Regime::Dirichlet { alpha }, RngStream::root(2));
        assert!(s.is_ok(), "alpha {alpha}");
    }
}

fn check_exact(pool: &Dataset, s: &ClientSample, size: usize) {
    assert_eq!(s.dataset.len(), size);
    assert_eq!(s.counts.iter().sum::<usize>(), size);
    assert_eq!(s.dataset.class_counts(), s.counts);
    for (p, &n) in s.distribution.as_slice().iter().zip(&s.counts) {
        assert_eq!(*p, n as f64 / size as f64);
    }
    let mut idx = s.indices.clone();
    idx.sort_unstable();
    idx.dedup();
    assert_eq!(idx.len(), s.indices.len(), "duplicate pool rows");
    for (row, &i) in s.indices.iter().enumerate() {
        assert_eq!(s.dataset.labels()[row], pool.labels()[i]);
    }
}

fn regime() -> impl Strategy<Value = Regime> {
    prop_oneof![
        (0.0f64..0.5).prop_map(|delta| Regime::Iid { delta }),
        (1usize..=5).prop_map(|c_f| Regime::Quantity { c_f }),
        (0.2f64..5.0).prop_map(|alpha| Regime::Dirichlet { alpha }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_are_exact_and_duplicate_free(r in regime(), size in 5usize..200, seed in any::<u64>()) {
        let pool = gen_synthetic(5, 3, 200, 3.0, RngStream::root(3)).unwrap();
        match partition_with_regime(&pool, size, r, RngStream::root(seed)) {
            Ok(s) => {
                check_exact(&pool, &s, size);
                if let Regime::Quantity { c_f } = r {
                    prop_assert_eq!(s.counts.iter().filter(|&&n| n > 0).count(), c_f.min(size));
                }
            }
            Err(Error::Capacity(_)) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    for d in dims {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend_from_slice(payload);
    b
}

#[test]
fn idx_round_trip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    let pixels: Vec<u8> = (0..2 * 2 * 3).map(|v| (v * 37 % 256) as u8).collect();
    let images = idx_bytes(0x0000_0803, &[2, 2, 3], &pixels);
    let labels = idx_bytes(0x0000_0801, &[2], &[1, 0]);
    std::fs::write(&img, &images).unwrap();
    std::fs::write(&lab, &labels).unwrap();
    let d = load_idx(&img, &lab).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.dim(), 6);
    let (img2, lab2) = (dir.path().join("i2.idx"), dir.path().join("l2.idx"));
    write_idx(&d, &img2, &lab2).unwrap();
    assert_eq!(std::fs::read(img2).unwrap(), images);
    assert_eq!(std::fs::read(lab2).unwrap(), labels);
}

#[test]
fn idx_count_mismatch_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    std::fs::write(&img, idx_bytes(0x0000_0803, &[2, 1, 1], &[0, 255])).unwrap();
    std::fs::write(&lab, idx_bytes(0x0000_0801, &[3], &[0, 1, 0])).unwrap();
    assert!(matches!(load_idx(&img, &lab), Err(Error::Format(_))));
}
