use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor2};

/// Balanced Gaussian-cluster classification data.
///
/// Each class gets a mean with pairwise distance at least `sep` (a scaled
/// simplex when `d >= C`, rejection sampling otherwise) and unit isotropic
/// noise. Features are then mapped per dimension into `[0, 1]` using the
/// range of the means padded by four standard deviations, and clipped.
/// Rows are interleaved by class: row `i` has label `i % C`.
pub fn gen_synthetic(
    classes: usize,
    dim: usize,
    per_class_pool: usize,
    sep: f64,
    stream: RngStream,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Validation("need at least two classes".into()));
    }
    if sep.is_nan() || sep <= 0.0 || dim == 0 {
        return Err(Error::Validation("separation and dimension must be positive".into()));
    }
    let means = class_means(classes, dim, sep, stream.child("means", 0));

    const PAD: f64 = 4.0;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for m in &means {
        for j in 0..dim {
            lo[j] = lo[j].min(m[j] - PAD);
            hi[j] = hi[j].max(m[j] + PAD);
        }
    }

    let mut rng = stream.child("samples", 0).rng();
    let n = classes * per_class_pool;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            let v = (means[c][j] + z - lo[j]) / (hi[j] - lo[j]);
            data.push(v.clamp(0.0, 1.0));
        }
        labels.push(c);
    }
    Dataset::new(Tensor2::new(n, dim, data)?, labels, classes)
}

fn class_means(classes: usize, dim: usize, sep: f64, stream: RngStream) -> Vec<Vec<f64>> {
    if dim >= classes {
        let scale = sep / std::f64::consts::SQRT_2;
        return (0..classes)
            .map(|c| {
                let mut m = vec![0.0; dim];
                m[c] = scale;
                m
            })
            .collect();
    }
    let mut rng = stream.rng();
    let mut side = sep * (classes as f64).powf(1.0 / dim as f64);
    loop {
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let mut attempts = 0;
        while means.len() < classes && attempts < 10_000 {
            attempts += 1;
            let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..side)).collect();
            let far = means.iter().all(|m| {
                m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= sep
            });
            if far {
                means.push(cand);
            }
        }
        if means.len() == classes {
            return means;
        }
        side *= 1.25;
    }
}
