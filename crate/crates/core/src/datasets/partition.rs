use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabelDistribution, Regime};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamRng};
use crate::vclients::VirtualClientSpec;

/// One client's draw from a pool.
#[derive(Debug, Clone)]
pub struct ClientSample {
    pub dataset: Dataset,
    /// Realised label frequencies of `dataset`.
    pub distribution: LabelDistribution,
    pub counts: Vec<usize>,
    /// Pool rows used, grouped by class.
    pub indices: Vec<usize>,
}

/// Draws `counts[c]` distinct rows of class `c` from the pool.
fn sample_counts(pool: &Dataset, counts: &[usize], rng: &mut StreamRng) -> Result<ClientSample> {
    let groups = pool.indices_by_class();
    let mut indices = Vec::with_capacity(counts.iter().sum());
    for (c, (&k, group)) in counts.iter().zip(&groups).enumerate() {
        if k > group.len() {
            return Err(Error::Capacity(format!(
                "class {c} needs {k} samples but the pool holds {}",
                group.len()
            )));
        }
        let mut g = group.clone();
        let (picked, _) = g.partial_shuffle(rng, k);
        indices.extend_from_slice(picked);
    }
    let dataset = pool.subset(&indices);
    let distribution = LabelDistribution::from_counts(counts)?;
    Ok(ClientSample {
        dataset,
        distribution,
        counts: counts.to_vec(),
        indices,
    })
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 {
        return Err(Error::Validation("client size must be positive".into()));
    }
    Ok(())
}

/// Integer counts summing to `size` from proportions, by largest remainder
/// (ties to the lower class index).
pub(crate) fn largest_remainder(p: &[f64], size: usize) -> Vec<usize> {
    let targets: Vec<f64> = p.iter().map(|v| v * size as f64).collect();
    let mut counts: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(size.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet(alpha: f64, k: usize, rng: &mut StreamRng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 && s.is_finite() {
            return g.into_iter().map(|v| v / s).collect();
        }
    }
}

/// One draw from the symmetric Dirichlet `Dir(alpha * 1_classes)`.
pub fn sample_dirichlet(alpha: f64, classes: usize, stream: RngStream) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) || classes == 0 {
        return Err(Error::Validation(format!(
            "dirichlet needs alpha > 0 and at least one class, got alpha {alpha}, {classes} classes"
        )));
    }
    Ok(dirichlet(alpha, classes, &mut stream.rng()))
}

/// Per-label counts drawn within `size / C * (1 ± delta)` and adjusted to sum
/// to `size`.
pub fn partition_iid(pool: &Dataset, size: usize, delta: f64, stream: RngStream) -> Result<ClientSample> {
    check_size(size)?;
    Regime::Iid { delta }
        .validate(pool.classes())
        .map_err(|(k, m)| Error::Validation(format!("{k} {m}")))?;
    let c = pool.classes();
    let base = size as f64 / c as f64;
    let lo = (base * (1.0 - delta) + 1e-9).floor() as usize;
    let hi = (base * (1.0 + delta) - 1e-9).ceil() as usize;
    let mut rng = stream.rng();
    let mut counts: Vec<usize> = (0..c).map(|_| rng.random_range(lo..=hi)).collect();
    loop {
        let total: usize = counts.iter().sum();
        if total == size {
            break;
        }
        let movable: Vec<usize> = if total < size {
            (0..c).filter(|&i| counts[i] < hi).collect()
        } else {
            (0..c).filter(|&i| counts[i] > lo).collect()
        };
        let i = *movable.choose(&mut rng).expect("band always contains size / C");
        if total < size {
            counts[i] += 1;
        } else {
            counts[i] -= 1;
        }
    }
    sample_counts(pool, &counts, &mut rng)
}

/// Only `c_f` randomly chosen labels are present; their proportions are drawn
/// from a flat Dirichlet and each chosen label keeps at least one sample.
pub fn partition_quantity(pool: &Dataset, size: usize, c_f: usize, stream: RngStream) -> Result<ClientSample> {
    check_size(size)?;
    let c = pool.classes();
    Regime::Quantity { c_f }
        .validate(c)
        .map_err(|(k, m)| Error::Validation(format!("{k} {m}")))?;
    if size < c_f {
        return Err(Error::Validation(format!("size {size} cannot cover {c_f} classes")));
    }
    let mut rng = stream.rng();
    let mut classes: Vec<usize> = (0..c).collect();
    classes.shuffle(&mut rng);
    classes.truncate(c_f);
    classes.sort_unstable();
    let p = dirichlet(1.0, c_f, &mut rng);
    let mut sub = largest_remainder(&p, size);
    while let Some(z) = sub.iter().position(|&k| k == 0) {
        let big = (0..c_f).max_by_key(|&i| (sub[i], std::cmp::Reverse(i))).unwrap();
        sub[big] -= 1;
        sub[z] += 1;
    }
    let mut counts = vec![0; c];
    for (&cls, &k) in classes.iter().zip(&sub) {
        counts[cls] = k;
    }
    sample_counts(pool, &counts, &mut rng)
}

/// Proportions from `Dir(alpha * 1_C)`, rounded by largest remainder.
pub fn partition_dirichlet(pool: &Dataset, size: usize, alpha: f64, stream: RngStream) -> Result<ClientSample> {
    check_size(size)?;
    Regime::Dirichlet { alpha }
        .validate(pool.classes())
        .map_err(|(k, m)| Error::Validation(format!("{k} {m}")))?;
    let mut rng = stream.rng();
    let p = dirichlet(alpha, pool.classes(), &mut rng);
    let counts = largest_remainder(&p, size);
    sample_counts(pool, &counts, &mut rng)
}

pub fn partition_with_regime(pool: &Dataset, size: usize, regime: Regime, stream: RngStream) -> Result<ClientSample> {
    match regime {
        Regime::Iid { delta } => partition_iid(pool, size, delta, stream),
        Regime::Quantity { c_f } => partition_quantity(pool, size, c_f, stream),
        Regime::Dirichlet { alpha } => partition_dirichlet(pool, size, alpha, stream),
    }
}

/// Uniformly random rows without replacement, ignoring labels.
pub fn sample_uniform(pool: &Dataset, size: usize, stream: RngStream) -> Result<ClientSample> {
    check_size(size)?;
    if size > pool.len() {
        return Err(Error::Capacity(format!(
            "{size} samples requested from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = stream.rng();
    let mut rows: Vec<usize> = (0..pool.len()).collect();
    let (picked, _) = rows.partial_shuffle(&mut rng, size);
    let mut indices = picked.to_vec();
    indices.sort_unstable_by_key(|&i| (pool.labels()[i], i));
    let dataset = pool.subset(&indices);
    let counts = dataset.class_counts();
    let distribution = LabelDistribution::from_counts(&counts)?;
    Ok(ClientSample {
        dataset,
        distribution,
        counts,
        indices,
    })
}

/// Materialises a virtual client's dataset from the auxiliary pool.
pub fn sample_auxiliary(pool: &Dataset, spec: &VirtualClientSpec) -> Result<ClientSample> {
    if spec.size < pool.classes() {
        return Err(Error::Validation(format!(
            "virtual client {} has size {}, at least {} required",
            spec.id,
            spec.size,
            pool.classes()
        )));
    }
    partition_with_regime(pool, spec.size, spec.regime, RngStream::root(spec.seed))
}

/// Regime, client count and sizes for a batch of clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub regime: Regime,
    pub client_count: usize,
    pub sizes: Vec<usize>,
}

/// JSON-serialisable record of a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub regime: Regime,
    pub sizes: Vec<usize>,
    pub label_counts: Vec<Vec<usize>>,
}

impl PartitionSpec {
    pub fn apply(&self, pool: &Dataset, stream: RngStream) -> Result<(Vec<ClientSample>, PartitionManifest)> {
        if self.sizes.len() != self.client_count {
            return Err(Error::Validation(format!(
                "{} sizes for {} clients",
                self.sizes.len(),
                self.client_count
            )));
        }
        let samples = self
            .sizes
            .iter()
            .enumerate()
            .map(|(k, &s)| partition_with_regime(pool, s, self.regime, stream.derive(k as u64)))
            .collect::<Result<Vec<_>>>()?;
        let manifest = PartitionManifest {
            regime: self.regime,
            sizes: self.sizes.clone(),
            label_counts: samples.iter().map(|s| s.counts.clone()).collect(),
        };
        Ok((samples, manifest))
    }
}
