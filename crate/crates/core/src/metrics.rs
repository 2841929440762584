//! Distances between label distributions. Logarithms are natural; the
//! Wasserstein ground metric puts classes on the integer line.

use serde::{Deserialize, Serialize};

use crate::datasets::LabelDistribution;
use crate::error::{Error, Result};

/// Mixing weight toward uniform applied to both arguments of `kl` when
/// reporting, so exact zeros in predictions do not make it infinite.
pub const KL_SMOOTHING: f64 = 1e-6;

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("distributions over {} and {} classes", p.len(), q.len())));
    }
    Ok(())
}

/// `sum_i |CDF_p(i) - CDF_q(i)|` over the first `C - 1` classes.
pub fn wasserstein1d(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    let (p, q) = (p.as_slice(), q.as_slice());
    same_len(p, q)?;
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut total = 0.0;
    for i in 0..p.len() - 1 {
        cp += p[i];
        cq += q[i];
        total += (cp - cq).abs();
    }
    Ok(total)
}

fn kl_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::Validation(format!(
                "kl undefined: q[{i}] = 0 where p[{i}] = {a}"
            )));
        }
        total += a * (a / b).ln();
    }
    Ok(total.max(0.0))
}

/// `sum_i p_i ln(p_i / q_i)`, with `0 ln 0 = 0`.
pub fn kl(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    same_len(p.as_slice(), q.as_slice())?;
    kl_slices(p.as_slice(), q.as_slice())
}

/// Jensen-Shannon divergence, in `[0, ln 2]`.
pub fn js(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    let (p, q) = (p.as_slice(), q.as_slice());
    same_len(p, q)?;
    // Term-wise sums commute, so js(p, q) and js(q, p) agree bitwise.
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        let ta = if a > 0.0 { a * (a / m).ln() } else { 0.0 };
        let tb = if b > 0.0 { b * (b / m).ln() } else { 0.0 };
        total += 0.5 * ta + 0.5 * tb;
    }
    Ok(total.max(0.0))
}

pub fn l1(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    let (p, q) = (p.as_slice(), q.as_slice());
    same_len(p, q)?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
}

/// `(1 - lambda) p + lambda / C`.
pub fn smooth(p: &LabelDistribution, lambda: f64) -> LabelDistribution {
    let c = p.classes() as f64;
    let v: Vec<f64> = p.as_slice().iter().map(|&x| (1.0 - lambda) * x + lambda / c).collect();
    let s: f64 = v.iter().sum();
    LabelDistribution::new(v.iter().map(|x| x / s).collect()).expect("mixture of distributions")
}

/// The four distances between a true and a predicted distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub wasserstein: f64,
    /// On smoothed arguments, see [`KL_SMOOTHING`].
    pub kl: f64,
    pub js: f64,
    pub l1: f64,
}

impl DistanceReport {
    pub fn compute(truth: &LabelDistribution, predicted: &LabelDistribution) -> Result<Self> {
        Ok(Self {
            wasserstein: wasserstein1d(truth, predicted)?,
            kl: kl(&smooth(truth, KL_SMOOTHING), &smooth(predicted, KL_SMOOTHING))?,
            js: js(truth, predicted)?,
            l1: l1(truth, predicted)?,
        })
    }

    /// Field-wise mean over several reports.
    pub fn mean(reports: &[DistanceReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(Self {
            wasserstein: reports.iter().map(|r| r.wasserstein).sum::<f64>() / n,
            kl: reports.iter().map(|r| r.kl).sum::<f64>() / n,
            js: reports.iter().map(|r| r.js).sum::<f64>() / n,
            l1: reports.iter().map(|r| r.l1).sum::<f64>() / n,
        })
    }
}
