//! Reference predictions the attack is compared against.

use crate::datasets::LabelDistribution;
use crate::error::{Error, Result};
use crate::flsim::UploadRecord;

pub fn baseline_uniform(classes: usize) -> Result<LabelDistribution> {
    if classes < 2 {
        return Err(Error::Validation("uniform baseline needs at least 2 classes".into()));
    }
    Ok(LabelDistribution::uniform(classes))
}

/// Output-layer heuristic: each class scores the total growth of its output
/// bias over the victim's updates, `sum_t max(0, -g_c^t)` where `g^t` is the
/// uploaded update (`global - params`) restricted to the output bias. Scores
/// are normalised; all-zero scores give the uniform distribution.
pub fn baseline_lastlayer(uploads: &[&UploadRecord], bias_segment: &str) -> Result<LabelDistribution> {
    let first = uploads
        .first()
        .ok_or_else(|| Error::Validation("no uploads for the last-layer baseline".into()))?;
    let classes = first
        .grad_update
        .segment(bias_segment)
        .ok_or_else(|| Error::Validation(format!("uploads have no `{bias_segment}` segment")))?
        .len();
    let mut score = vec![0.0; classes];
    for u in uploads {
        let g = u
            .grad_update
            .segment(bias_segment)
            .ok_or_else(|| Error::Validation(format!("uploads have no `{bias_segment}` segment")))?;
        for (s, &v) in score.iter_mut().zip(g) {
            *s += (-v).max(0.0);
        }
    }
    let total: f64 = score.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return baseline_uniform(classes);
    }
    LabelDistribution::new(score.iter().map(|s| s / total).collect())
}
