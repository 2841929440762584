use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named block of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A named block materialised out of a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flattened model parameters (or gradients/updates with the same layout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    layout: Vec<Segment>,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: Vec<Segment>) -> Self {
        let n = layout.iter().map(Segment::numel).sum();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(layout: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        let n: usize = layout.iter().map(Segment::numel).sum();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "layout holds {n} values but {} were given",
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.layout.clone(), values)
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layout == other.layout
    }

    pub fn ensure_same_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter layouts differ".into()))
        }
    }

    /// Offset and length of the named segment.
    pub fn span(&self, name: &str) -> Option<(usize, usize)> {
        let mut offset = 0;
        for seg in &self.layout {
            let n = seg.numel();
            if seg.name == name {
                return Some((offset, n));
            }
            offset += n;
        }
        None
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.span(name).map(|(o, n)| &self.values[o..o + n])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.span(name).map(move |(o, n)| &mut self.values[o..o + n])
    }

    pub fn unflatten(&self) -> Vec<NamedTensor> {
        let mut offset = 0;
        self.layout
            .iter()
            .map(|seg| {
                let n = seg.numel();
                let t = NamedTensor {
                    name: seg.name.clone(),
                    shape: seg.shape.clone(),
                    data: self.values[offset..offset + n].to_vec(),
                };
                offset += n;
                t
            })
            .collect()
    }

    pub fn flatten(parts: &[NamedTensor]) -> Result<Self> {
        let mut layout = Vec::with_capacity(parts.len());
        let mut values = Vec::new();
        for p in parts {
            let seg = Segment::new(p.name.clone(), &p.shape);
            if seg.numel() != p.data.len() {
                return Err(Error::Shape(format!(
                    "segment `{}` has {} values for shape {:?}",
                    p.name,
                    p.data.len(),
                    p.shape
                )));
            }
            layout.push(seg);
            values.extend_from_slice(&p.data);
        }
        Ok(Self { layout, values })
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.ensure_same_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            layout: self.layout.clone(),
            values,
        })
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }

    /// Stable hex digest of the layout (names and shapes), used to validate
    /// checkpoints.
    pub fn layout_hash(&self) -> String {
        layout_hash(&self.layout)
    }
}

pub fn layout_hash(layout: &[Segment]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for seg in layout {
        h.update(seg.name.as_bytes());
        h.update([0u8]);
        for d in &seg.shape {
            h.update((*d as u64).to_le_bytes());
        }
        h.update([0xffu8]);
    }
    h.finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Euclidean norm of all components.
pub fn grad_l2_norm(g: &ParameterVector) -> f64 {
    g.values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `params - lr * grad`
pub fn sgd_step(params: &ParameterVector, grad: &ParameterVector, lr: f64) -> Result<ParameterVector> {
    params.ensure_same_layout(grad)?;
    let values = params
        .values
        .iter()
        .zip(&grad.values)
        .map(|(p, g)| p - lr * g)
        .collect();
    Ok(ParameterVector {
        layout: params.layout.clone(),
        values,
    })
}
