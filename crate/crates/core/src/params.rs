//! Flat parameter vectors with named blocks.
//!
//! Parameters, gradients and optimizer moments all share this layout so that
//! per-block norms (e.g. `‖√v̂‖` for the hidden weights only) can be read off
//! any of them with the same block table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn new(name: impl Into<String>, offset: usize, len: usize) -> Self {
        Self {
            name: name.into(),
            offset,
            len,
        }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Checks that `blocks` tile `[0, n)` in order with no gaps or overlap.
pub fn validate_blocks(blocks: &[Block], n: usize) -> Result<()> {
    let mut cursor = 0;
    for b in blocks {
        if b.offset != cursor || b.len == 0 {
            return Err(Error::InvalidParameter(format!(
                "block '{}' at offset {} does not continue partition at {}",
                b.name, b.offset, cursor
            )));
        }
        cursor += b.len;
    }
    if cursor != n {
        return Err(Error::InvalidParameter(format!(
            "blocks cover {cursor} entries but vector has {n}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub blocks: Vec<Block>,
}

impl ParamVector {
    /// Single-block vector named "theta".
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            values,
            blocks: vec![Block::new("theta", 0, n)],
        }
    }

    pub fn with_blocks(values: Vec<f64>, blocks: Vec<Block>) -> Result<Self> {
        validate_blocks(&blocks, values.len())?;
        Ok(Self { values, blocks })
    }

    pub fn zeros_like(other: &ParamVector) -> Self {
        Self {
            values: vec![0.0; other.len()],
            blocks: other.blocks.clone(),
        }
    }

    /// Same block layout as `self`, new contents.
    pub fn like(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.len());
        Self {
            values,
            blocks: self.blocks.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn block_norms(&self) -> Vec<(String, f64)> {
        self.blocks
            .iter()
            .map(|b| (b.name.clone(), norm(&self.values[b.range()])))
            .collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm, rescaled so that vectors with entries near the
/// underflow/overflow limits still produce a finite, non-zero answer.
pub fn norm(a: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = a.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

pub fn rms(a: &[f64]) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        norm(a) / (a.len() as f64).sqrt()
    }
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Returns `a + s * b`.
pub fn add_scaled(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        None
    } else {
        Some(scale(a, 1.0 / n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_must_partition() {
        let ok = vec![Block::new("a", 0, 2), Block::new("b", 2, 3)];
        assert!(validate_blocks(&ok, 5).is_ok());
        let gap = vec![Block::new("a", 0, 2), Block::new("b", 3, 2)];
        assert!(validate_blocks(&gap, 5).is_err());
        let short = vec![Block::new("a", 0, 2)];
        assert!(validate_blocks(&short, 5).is_err());
        let overlap = vec![Block::new("a", 0, 3), Block::new("b", 2, 3)];
        assert!(validate_blocks(&overlap, 5).is_err());
    }

    #[test]
    fn norm_survives_extreme_scales() {
        assert!((norm(&[3e-200, 4e-200]) / 5e-200 - 1.0).abs() < 1e-15);
        assert!((norm(&[3e200, 4e200]) / 5e200 - 1.0).abs() < 1e-15);
        assert_eq!(norm(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn block_norms_follow_layout() {
        let p = ParamVector::with_blocks(
            vec![3.0, 4.0, 1.0],
            vec![Block::new("w", 0, 2), Block::new("b", 2, 1)],
        )
        .unwrap();
        let norms = p.block_norms();
        assert_eq!(norms[0], ("w".to_string(), 5.0));
        assert_eq!(norms[1], ("b".to_string(), 1.0));
    }
}
