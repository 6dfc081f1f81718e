use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight vector `w` of a linear reward `R = φᵀw`, bounded in max-norm by `c_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    w: Vec<f64>,
    c_max: f64,
}

impl RewardWeights {
    pub fn new(w: Vec<f64>, c_max: f64) -> Result<Self> {
        if !(c_max > 0.0) {
            return Err(Error::Config(format!("c_max must be positive, got {c_max}")));
        }
        if let Some(x) = w.iter().find(|x| !x.is_finite() || x.abs() > c_max) {
            return Err(Error::Domain(format!("weight {x} exceeds c_max {c_max}")));
        }
        Ok(Self { w, c_max })
    }

    /// Weights with no sampling bound, e.g. the original game's reward.
    pub fn unbounded(w: Vec<f64>) -> Self {
        Self {
            w,
            c_max: f64::INFINITY,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn max_norm(&self) -> f64 {
        self.w.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `φᵀw`, accumulated left to right from `0.0`.
    pub fn reward(&self, phi: &[f64]) -> f64 {
        debug_assert_eq!(phi.len(), self.w.len());
        phi.iter().zip(&self.w).fold(0.0, |acc, (f, w)| acc + f * w)
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.w.len() != dim {
            return Err(Error::ShapeMismatch {
                what: "reward weights",
                expected: dim,
                got: self.w.len(),
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for RewardWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, x) in self.w.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, "]")
    }
}
