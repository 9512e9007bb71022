//! Particle ensembles as handed between samplers, diagnostics and output.

use serde::{Deserialize, Serialize};

/// The ensemble approximating one posterior (or the prior when `n = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSnapshot {
    /// Number of observation times assimilated.
    pub n: usize,
    /// Grid values of each particle.
    pub fields: Vec<Vec<f64>>,
    /// KL coordinates, for samplers that work in them.
    pub coeffs: Option<Vec<Vec<f64>>>,
    /// Normalized weights; `None` means equal weights.
    pub weights: Option<Vec<f64>>,
}

impl EnsembleSnapshot {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}
