use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jets::JetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative pivot threshold for numerical rank.
    pub rank: f64,
    /// Orthogonality and absent-arrow threshold.
    pub orth: f64,
    /// Harmonicity and holomorphicity residual threshold.
    pub harm: f64,
    /// Scaled nilpotency threshold.
    pub nil: f64,
    /// Extended-solution residual threshold.
    pub ext: f64,
    /// Relative trimming threshold for loop-parameter coefficients.
    pub trim: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rank: 1e-8, orth: 1e-10, harm: 1e-7, nil: 1e-7, ext: 1e-8, trim: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub tol: Tolerances,
    pub seed: u64,
    pub samples: usize,
    /// Overrides the default jet order `2(n + 2)`.
    pub jet_order: Option<usize>,
    /// Overrides the default move budget `4n`.
    pub budget: Option<usize>,
}

pub const DEFAULT_SEED: u64 = 0x5EED;

impl Default for Settings {
    fn default() -> Self {
        Self { tol: Tolerances::default(), seed: DEFAULT_SEED, samples: 7, jet_order: None, budget: None }
    }
}

impl Settings {
    pub fn jet_order(&self, n: usize) -> usize {
        self.jet_order.unwrap_or(2 * (n + 2))
    }

    pub fn budget(&self, n: usize) -> usize {
        self.budget.unwrap_or(4 * n)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_samples(&self, samples: usize) -> Self {
        Self { samples, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("rank drop at z0 = {point}: rank {rank}, generic rank {generic}")]
    RankDrop { point: Complex64, rank: usize, generic: usize },
    #[error("usage: {0}")]
    Usage(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
}

impl LabError {
    /// True for failures that only say the base point was a bad choice.
    pub fn is_resample(&self) -> bool {
        matches!(self, LabError::RankDrop { .. } | LabError::Jet(JetError::Singular { .. }))
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        LabError::Usage(msg.into())
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
