use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossFamily;
use crate::model::ComparisonDataset;
use crate::penalty::PenaltyMode;

pub const DEFAULT_KAPPA: f64 = 100.0;
pub const DEFAULT_RECORD_EVERY: usize = 10;
pub const DEFAULT_TOL_SPECTRAL: f64 = 1e-4;

/// Solver settings. `alpha = None` selects the automatic step
/// `m / (kappa * ||d Phi Phi^T d^T + X X^T||_2)`; `mode = None` picks group
/// sparsity for identity features and entrywise sparsity otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub family: LossFamily,
    pub mode: Option<PenaltyMode>,
    pub kappa: f64,
    pub alpha: Option<f64>,
    pub max_iters: usize,
    pub record_every: usize,
    pub seed: u64,
    pub threads: usize,
    pub tol_spectral: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            family: LossFamily::BradleyTerry,
            mode: None,
            kappa: DEFAULT_KAPPA,
            alpha: None,
            max_iters: 1000,
            record_every: DEFAULT_RECORD_EVERY,
            seed: 0,
            threads: 1,
            tol_spectral: DEFAULT_TOL_SPECTRAL,
        }
    }
}

impl SolverConfig {
    pub fn new(family: LossFamily) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidConfig(format!("kappa must be positive, got {}", self.kappa)));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidConfig(format!("alpha must be positive, got {a}")));
            }
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        if !(self.tol_spectral > 0.0) {
            return Err(Error::InvalidConfig("tol_spectral must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_mode(&self, dataset: &ComparisonDataset) -> Result<PenaltyMode> {
        let identity = dataset.features().is_identity();
        match self.mode {
            Some(PenaltyMode::EntrywiseSparse) if identity => Err(Error::InvalidConfig(
                "identity features require the group penalty".into(),
            )),
            Some(m) => Ok(m),
            None if identity => Ok(PenaltyMode::GroupSparse),
            None => Ok(PenaltyMode::EntrywiseSparse),
        }
    }
}
