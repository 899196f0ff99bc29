//! Regularization paths: recorded snapshots, support events and
//! interpolation between snapshots.

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::penalty::{shrink, PenaltyMode};

/// A personalized parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "user", rename_all = "lowercase")]
pub enum Block {
    Deviation(usize),
    Bias(usize),
}

impl Block {
    pub fn user(self) -> usize {
        match self {
            Block::Deviation(u) | Block::Bias(u) => u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Entered,
    Left,
}

/// A block changing between zero and nonzero at iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportEvent {
    pub k: usize,
    pub t: f64,
    pub block: Block,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub k: usize,
    pub state: ModelState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationPath {
    pub config: SolverConfig,
    /// Mode actually used (resolved from the features when not forced).
    pub mode: PenaltyMode,
    pub alpha: f64,
    pub spectral_norm: f64,
    pub points: Vec<PathPoint>,
    /// Sorted by `(k, block)`.
    pub events: Vec<SupportEvent>,
}

impl RegularizationPath {
    pub fn t_max(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.state.t)
    }

    pub fn first(&self) -> &ModelState {
        &self.points[0].state
    }

    pub fn last(&self) -> &ModelState {
        &self.points[self.points.len() - 1].state
    }

    pub fn kappa(&self) -> f64 {
        self.config.kappa
    }

    /// Interpolated state at `t` using the path's own `kappa` and mode.
    pub fn state_at(&self, t: f64) -> Result<ModelState> {
        interpolate_state(self, self.config.kappa, self.mode, t)
    }

    /// First entry time of each user's deviation block (`None` if it never enters).
    pub fn first_entry(&self, n_users: usize, bias: bool) -> Vec<Option<f64>> {
        let mut out = vec![None; n_users];
        for e in &self.events {
            if e.direction != Direction::Entered {
                continue;
            }
            let u = match (e.block, bias) {
                (Block::Deviation(u), false) | (Block::Bias(u), true) => u,
                _ => continue,
            };
            if u < n_users && out[u].is_none() {
                out[u] = Some(e.t);
            }
        }
        out
    }
}

/// Linear interpolation of `(eta, z)` between the two snapshots bracketing
/// `t_query`, followed by shrinkage of the interpolated dual blocks. A query
/// that hits a recorded time returns that snapshot unchanged.
pub fn interpolate_state(
    path: &RegularizationPath,
    kappa: f64,
    mode: PenaltyMode,
    t_query: f64,
) -> Result<ModelState> {
    let t_max = path.t_max();
    if !(t_query >= 0.0 && t_query <= t_max) || path.points.is_empty() {
        return Err(Error::OutOfRange { t: t_query, t_max });
    }
    let pts = &path.points;
    // first snapshot with t >= t_query
    let hi = pts.partition_point(|p| p.state.t < t_query);
    if pts[hi].state.t == t_query {
        return Ok(pts[hi].state.clone());
    }
    let (a, b) = (&pts[hi - 1].state, &pts[hi].state);
    let lam = (t_query - a.t) / (b.t - a.t);
    let lerp = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter().zip(y).map(|(p, q)| (1.0 - lam) * p + lam * q).collect()
    };
    let z_xi = lerp(&a.z_xi, &b.z_xi);
    let z_gamma = lerp(&a.z_gamma, &b.z_gamma);
    let (xi, gamma) = shrink(mode, kappa, a.dim, &z_xi, &z_gamma);
    Ok(ModelState {
        t: t_query,
        dim: a.dim,
        eta: lerp(&a.eta, &b.eta),
        xi,
        gamma,
        z_xi,
        z_gamma,
    })
}
