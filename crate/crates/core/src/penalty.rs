//! Sparsity penalties on the personalized blocks and their shrinkage maps.
//!
//! The common coefficient is never penalized. Biases always carry an L1
//! penalty; deviation vectors carry either a group (L2) penalty per user or
//! an entrywise L1 penalty.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenaltyMode {
    #[serde(rename = "group")]
    GroupSparse,
    #[serde(rename = "entrywise")]
    EntrywiseSparse,
}

impl PenaltyMode {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyMode::GroupSparse => "group",
            PenaltyMode::EntrywiseSparse => "entrywise",
        }
    }
}

impl fmt::Display for PenaltyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group" => Ok(PenaltyMode::GroupSparse),
            "entrywise" => Ok(PenaltyMode::EntrywiseSparse),
            _ => Err(Error::InvalidConfig(format!("unknown penalty mode {s:?}"))),
        }
    }
}

/// `sum_u |gamma_u| + sum_u ||xi_u||_2` (group) or `... + ||xi_u||_1` (entrywise).
/// `xi` is user-major with `dim` entries per user.
pub fn penalty_value(mode: PenaltyMode, dim: usize, xi: &[f64], gamma: &[f64]) -> f64 {
    let bias: f64 = gamma.iter().map(|g| g.abs()).sum();
    if dim == 0 {
        return bias;
    }
    let dev: f64 = xi
        .chunks(dim)
        .map(|block| match mode {
            PenaltyMode::GroupSparse => norm2(block),
            PenaltyMode::EntrywiseSparse => block.iter().map(|x| x.abs()).sum(),
        })
        .sum();
    bias + dev
}

/// `kappa * max(0, 1 - 1/|z|) * z` for a scalar.
#[inline]
pub fn shrink_scalar(kappa: f64, z: f64) -> f64 {
    let a = z.abs();
    if a <= 1.0 {
        0.0
    } else {
        kappa * (1.0 - 1.0 / a) * z
    }
}

/// Shrink one deviation block `z` into `out`. Returns whether the output is
/// nonzero.
#[inline]
pub fn shrink_block(mode: PenaltyMode, kappa: f64, z: &[f64], out: &mut [f64]) -> bool {
    match mode {
        PenaltyMode::GroupSparse => {
            let n = norm2(z);
            if n <= 1.0 {
                out.iter_mut().for_each(|o| *o = 0.0);
                false
            } else {
                let factor = kappa * (1.0 - 1.0 / n);
                for (o, &zi) in out.iter_mut().zip(z) {
                    *o = factor * zi;
                }
                true
            }
        }
        PenaltyMode::EntrywiseSparse => {
            let mut any = false;
            for (o, &zi) in out.iter_mut().zip(z) {
                *o = shrink_scalar(kappa, zi);
                any |= *o != 0.0;
            }
            any
        }
    }
}

/// Apply the shrinkage map to every user: returns `(xi, gamma)`.
pub fn shrink(mode: PenaltyMode, kappa: f64, dim: usize, z_xi: &[f64], z_gamma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut xi = vec![0.0; z_xi.len()];
    if dim > 0 {
        for (out, z) in xi.chunks_mut(dim).zip(z_xi.chunks(dim)) {
            shrink_block(mode, kappa, z, out);
        }
    }
    let gamma = z_gamma.iter().map(|&z| shrink_scalar(kappa, z)).collect();
    (xi, gamma)
}

/// Whether a dual block lies strictly outside the unit ball of the dual norm,
/// i.e. whether its shrunk block is nonzero.
pub fn dual_active(mode: PenaltyMode, z: &[f64]) -> bool {
    match mode {
        PenaltyMode::GroupSparse => norm2(z) > 1.0,
        PenaltyMode::EntrywiseSparse => z.iter().any(|x| x.abs() > 1.0),
    }
}

#[inline]
pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn penalty_examples() {
        use PenaltyMode::*;
        assert_eq!(penalty_value(GroupSparse, 2, &[0.0, 0.0], &[0.0]), 0.0);
        assert_eq!(penalty_value(GroupSparse, 2, &[3.0, 4.0], &[-2.0]), 7.0);
        assert_eq!(penalty_value(EntrywiseSparse, 2, &[3.0, 4.0], &[-2.0]), 9.0);
    }

    #[test]
    fn inside_unit_ball_is_zero() {
        let z = [0.9 * 0.6, 0.9 * 0.8];
        let (xi, _) = shrink(PenaltyMode::GroupSparse, 123.0, 2, &z, &[0.0]);
        assert_eq!(xi, vec![0.0, 0.0]);
    }

    #[test]
    fn axis_aligned_group_shrink() {
        let (xi, g) = shrink(PenaltyMode::GroupSparse, 5.0, 2, &[0.0, 2.0], &[-3.0]);
        assert_eq!(xi, vec![0.0, 5.0]);
        assert!((g[0] - (-10.0)).abs() < 1e-12);
    }

    #[test]
    fn entrywise_soft_threshold() {
        let (xi, _) = shrink(PenaltyMode::EntrywiseSparse, 2.0, 3, &[0.5, -3.0, 1.5], &[0.0]);
        assert_eq!(xi, vec![0.0, -4.0, 1.0]);
    }

    fn modes() -> impl Strategy<Value = PenaltyMode> {
        prop_oneof![Just(PenaltyMode::GroupSparse), Just(PenaltyMode::EntrywiseSparse)]
    }

    proptest! {
        #[test]
        fn support_iff_outside_ball(mode in modes(), z in proptest::collection::vec(-3.0f64..3.0, 3), k in 0.1f64..50.0) {
            let mut out = [0.0; 3];
            let nz = shrink_block(mode, k, &z, &mut out);
            prop_assert_eq!(nz, dual_active(mode, &z));
            prop_assert_eq!(nz, out.iter().any(|&x| x != 0.0));
            if mode == PenaltyMode::EntrywiseSparse {
                for (o, zi) in out.iter().zip(&z) {
                    prop_assert_eq!(*o != 0.0, zi.abs() > 1.0);
                }
            }
        }

        #[test]
        fn positively_homogeneous_in_kappa(mode in modes(), z in proptest::collection::vec(-3.0f64..3.0, 3),
                                           zg in -3.0f64..3.0, k in 0.1f64..20.0, c in 0.1f64..10.0) {
            let (a, ga) = shrink(mode, c * k, 3, &z, &[zg]);
            let (b, gb) = shrink(mode, k, 3, &z, &[zg]);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - c * y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
            prop_assert!((ga[0] - c * gb[0]).abs() <= 1e-12 * (1.0 + ga[0].abs()));
        }

        #[test]
        fn group_output_is_positive_multiple(z in proptest::collection::vec(-3.0f64..3.0, 3), k in 0.1f64..20.0) {
            let mut out = [0.0; 3];
            if shrink_block(PenaltyMode::GroupSparse, k, &z, &mut out) {
                let ratio = out[0] / z[0];
                prop_assert!(ratio > 0.0);
                for (o, zi) in out.iter().zip(&z) {
                    prop_assert!((o - ratio * zi).abs() <= 1e-12 * (1.0 + o.abs()));
                }
            }
        }

        #[test]
        fn shrink_over_kappa_is_nonexpansive(mode in modes(),
                                             a in proptest::collection::vec(-4.0f64..4.0, 3),
                                             b in proptest::collection::vec(-4.0f64..4.0, 3),
                                             k in 0.1f64..20.0) {
            let (mut sa, mut sb) = ([0.0; 3], [0.0; 3]);
            shrink_block(mode, k, &a, &mut sa);
            shrink_block(mode, k, &b, &mut sb);
            let d_out: f64 = sa.iter().zip(&sb).map(|(x, y)| (x / k - y / k).powi(2)).sum::<f64>().sqrt();
            let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d_out <= d_in * (1.0 + 1e-12) + 1e-15);
        }
    }
}
