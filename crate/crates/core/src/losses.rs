//! Loss values and residual kernels for the linear (Gaussian),
//! Bradley-Terry and Thurstone-Mosteller models.
//!
//! Every family is expressed through a per-record residual `g_k` such that
//! the gradient of the loss with respect to any parameter block is
//! `(1/m) * D^T (w .* g)` for the corresponding design block `D`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict_linear, ComparisonDataset, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossFamily {
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "bt")]
    BradleyTerry,
    #[serde(rename = "tm")]
    ThurstoneMosteller,
}

impl LossFamily {
    pub const ALL: [LossFamily; 3] = [
        LossFamily::Linear,
        LossFamily::BradleyTerry,
        LossFamily::ThurstoneMosteller,
    ];

    pub fn requires_binary(self) -> bool {
        !matches!(self, LossFamily::Linear)
    }

    /// Upper bound on the second derivative of the per-record loss in the
    /// predictor.
    pub fn curvature_bound(self) -> f64 {
        match self {
            LossFamily::Linear | LossFamily::ThurstoneMosteller => 1.0,
            LossFamily::BradleyTerry => 0.25,
        }
    }

    /// Per-record loss at outcome `y` and predictor `pred`.
    #[inline]
    pub fn record_loss(self, y: f64, pred: f64) -> f64 {
        match self {
            LossFamily::Linear => 0.5 * (y - pred) * (y - pred),
            LossFamily::BradleyTerry => -log_logistic(y * pred),
            LossFamily::ThurstoneMosteller => -log_gaussian_cdf(y * pred),
        }
    }

    /// Derivative of [`record_loss`](Self::record_loss) in `pred`.
    #[inline]
    pub fn residual(self, y: f64, pred: f64) -> f64 {
        match self {
            LossFamily::Linear => pred - y,
            // psi(s)/Psi(s) = Psi(-s) for the logistic
            LossFamily::BradleyTerry => -y * logistic(-y * pred),
            LossFamily::ThurstoneMosteller => -y * gaussian_hazard(y * pred),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Linear => "linear",
            LossFamily::BradleyTerry => "bt",
            LossFamily::ThurstoneMosteller => "tm",
        }
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LossFamily::Linear),
            "bt" | "bradley-terry" => Ok(LossFamily::BradleyTerry),
            "tm" | "thurstone-mosteller" => Ok(LossFamily::ThurstoneMosteller),
            _ => Err(Error::InvalidConfig(format!("unknown loss family {s:?}"))),
        }
    }
}

fn check_len(dataset: &ComparisonDataset, pred: &[f64]) -> Result<()> {
    if pred.len() != dataset.n_records() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} records",
            pred.len(),
            dataset.n_records()
        )));
    }
    Ok(())
}

/// `(1/m) sum_k w_k * l(y_k, pred_k)`.
pub fn loss_value(family: LossFamily, dataset: &ComparisonDataset, pred: &[f64]) -> Result<f64> {
    check_len(dataset, pred)?;
    if family.requires_binary() {
        dataset.require_binary()?;
    }
    let total: f64 = dataset
        .records()
        .iter()
        .zip(pred)
        .map(|(r, &p)| r.weight * family.record_loss(r.outcome, p))
        .sum();
    Ok(total / dataset.n_records() as f64)
}

/// Unweighted residuals `g_k`; callers multiply by the record weight.
pub fn gradient_residual(family: LossFamily, dataset: &ComparisonDataset, pred: &[f64]) -> Result<Vec<f64>> {
    check_len(dataset, pred)?;
    if family.requires_binary() {
        dataset.require_binary()?;
    }
    Ok(dataset
        .records()
        .iter()
        .zip(pred)
        .map(|(r, &p)| family.residual(r.outcome, p))
        .collect())
}

/// Gradient of the data loss in parameter space at `state`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub eta: Vec<f64>,
    /// User-major, `dim` entries per user.
    pub xi: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// `(grad_eta, grad_xi, grad_gamma)` of [`loss_value`] at the predictions of `state`.
pub fn parameter_gradient(family: LossFamily, dataset: &ComparisonDataset, state: &ModelState) -> Result<ParamGradient> {
    let pred = predict_linear(state, dataset)?;
    let g = gradient_residual(family, dataset, &pred)?;
    let d = dataset.dim();
    let m = dataset.n_records() as f64;
    let mut out = ParamGradient {
        eta: vec![0.0; d],
        xi: vec![0.0; d * dataset.n_users()],
        gamma: vec![0.0; dataset.n_users()],
    };
    for u in 0..dataset.n_users() {
        let block = &mut out.xi[u * d..(u + 1) * d];
        for &k in dataset.user_records(u) {
            let c = dataset.records()[k].weight * g[k] / m;
            dataset.diff_axpy(k, c, block);
            out.gamma[u] += c;
        }
        for (e, b) in out.eta.iter_mut().zip(block.iter()) {
            *e += b;
        }
    }
    Ok(out)
}

/// `1 / (1 + e^{-s})`.
#[inline]
pub fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 / (1 + e^{-s}))` without overflow or cancellation.
#[inline]
pub fn log_logistic(s: f64) -> f64 {
    if s >= 0.0 {
        -(-s).exp().ln_1p()
    } else {
        s - s.exp().ln_1p()
    }
}

/// Standard normal density.
#[inline]
pub fn gaussian_pdf(s: f64) -> f64 {
    (-0.5 * s * s).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF.
#[inline]
pub fn gaussian_cdf(s: f64) -> f64 {
    0.5 * libm::erfc(-s * FRAC_1_SQRT_2)
}

/// Scaled complementary error function `e^{x^2} erfc(x)` for `x >= 0`.
pub fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 26.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        // asymptotic series; terms shrink by ~1/(2x^2) < 1e-3 here
        let inv2 = 1.0 / (2.0 * x * x);
        let series = 1.0 - inv2 * (1.0 - 3.0 * inv2 * (1.0 - 5.0 * inv2 * (1.0 - 7.0 * inv2)));
        series / (x * PI.sqrt())
    }
}

/// `log Phi(s)`; the left tail goes through `erfcx` so it never hits `log(0)`.
#[inline]
pub fn log_gaussian_cdf(s: f64) -> f64 {
    if s > 0.0 {
        (-0.5 * libm::erfc(s * FRAC_1_SQRT_2)).ln_1p()
    } else if s > -6.0 {
        gaussian_cdf(s).ln()
    } else {
        let x = -s * FRAC_1_SQRT_2;
        (0.5 * erfcx(x)).ln() - x * x
    }
}

/// Inverse Mills ratio `phi(s) / Phi(s)`.
#[inline]
pub fn gaussian_hazard(s: f64) -> f64 {
    if s > -6.0 {
        gaussian_pdf(s) / gaussian_cdf(s)
    } else {
        // phi(s)/Phi(s) = sqrt(2/pi) / erfcx(-s/sqrt 2)
        (2.0 / PI).sqrt() / erfcx(-s * FRAC_1_SQRT_2)
    }
}
