//! Synthetic crowdsourced comparisons with known common coefficients,
//! sparse per-user deviations and sparse position biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{gaussian_cdf, logistic, LossFamily};
use crate::model::{ComparisonDataset, ComparisonRecord, FeatureMatrix, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_items: usize,
    pub dim: usize,
    pub n_users: usize,
    pub p_common_nonzero: f64,
    pub p_dev_nonzero: f64,
    pub p_bias_nonzero: f64,
    pub bias_sd: f64,
    pub n_range: (usize, usize),
    pub family: LossFamily,
    /// Use `Phi = I` instead of Gaussian features (`dim` is then ignored).
    pub identity_features: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_items: 20,
            dim: 10,
            n_users: 100,
            p_common_nonzero: 0.4,
            p_dev_nonzero: 0.4,
            p_bias_nonzero: 0.4,
            bias_sd: 2.0,
            n_range: (50, 200),
            family: LossFamily::BradleyTerry,
            identity_features: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_common_nonzero, self.p_dev_nonzero, self.p_bias_nonzero];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if self.n_range.0 > self.n_range.1 || self.n_range.1 == 0 {
            return Err(Error::InvalidConfig("need 0 < N1 <= N2 in n_range".into()));
        }
        if self.n_items < 2 || self.n_users == 0 {
            return Err(Error::InvalidConfig("need at least 2 items and 1 user".into()));
        }
        if !(self.bias_sd >= 0.0) || (!self.identity_features && self.dim == 0) {
            return Err(Error::InvalidConfig("bias_sd must be >= 0 and dim >= 1".into()));
        }
        Ok(())
    }
}

/// splitmix64 finalizer, used to derive independent stream seeds.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ a) ^ b))
}

fn sparse_normal(rng: &mut ChaCha8Rng, p: f64, sd: f64) -> f64 {
    if rng.gen_bool(p) {
        let x: f64 = StandardNormal.sample(rng);
        sd * x
    } else {
        0.0
    }
}

/// Zero-padded ids so lexicographic order equals index order.
pub fn padded_ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Draw a dataset and the ground-truth parameters that generated it.
///
/// Randomness is split into independent streams: one for the features and
/// common coefficient, one per user for that user's parameters and sample
/// count, and one per `(user, sample)` for the pair and response.
pub fn generate(config: &SimConfig) -> Result<(ComparisonDataset, ModelState)> {
    config.validate()?;
    let n = config.n_items;
    let mut global = stream(config.seed, u64::MAX, 0);
    let features = if config.identity_features {
        FeatureMatrix::identity(n)
    } else {
        let data = (0..n * config.dim)
            .map(|_| StandardNormal.sample(&mut global))
            .collect();
        FeatureMatrix::explicit(n, config.dim, data)?
    };
    let d = features.dim();
    let mut truth = ModelState::zeros(config.n_users, d);
    for e in truth.eta.iter_mut() {
        *e = sparse_normal(&mut global, config.p_common_nonzero, 1.0);
    }

    let mut records = Vec::new();
    let mut w = vec![0.0; d];
    for u in 0..config.n_users {
        let mut rng = stream(config.seed, u as u64, u64::MAX);
        for x in truth.xi[u * d..(u + 1) * d].iter_mut() {
            *x = sparse_normal(&mut rng, config.p_dev_nonzero, 1.0);
        }
        truth.gamma[u] = sparse_normal(&mut rng, config.p_bias_nonzero, config.bias_sd);
        let n_samples = rng.gen_range(config.n_range.0..=config.n_range.1);
        for (wi, (e, x)) in w.iter_mut().zip(truth.eta.iter().zip(truth.xi_of(u))) {
            *wi = e + x;
        }
        for s in 0..n_samples {
            let mut rng = stream(config.seed, u as u64, s as u64);
            let idx = rng.gen_range(0..n * (n - 1));
            let left = idx / (n - 1);
            let r = idx % (n - 1);
            let right = if r < left { r } else { r + 1 };
            let pred = features.row_dot(left, &w) - features.row_dot(right, &w) + truth.gamma[u];
            let outcome = draw_response(config.family, pred, &mut rng);
            records.push(ComparisonRecord {
                user: u,
                left,
                right,
                outcome,
                weight: 1.0,
            });
        }
    }
    let ds = ComparisonDataset::from_parts(
        records,
        features,
        padded_ids("u", config.n_users),
        padded_ids("i", n),
    )?;
    Ok((ds, truth))
}

/// `P(y = +1) = Psi(pred)` for the binary families; Gaussian noise with unit
/// variance around `pred` for the linear family.
pub fn response_probability(family: LossFamily, pred: f64) -> f64 {
    match family {
        LossFamily::BradleyTerry => logistic(pred),
        LossFamily::ThurstoneMosteller | LossFamily::Linear => gaussian_cdf(pred),
    }
}

fn draw_response(family: LossFamily, pred: f64, rng: &mut ChaCha8Rng) -> f64 {
    match family {
        LossFamily::Linear => {
            let noise = Normal::new(0.0, 1.0).expect("unit normal");
            pred + noise.sample(rng)
        }
        _ => {
            if rng.gen_bool(response_probability(family, pred)) {
                1.0
            } else {
                -1.0
            }
        }
    }
}
