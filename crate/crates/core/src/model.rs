//! Comparison data, item features and the parameter blocks of the
//! mixed-effects model.
//!
//! A record `(u, i, j, y)` is explained by the linear predictor
//! `(phi_i - phi_j)^T (eta + xi_u) + gamma_u`. The stacked design
//! `[d^1 Phi, ..., d^U Phi, A]` is never formed; every operator in this
//! crate walks the records and gathers or scatters through the per-record
//! feature difference `phi_left - phi_right`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed comparison, with users and items already densely indexed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub user: usize,
    pub left: usize,
    pub right: usize,
    /// `> 0` means the left item was preferred.
    pub outcome: f64,
    pub weight: f64,
}

/// A comparison before user reindexing; the user is an opaque id.
#[derive(Debug, Clone, PartialEq)]
pub struct RawComparison {
    pub user: String,
    pub left: usize,
    pub right: usize,
    pub outcome: f64,
    pub weight: f64,
}

impl RawComparison {
    pub fn new(user: impl Into<String>, left: usize, right: usize, outcome: f64) -> Self {
        Self {
            user: user.into(),
            left,
            right,
            outcome,
            weight: 1.0,
        }
    }
}

/// Item features, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMatrix {
    /// `Phi = I_n`, never materialized.
    Identity { n: usize },
    /// Row-major `n x d`.
    Explicit { n: usize, d: usize, data: Vec<f64> },
}

impl FeatureMatrix {
    pub fn identity(n: usize) -> Self {
        FeatureMatrix::Identity { n }
    }

    pub fn explicit(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "feature data has {} entries, expected {n} x {d}",
                data.len()
            )));
        }
        Ok(FeatureMatrix::Explicit { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("ragged feature rows".into()));
        }
        Self::explicit(n, d, rows.concat())
    }

    pub fn n_items(&self) -> usize {
        match *self {
            FeatureMatrix::Identity { n } | FeatureMatrix::Explicit { n, .. } => n,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            FeatureMatrix::Identity { n } => n,
            FeatureMatrix::Explicit { d, .. } => d,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, FeatureMatrix::Identity { .. })
    }

    /// `phi_i^T v`.
    pub fn row_dot(&self, item: usize, v: &[f64]) -> f64 {
        match self {
            FeatureMatrix::Identity { .. } => v[item],
            FeatureMatrix::Explicit { d, data, .. } => {
                dot(&data[item * d..(item + 1) * d], v)
            }
        }
    }

    /// `Phi v`, length `n`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_items()).map(|i| self.row_dot(i, v)).collect()
    }
}

/// Validated, immutable comparison multigraph plus item features.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonDataset {
    records: Vec<ComparisonRecord>,
    features: FeatureMatrix,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_records: Vec<Vec<usize>>,
    /// Row-major `m x d` table of `phi_left - phi_right` (explicit features only).
    diffs: Vec<f64>,
}

/// Dense reindexing of opaque user ids in lexicographic order.
pub fn build_dataset(records: Vec<RawComparison>, features: FeatureMatrix) -> Result<ComparisonDataset> {
    let ids: BTreeMap<&str, usize> = records
        .iter()
        .map(|r| (r.user.as_str(), 0))
        .collect::<BTreeMap<_, _>>()
        .into_keys()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let indexed = records
        .iter()
        .map(|r| ComparisonRecord {
            user: ids[r.user.as_str()],
            left: r.left,
            right: r.right,
            outcome: r.outcome,
            weight: r.weight,
        })
        .collect();
    let user_ids = ids.keys().map(|s| s.to_string()).collect();
    let item_ids = (0..features.n_items()).map(|i| i.to_string()).collect();
    ComparisonDataset::from_parts(indexed, features, user_ids, item_ids)
}

impl ComparisonDataset {
    /// Assemble a dataset whose users and items are already dense indices
    /// into `user_ids` / `item_ids`.
    pub fn from_parts(
        records: Vec<ComparisonRecord>,
        features: FeatureMatrix,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = features.n_items();
        if item_ids.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} item ids for {n} feature rows",
                item_ids.len()
            )));
        }
        let n_users = user_ids.len();
        let mut user_records = vec![Vec::new(); n_users];
        for (k, r) in records.iter().enumerate() {
            for index in [r.left, r.right] {
                if index >= n {
                    return Err(Error::ItemIndexOutOfRange {
                        record: k,
                        index,
                        n_items: n,
                    });
                }
            }
            if r.left == r.right {
                return Err(Error::SelfComparison {
                    record: k,
                    item: r.left,
                });
            }
            if !(r.weight >= 0.0 && r.weight.is_finite()) || !r.outcome.is_finite() {
                return Err(Error::InvalidWeight {
                    record: k,
                    weight: r.weight,
                });
            }
            if r.user >= n_users {
                return Err(Error::DimensionMismatch(format!(
                    "record {k} references user {} of {n_users}",
                    r.user
                )));
            }
            user_records[r.user].push(k);
        }
        let diffs = match &features {
            FeatureMatrix::Identity { .. } => Vec::new(),
            FeatureMatrix::Explicit { d, data, .. } => {
                let d = *d;
                let mut out = Vec::with_capacity(records.len() * d);
                for r in &records {
                    let (a, b) = (&data[r.left * d..][..d], &data[r.right * d..][..d]);
                    out.extend(a.iter().zip(b).map(|(x, y)| x - y));
                }
                out
            }
        };
        Ok(Self {
            records,
            features,
            user_ids,
            item_ids,
            user_records,
            diffs,
        })
    }

    pub fn records(&self) -> &[ComparisonRecord] {
        &self.records
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    /// Record indices of user `u`, in record order.
    pub fn user_records(&self, u: usize) -> &[usize] {
        &self.user_records[u]
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.features.n_items()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// `(phi_left - phi_right)^T v` for record `k`.
    #[inline]
    pub fn diff_dot(&self, k: usize, v: &[f64]) -> f64 {
        if self.diffs.is_empty() {
            let r = &self.records[k];
            v[r.left] - v[r.right]
        } else {
            let d = self.features.dim();
            dot(&self.diffs[k * d..(k + 1) * d], v)
        }
    }

    /// `out += coef * (phi_left - phi_right)` for record `k`.
    #[inline]
    pub fn diff_axpy(&self, k: usize, coef: f64, out: &mut [f64]) {
        if self.diffs.is_empty() {
            let r = &self.records[k];
            out[r.left] += coef;
            out[r.right] -= coef;
        } else {
            let d = self.features.dim();
            for (o, x) in out.iter_mut().zip(&self.diffs[k * d..(k + 1) * d]) {
                *o += coef * x;
            }
        }
    }

    pub fn is_binary(&self) -> bool {
        self.first_non_binary().is_none()
    }

    pub(crate) fn first_non_binary(&self) -> Option<(usize, f64)> {
        self.records
            .iter()
            .enumerate()
            .find(|(_, r)| r.outcome != 1.0 && r.outcome != -1.0)
            .map(|(k, r)| (k, r.outcome))
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        match self.first_non_binary() {
            Some((record, outcome)) => Err(Error::NonBinaryOutcomeForGlm { record, outcome }),
            None => Ok(()),
        }
    }

    /// New dataset with the chosen records; users, items and features are
    /// kept so parameter indices stay aligned with the parent.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&k| self.records[k]).collect();
        Self::from_parts(
            records,
            self.features.clone(),
            self.user_ids.clone(),
            self.item_ids.clone(),
        )
    }

    /// Number of connected components of the item comparison graph,
    /// counting only items that appear in at least one record.
    pub fn item_components(&self) -> usize {
        let n = self.n_items();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut seen = vec![false; n];
        for r in &self.records {
            seen[r.left] = true;
            seen[r.right] = true;
            let (a, b) = (find(&mut parent, r.left), find(&mut parent, r.right));
            if a != b {
                parent[a] = b;
            }
        }
        (0..n)
            .filter(|&i| seen[i] && find(&mut parent, i) == i)
            .count()
    }
}

/// Parameters `(eta, xi, gamma)` and the dual blocks `(z_xi, z_gamma)` at
/// path time `t`. Per-user vectors are stored flat, user-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub t: f64,
    pub dim: usize,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
    pub gamma: Vec<f64>,
    pub z_xi: Vec<f64>,
    pub z_gamma: Vec<f64>,
}

impl ModelState {
    pub fn zeros(n_users: usize, dim: usize) -> Self {
        Self {
            t: 0.0,
            dim,
            eta: vec![0.0; dim],
            xi: vec![0.0; n_users * dim],
            gamma: vec![0.0; n_users],
            z_xi: vec![0.0; n_users * dim],
            z_gamma: vec![0.0; n_users],
        }
    }

    pub fn for_dataset(dataset: &ComparisonDataset) -> Self {
        Self::zeros(dataset.n_users(), dataset.dim())
    }

    pub fn n_users(&self) -> usize {
        self.gamma.len()
    }

    pub fn xi_of(&self, u: usize) -> &[f64] {
        &self.xi[u * self.dim..(u + 1) * self.dim]
    }

    pub fn z_xi_of(&self, u: usize) -> &[f64] {
        &self.z_xi[u * self.dim..(u + 1) * self.dim]
    }

    pub fn is_zero(&self) -> bool {
        [&self.eta, &self.xi, &self.gamma, &self.z_xi, &self.z_gamma]
            .iter()
            .all(|v| v.iter().all(|&x| x == 0.0))
    }

    /// Same state with the personalized blocks dropped (HodgeRank-style
    /// common-only model).
    pub fn common_only(&self) -> Self {
        let mut s = Self::zeros(self.n_users(), self.dim);
        s.t = self.t;
        s.eta.clone_from(&self.eta);
        s
    }

    pub(crate) fn check_against(&self, dataset: &ComparisonDataset) -> Result<()> {
        let (u, d) = (dataset.n_users(), dataset.dim());
        if self.dim != d
            || self.eta.len() != d
            || self.xi.len() != u * d
            || self.gamma.len() != u
            || self.z_xi.len() != u * d
            || self.z_gamma.len() != u
        {
            return Err(Error::DimensionMismatch(format!(
                "state has dim {} and {} users; dataset has dim {d} and {u} users",
                self.dim,
                self.gamma.len()
            )));
        }
        Ok(())
    }
}

/// `eta + xi_u`, written into `out`.
#[inline]
pub(crate) fn user_coefficients(eta: &[f64], xi_u: &[f64], out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(eta).zip(xi_u) {
        *o = a + b;
    }
}

/// Linear predictor `(phi_l - phi_r)^T (eta + xi_u) + gamma_u` for every record.
pub fn predict_linear(state: &ModelState, dataset: &ComparisonDataset) -> Result<Vec<f64>> {
    state.check_against(dataset)?;
    let mut pred = vec![0.0; dataset.n_records()];
    let mut w = vec![0.0; dataset.dim()];
    for u in 0..dataset.n_users() {
        user_coefficients(&state.eta, state.xi_of(u), &mut w);
        for &k in dataset.user_records(u) {
            pred[k] = dataset.diff_dot(k, &w) + state.gamma[u];
        }
    }
    Ok(pred)
}

/// Common scores `Phi eta` and personalized scores `Phi (eta + xi_u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub common: Vec<f64>,
    pub personalized: Vec<Vec<f64>>,
}

impl Scores {
    /// With identity features all scores are shifted by the mean of the
    /// common scores, which only fixes the constant-shift gauge.
    pub fn from_state(state: &ModelState, features: &FeatureMatrix) -> Self {
        let mut common = features.apply(&state.eta);
        let mut personalized: Vec<Vec<f64>> = (0..state.n_users())
            .map(|u| features.apply(&add(&state.eta, state.xi_of(u))))
            .collect();
        if features.is_identity() && !common.is_empty() {
            let mean = common.iter().sum::<f64>() / common.len() as f64;
            for s in common.iter_mut().chain(personalized.iter_mut().flatten()) {
                *s -= mean;
            }
        }
        Self {
            common,
            personalized,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_record() -> ComparisonDataset {
        build_dataset(vec![RawComparison::new("a", 0, 1, 1.0)], FeatureMatrix::identity(2)).unwrap()
    }

    #[test]
    fn minimal_instance() {
        let ds = one_record();
        assert_eq!(ds.n_records(), 1);
        assert_eq!(ds.n_users(), 1);
        assert_eq!(ds.n_items(), 2);
    }

    #[test]
    fn item_out_of_range() {
        let err = build_dataset(
            vec![RawComparison::new("a", 5, 1, 1.0)],
            FeatureMatrix::explicit(3, 1, vec![0.0; 3]).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ItemIndexOutOfRange { index: 5, .. }));
    }

    #[test]
    fn empty_and_self_comparisons_rejected() {
        assert!(matches!(
            build_dataset(vec![], FeatureMatrix::identity(2)),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(
            build_dataset(vec![RawComparison::new("a", 1, 1, 1.0)], FeatureMatrix::identity(2)),
            Err(Error::SelfComparison { .. })
        ));
    }

    #[test]
    fn users_reindexed_lexicographically() {
        let ds = build_dataset(
            vec![
                RawComparison::new("zed", 0, 1, 1.0),
                RawComparison::new("amy", 1, 0, -1.0),
                RawComparison::new("zed", 1, 0, 1.0),
            ],
            FeatureMatrix::identity(2),
        )
        .unwrap();
        assert_eq!(ds.user_ids(), ["amy", "zed"]);
        assert_eq!(ds.records()[0].user, 1);
        assert_eq!(ds.user_records(1), [0, 2]);
    }

    #[test]
    fn null_and_unit_predictions() {
        let ds = one_record();
        let mut s = ModelState::for_dataset(&ds);
        assert_eq!(predict_linear(&s, &ds).unwrap(), vec![0.0]);
        s.eta = vec![1.0, 0.0];
        assert_eq!(predict_linear(&s, &ds).unwrap(), vec![1.0]);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let ds = one_record();
        let s = ModelState::zeros(1, 3);
        assert!(matches!(predict_linear(&s, &ds), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn predictor_orientation() {
        let recs = vec![RawComparison::new("a", 0, 2, 1.0), RawComparison::new("a", 2, 0, 1.0)];
        let ds = build_dataset(recs, FeatureMatrix::identity(3)).unwrap();
        let mut s = ModelState::for_dataset(&ds);
        s.eta = vec![0.3, -1.0, 2.5];
        s.xi = vec![0.1, 0.2, -0.4];
        let p = predict_linear(&s, &ds).unwrap();
        assert_eq!(p[0], -p[1]);
        // the bias keeps its sign when the presentation flips
        s.gamma = vec![0.7];
        let q = predict_linear(&s, &ds).unwrap();
        assert!((q[0] - (p[0] + 0.7)).abs() < 1e-15);
        assert!((q[1] - (-p[0] + 0.7)).abs() < 1e-15);
    }

    #[test]
    fn disconnected_graph_components() {
        let recs = vec![RawComparison::new("a", 0, 1, 1.0), RawComparison::new("a", 2, 3, 1.0)];
        let ds = build_dataset(recs, FeatureMatrix::identity(4)).unwrap();
        assert_eq!(ds.item_components(), 2);
        assert_eq!(one_record().item_components(), 1);
    }

    #[test]
    fn identity_scores_are_centered() {
        let ds = one_record();
        let mut s = ModelState::for_dataset(&ds);
        s.eta = vec![2.0, 1.0];
        s.xi = vec![0.5, 0.0];
        let sc = Scores::from_state(&s, ds.features());
        assert_eq!(sc.common, vec![0.5, -0.5]);
        assert_eq!(sc.personalized[0], vec![1.0, -0.5]);
    }
}
