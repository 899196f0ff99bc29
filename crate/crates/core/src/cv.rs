//! K-fold cross-validation over path time, with linear interpolation of the
//! fitted paths at a shared grid of `t` values.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::lbi::{fit_path, resolve_step};
use crate::model::{ComparisonDataset, ComparisonRecord, FeatureMatrix, ModelState, Scores};
use crate::parallel::fit_path_parallel;
use crate::path::RegularizationPath;

pub const DEFAULT_GRID_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ByRecord,
    ByItem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub t_grid: Vec<f64>,
    pub split_mode: SplitMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub t_grid: Vec<f64>,
    /// `errors[fold][j]`: mismatch ratio of fold `fold` at `t_grid[j]`.
    pub errors: Vec<Vec<f64>>,
    pub mean_errors: Vec<f64>,
    pub t_cv: f64,
    pub t_cv_index: usize,
    /// Set when several grid points share the minimal mean error; the
    /// smallest such `t` is chosen.
    pub tie_policy_applied: bool,
}

/// `points` values evenly spaced on `[0, t_max]`.
pub fn uniform_grid(t_max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| t_max * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Fold label of every record: records are shuffled with `seed` and dealt
/// round-robin.
pub fn record_folds(m: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut out = vec![0; m];
    for (pos, k) in shuffled(m, seed).into_iter().enumerate() {
        out[k] = pos % folds;
    }
    out
}

/// Item groups: items shuffled with `seed` and dealt round-robin.
pub fn item_folds(n_items: usize, folds: usize, seed: u64) -> Vec<usize> {
    record_folds(n_items, folds, seed)
}

/// Hold out a random `1 - train_fraction` of the items; every comparison
/// touching a held-out item goes to the test side.
pub fn split_by_item(
    dataset: &ComparisonDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(ComparisonDataset, ComparisonDataset)> {
    let n = dataset.n_items();
    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let mut held_out = vec![true; n];
    for &i in shuffled(n, seed).iter().take(n_train) {
        held_out[i] = false;
    }
    let (test, train): (Vec<usize>, Vec<usize>) = dataset
        .records()
        .iter()
        .enumerate()
        .map(|(k, _)| k)
        .partition(|&k| {
            let r = &dataset.records()[k];
            held_out[r.left] || held_out[r.right]
        });
    if train.is_empty() {
        return Err(Error::EmptyFold(0));
    }
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}

/// `(train, test)` record indices for each fold.
pub fn fold_indices(dataset: &ComparisonDataset, cv: &CvConfig) -> Vec<(Vec<usize>, Vec<usize>)> {
    let records = dataset.records();
    match cv.split_mode {
        SplitMode::ByRecord => {
            let label = record_folds(records.len(), cv.folds, cv.seed);
            (0..cv.folds)
                .map(|f| (0..records.len()).partition(|&k| label[k] != f))
                .collect()
        }
        SplitMode::ByItem => {
            let label = item_folds(dataset.n_items(), cv.folds, cv.seed);
            (0..cv.folds)
                .map(|f| {
                    (0..records.len()).partition(|&k| label[records[k].left] != f && label[records[k].right] != f)
                })
                .collect()
        }
    }
}

fn fit(dataset: &ComparisonDataset, config: &SolverConfig) -> Result<RegularizationPath> {
    if config.threads > 1 {
        fit_path_parallel(dataset, config)
    } else {
        fit_path(dataset, config)
    }
}

/// Fit just far enough to cover `t_last`. Refuses grids needing more than
/// twice the configured iteration budget.
pub fn fit_to_time(dataset: &ComparisonDataset, config: &SolverConfig, t_last: f64) -> Result<RegularizationPath> {
    let alpha = resolve_step(dataset, config)?.alpha;
    let mut needed = ((t_last / alpha).ceil().max(0.0) as usize).max(1);
    if (needed as f64) * alpha < t_last {
        needed += 1;
    }
    if needed > 2 * config.max_iters.max(1) {
        return Err(Error::GridExceedsPath {
            t: t_last,
            t_max: 2.0 * config.max_iters as f64 * alpha,
        });
    }
    let cfg = SolverConfig {
        alpha: Some(alpha),
        max_iters: needed,
        ..config.clone()
    };
    fit(dataset, &cfg)
}

/// State at path time `t` from a fresh fit on `dataset`, interpolated
/// between the two iterates that bracket `t`.
pub fn fit_at(dataset: &ComparisonDataset, config: &SolverConfig, t: f64) -> Result<ModelState> {
    fit_through(dataset, config, t).map(|(_, s)| s)
}

/// [`fit_at`] that also returns the short path it fitted.
pub fn fit_through(dataset: &ComparisonDataset, config: &SolverConfig, t: f64) -> Result<(RegularizationPath, ModelState)> {
    let alpha = resolve_step(dataset, config)?.alpha;
    // recording every floor(t / alpha) iterations keeps the iterate just below t
    let below = (t / alpha).floor() as usize;
    let cfg = SolverConfig {
        alpha: Some(alpha),
        record_every: below.max(1),
        ..config.clone()
    };
    let path = fit_to_time(dataset, &cfg, t)?;
    let state = path.state_at(t)?;
    Ok((path, state))
}

pub fn run_cv(dataset: &ComparisonDataset, solver: &SolverConfig, cv: &CvConfig) -> Result<CvReport> {
    if cv.folds < 2 {
        return Err(Error::InvalidConfig("cross-validation needs at least 2 folds".into()));
    }
    if cv.t_grid.is_empty()
        || cv.t_grid[0] < 0.0
        || cv.t_grid.windows(2).any(|w| !(w[1] > w[0]))
    {
        return Err(Error::InvalidConfig("t grid must be nonempty, nonnegative and strictly increasing".into()));
    }
    let t_last = *cv.t_grid.last().expect("nonempty");
    let mut errors = Vec::with_capacity(cv.folds);
    for (f, (train, test)) in fold_indices(dataset, cv).into_iter().enumerate() {
        if train.is_empty() || test.is_empty() {
            return Err(Error::EmptyFold(f));
        }
        let train_ds = dataset.subset(&train)?;
        let test_records: Vec<ComparisonRecord> = test.iter().map(|&k| dataset.records()[k]).collect();
        let path = fit_to_time(&train_ds, solver, t_last)?;
        let row = cv
            .t_grid
            .iter()
            .map(|&t| {
                let state = path.state_at(t).map_err(|_| Error::GridExceedsPath { t, t_max: path.t_max() })?;
                mismatch_ratio(Predictor::state(&state, dataset.features()), &test_records, true)
            })
            .collect::<Result<Vec<f64>>>()?;
        errors.push(row);
    }
    Ok(summarize(cv.t_grid.clone(), errors))
}

/// Column means and the parsimonious argmin.
pub fn summarize(t_grid: Vec<f64>, errors: Vec<Vec<f64>>) -> CvReport {
    let k = errors.len() as f64;
    let mean_errors: Vec<f64> = (0..t_grid.len())
        .map(|j| errors.iter().map(|row| row[j]).sum::<f64>() / k)
        .collect();
    let best = mean_errors.iter().copied().fold(f64::INFINITY, f64::min);
    let minimizers: Vec<usize> = (0..mean_errors.len()).filter(|&j| mean_errors[j] == best).collect();
    let t_cv_index = minimizers[0];
    CvReport {
        t_cv: t_grid[t_cv_index],
        t_cv_index,
        tie_policy_applied: minimizers.len() > 1,
        t_grid,
        errors,
        mean_errors,
    }
}

/// Something that can score a comparison.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    State {
        state: &'a ModelState,
        features: &'a FeatureMatrix,
    },
    Scores(&'a Scores),
}

impl<'a> Predictor<'a> {
    pub fn state(state: &'a ModelState, features: &'a FeatureMatrix) -> Self {
        Predictor::State { state, features }
    }

    /// Personalized (with bias) when `personalized` is set and the user is
    /// known to the model; the common predictor otherwise.
    pub fn predict(&self, r: &ComparisonRecord, personalized: bool) -> f64 {
        match *self {
            Predictor::State { state, features } => {
                let common = features.row_dot(r.left, &state.eta) - features.row_dot(r.right, &state.eta);
                if personalized && r.user < state.n_users() {
                    let xi = state.xi_of(r.user);
                    common + features.row_dot(r.left, xi) - features.row_dot(r.right, xi) + state.gamma[r.user]
                } else {
                    common
                }
            }
            Predictor::Scores(s) => match s.personalized.get(r.user) {
                Some(p) if personalized => p[r.left] - p[r.right],
                _ => s.common[r.left] - s.common[r.right],
            },
        }
    }
}

/// Fraction of records whose predicted sign disagrees with the observed
/// sign; a zero prediction counts one half.
pub fn mismatch_ratio(predictor: Predictor<'_>, records: &[ComparisonRecord], personalized: bool) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let total: f64 = records
        .iter()
        .map(|r| {
            let s = predictor.predict(r, personalized) * r.outcome;
            if s > 0.0 {
                0.0
            } else if s < 0.0 {
                1.0
            } else {
                0.5
            }
        })
        .sum();
    Ok(total / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_dataset, RawComparison};

    fn small() -> ComparisonDataset {
        let recs = vec![
            RawComparison::new("a", 0, 1, 1.0),
            RawComparison::new("a", 1, 2, 1.0),
            RawComparison::new("b", 2, 0, -1.0),
            RawComparison::new("b", 0, 2, 1.0),
        ];
        build_dataset(recs, FeatureMatrix::identity(3)).unwrap()
    }

    #[test]
    fn mismatch_extremes() {
        let ds = small();
        let mut s = ModelState::for_dataset(&ds);
        let p = Predictor::state(&s, ds.features());
        assert_eq!(mismatch_ratio(p, ds.records(), true).unwrap(), 0.5);
        s.eta = vec![2.0, 1.0, 0.0];
        let p = Predictor::state(&s, ds.features());
        assert_eq!(mismatch_ratio(p, ds.records(), true).unwrap(), 0.0);
        s.eta = vec![-2.0, -1.0, 0.0];
        let p = Predictor::state(&s, ds.features());
        assert_eq!(mismatch_ratio(p, ds.records(), false).unwrap(), 1.0);
        assert!(matches!(mismatch_ratio(p, &[], false), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn unknown_user_falls_back_to_common() {
        let ds = small();
        let mut s = ModelState::for_dataset(&ds);
        s.eta = vec![1.0, 0.0, 0.0];
        let mut r = ds.records()[0];
        r.user = 99;
        let p = Predictor::state(&s, ds.features());
        assert_eq!(p.predict(&r, true), 1.0);
    }

    #[test]
    fn folds_partition_records() {
        let ds = small();
        let cv = CvConfig {
            folds: 2,
            t_grid: vec![0.0],
            split_mode: SplitMode::ByRecord,
            seed: 4,
        };
        let folds = fold_indices(&ds, &cv);
        let mut all: Vec<usize> = folds.iter().flat_map(|(_, test)| test.clone()).collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        for (train, test) in &folds {
            assert_eq!(train.len() + test.len(), 4);
        }
        assert_eq!(record_folds(4, 2, 4), record_folds(4, 2, 4));
    }

    #[test]
    fn ties_pick_smallest_t() {
        let r = summarize(vec![0.0, 1.0, 2.0], vec![vec![0.5, 0.2, 0.2], vec![0.5, 0.3, 0.3]]);
        assert_eq!(r.t_cv, 1.0);
        assert!(r.tie_policy_applied);
        assert_eq!(r.mean_errors, vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn grid_validation() {
        let ds = small();
        let solver = SolverConfig::new(crate::losses::LossFamily::Linear);
        let cv = CvConfig {
            folds: 2,
            t_grid: vec![1.0, 1.0],
            split_mode: SplitMode::ByRecord,
            seed: 0,
        };
        assert!(matches!(run_cv(&ds, &solver, &cv), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn uniform_grid_endpoints() {
        let g = uniform_grid(2.0, 5);
        assert_eq!(g, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(uniform_grid(3.0, 1), vec![0.0]);
    }
}
