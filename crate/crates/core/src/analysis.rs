//! Post-hoc reports on fitted paths: which annotators deviate first, who
//! shows position bias, and how personalized rankings differ from the
//! common one.

use std::cmp::Ordering;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{ComparisonDataset, ModelState, Scores};
use crate::path::RegularizationPath;

fn entry_order(entries: &[Option<f64>]) -> Vec<usize> {
    let mut users: Vec<usize> = (0..entries.len()).collect();
    users.sort_by(|&a, &b| match (entries[a], entries[b]) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.cmp(&b)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(&b),
    });
    users
}

/// Users ordered by the first time their deviation block becomes nonzero;
/// users that never deviate come last, ties broken by user index.
pub fn deviation_ranking(path: &RegularizationPath) -> Vec<usize> {
    let n_users = path.first().n_users();
    entry_order(&path.first_entry(n_users, false))
}

/// Same ordering for the position-bias blocks.
pub fn bias_ranking(path: &RegularizationPath) -> Vec<usize> {
    let n_users = path.first().n_users();
    entry_order(&path.first_entry(n_users, true))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub user: usize,
    pub gamma: f64,
    /// Records where the left item was chosen.
    pub left: usize,
    pub right: usize,
    pub first_entry: Option<f64>,
}

/// Per-user bias estimates with left/right click counts. Rows are ordered by
/// first bias entry time on `path` when given, otherwise by `|gamma|`
/// (descending); remaining ties go to `|gamma|` and then the user index.
pub fn bias_report(state: &ModelState, dataset: &ComparisonDataset, path: Option<&RegularizationPath>) -> Vec<BiasRow> {
    let n = dataset.n_users();
    let entries = path.map_or_else(|| vec![None; n], |p| p.first_entry(n, true));
    let mut rows: Vec<BiasRow> = (0..n)
        .map(|u| {
            let recs = dataset.user_records(u);
            let left = recs.iter().filter(|&&k| dataset.records()[k].outcome > 0.0).count();
            let right = recs.iter().filter(|&&k| dataset.records()[k].outcome < 0.0).count();
            BiasRow {
                user: u,
                gamma: state.gamma.get(u).copied().unwrap_or(0.0),
                left,
                right,
                first_entry: entries[u],
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let by_entry = match (a.first_entry, b.first_entry) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_entry
            .then(b.gamma.abs().total_cmp(&a.gamma.abs()))
            .then(a.user.cmp(&b.user))
    });
    rows
}

/// Dense ranks (1 = highest score, ties share the smaller rank).
pub fn dense_ranks(scores: &[f64]) -> Vec<usize> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    scores
        .iter()
        .map(|s| 1 + distinct.partition_point(|d| d > s))
        .collect()
}

/// Rank rows: the common ranking first, then one row per requested user.
pub fn rank_compare(scores: &Scores, users: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut rows = vec![dense_ranks(&scores.common)];
    for &u in users {
        let p = scores
            .personalized
            .get(u)
            .ok_or_else(|| Error::DimensionMismatch(format!("no personalized scores for user {u}")))?;
        rows.push(dense_ranks(p));
    }
    Ok(rows)
}

fn opt(t: Option<f64>) -> String {
    t.map_or_else(String::new, |t| t.to_string())
}

pub fn write_deviation_ranking<W: Write>(path: &RegularizationPath, dataset: &ComparisonDataset, mut w: W) -> Result<()> {
    let entries = path.first_entry(dataset.n_users(), false);
    let io = |e| Error::io("<writer>", e);
    writeln!(w, "rank,user,first_entry_t").map_err(io)?;
    for (rank, u) in deviation_ranking(path).into_iter().enumerate() {
        writeln!(w, "{},{},{}", rank + 1, dataset.user_ids()[u], opt(entries[u])).map_err(io)?;
    }
    Ok(())
}

pub fn write_bias_report<W: Write>(rows: &[BiasRow], dataset: &ComparisonDataset, mut w: W) -> Result<()> {
    let io = |e| Error::io("<writer>", e);
    writeln!(w, "user,gamma,left,right,first_entry_t").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            dataset.user_ids()[r.user],
            r.gamma,
            r.left,
            r.right,
            opt(r.first_entry)
        )
        .map_err(io)?;
    }
    Ok(())
}

/// `row,<item ids...>` with `common` for the first row.
pub fn write_rank_compare<W: Write>(
    rows: &[Vec<usize>],
    users: &[usize],
    dataset: &ComparisonDataset,
    mut w: W,
) -> Result<()> {
    let io = |e| Error::io("<writer>", e);
    writeln!(w, "row,{}", dataset.item_ids().join(",")).map_err(io)?;
    let labels = std::iter::once("common".to_string()).chain(users.iter().map(|&u| dataset.user_ids()[u].clone()));
    for (label, row) in labels.zip(rows) {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(w, "{label},{}", cells.join(",")).map_err(io)?;
    }
    Ok(())
}
