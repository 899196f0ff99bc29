//! Synchronized parallel LBI.
//!
//! Users are split into `P` shards. Every iteration each worker runs the
//! gradient pass, dual update and shrinkage for its own users and publishes
//! its share of `Phi^T d^T g`. After the first barrier, worker `i` reduces
//! the `P` accumulators for its block `J_i` of coefficient indices and
//! updates `eta` there. A second barrier publishes the new `eta`.
//!
//! Accumulators are reduced in a fixed binary-tree order, so a given shard
//! plan always produces the same bits. With one thread the arithmetic is
//! identical to [`fit_path`](crate::lbi::fit_path).

use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Barrier;
use std::time::Instant;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::lbi::{push_events, should_record, user_step, Kernel, UserBlocks};
use crate::model::{ComparisonDataset, ModelState};
use crate::path::{PathPoint, RegularizationPath, SupportEvent};

/// Partition of users (the data) and of coefficient indices across workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardPlan {
    pub user_shards: Vec<Vec<usize>>,
    pub eta_shards: Vec<Range<usize>>,
}

impl ShardPlan {
    /// Greedy record-count balancing: users in decreasing order of record
    /// count go to the currently lightest shard. Users inside a shard are
    /// kept in increasing index order.
    pub fn balanced(dataset: &ComparisonDataset, threads: usize) -> Self {
        let p = threads.max(1);
        let mut order: Vec<usize> = (0..dataset.n_users()).collect();
        order.sort_by_key(|&u| (std::cmp::Reverse(dataset.user_records(u).len()), u));
        let mut loads = vec![0usize; p];
        let mut user_shards = vec![Vec::new(); p];
        for u in order {
            let (i, _) = loads
                .iter()
                .enumerate()
                .min_by_key(|&(i, &l)| (l, i))
                .expect("at least one shard");
            loads[i] += dataset.user_records(u).len();
            user_shards[i].push(u);
        }
        for s in &mut user_shards {
            s.sort_unstable();
        }
        Self {
            user_shards,
            eta_shards: split_range(dataset.dim(), p),
        }
    }

    pub fn threads(&self) -> usize {
        self.user_shards.len()
    }

    pub fn record_loads(&self, dataset: &ComparisonDataset) -> Vec<usize> {
        self.user_shards
            .iter()
            .map(|s| s.iter().map(|&u| dataset.user_records(u).len()).sum())
            .collect()
    }

    /// Checks that both partitions are disjoint and exhaustive.
    pub fn validate(&self, n_users: usize, dim: usize) -> Result<()> {
        if self.user_shards.len() != self.eta_shards.len() || self.user_shards.is_empty() {
            return Err(Error::InvalidConfig("shard plan has mismatched shard counts".into()));
        }
        let mut owner = vec![usize::MAX; n_users];
        for (i, shard) in self.user_shards.iter().enumerate() {
            for &u in shard {
                if u >= n_users || owner[u] != usize::MAX {
                    return Err(Error::InvalidConfig(format!("user {u} assigned twice or out of range")));
                }
                owner[u] = i;
            }
        }
        if owner.contains(&usize::MAX) {
            return Err(Error::InvalidConfig("shard plan misses a user".into()));
        }
        let mut next = 0;
        for r in &self.eta_shards {
            if r.start != next {
                return Err(Error::InvalidConfig("coefficient blocks are not contiguous".into()));
            }
            next = r.end;
        }
        if next != dim {
            return Err(Error::InvalidConfig("coefficient blocks do not cover eta".into()));
        }
        Ok(())
    }
}

/// `0..n` cut into `p` contiguous blocks whose sizes differ by at most one.
pub fn split_range(n: usize, p: usize) -> Vec<Range<usize>> {
    let (q, r) = (n / p, n % p);
    let mut start = 0;
    (0..p)
        .map(|i| {
            let len = q + usize::from(i < r);
            let range = start..start + len;
            start += len;
            range
        })
        .collect()
}

/// Synchronization counters collected during a parallel run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParallelStats {
    pub threads: usize,
    pub iterations: usize,
    pub barrier_waits: usize,
    /// Times a worker entered the `eta` phase before every shard had
    /// published its accumulator, or started an iteration before every
    /// block of `eta` was updated. Always zero for a correct schedule.
    pub phase_violations: usize,
}

pub fn fit_path_parallel(dataset: &ComparisonDataset, config: &SolverConfig) -> Result<RegularizationPath> {
    let plan = ShardPlan::balanced(dataset, config.threads);
    fit_path_with_plan(dataset, config, &plan).map(|(p, _)| p)
}

struct LocalSnapshot {
    k: usize,
    xi: Vec<f64>,
    gamma: Vec<f64>,
    z_xi: Vec<f64>,
    z_gamma: Vec<f64>,
}

struct WorkerOutput {
    snapshots: Vec<LocalSnapshot>,
    eta_snapshots: Vec<Vec<f64>>,
    events: Vec<SupportEvent>,
}

fn load(v: &[AtomicU64], out: &mut [f64]) {
    for (o, a) in out.iter_mut().zip(v) {
        *o = f64::from_bits(a.load(Ordering::Relaxed));
    }
}

/// Sum of `parts[lo..hi][j]` in a fixed binary-tree order.
fn tree_sum(parts: &[Vec<AtomicU64>], j: usize) -> f64 {
    match parts.len() {
        0 => 0.0,
        1 => f64::from_bits(parts[0][j].load(Ordering::Relaxed)),
        n => {
            let mid = n / 2;
            tree_sum(&parts[..mid], j) + tree_sum(&parts[mid..], j)
        }
    }
}

/// Parallel run with an explicit shard plan, returning barrier statistics.
pub fn fit_path_with_plan(
    dataset: &ComparisonDataset,
    config: &SolverConfig,
    plan: &ShardPlan,
) -> Result<(RegularizationPath, ParallelStats)> {
    let (kernel, step) = Kernel::prepare(dataset, config)?;
    plan.validate(dataset.n_users(), dataset.dim())?;
    let p = plan.threads();
    let d = dataset.dim();
    let max_iters = config.max_iters;
    let record_every = config.record_every;

    let eta: Vec<AtomicU64> = (0..d).map(|_| AtomicU64::new(0f64.to_bits())).collect();
    let updates: Vec<Vec<AtomicU64>> = (0..p)
        .map(|_| (0..d).map(|_| AtomicU64::new(0)).collect())
        .collect();
    let changed: Vec<AtomicBool> = (0..p).map(|_| AtomicBool::new(false)).collect();
    let barrier = Barrier::new(p);
    let accumulated = AtomicUsize::new(0);
    let eta_updated = AtomicUsize::new(0);
    let barrier_waits = AtomicUsize::new(0);
    let violations = AtomicUsize::new(0);

    let worker = |i: usize| -> WorkerOutput {
        let users = &plan.user_shards[i];
        let n_local = users.len();
        let mut xi = vec![0.0; n_local * d];
        let mut z_xi = vec![0.0; n_local * d];
        let mut gamma = vec![0.0; n_local];
        let mut z_gamma = vec![0.0; n_local];
        let mut active = vec![(false, false); n_local];
        let mut eta_local = vec![0.0; d];
        let mut w = vec![0.0; d];
        let mut acc = vec![0.0; d];
        let mut update = vec![0.0; d];
        let mut out = WorkerOutput {
            snapshots: Vec::new(),
            eta_snapshots: Vec::new(),
            events: Vec::new(),
        };
        let snapshot = |k: usize, xi: &[f64], gamma: &[f64], z_xi: &[f64], z_gamma: &[f64]| LocalSnapshot {
            k,
            xi: xi.to_vec(),
            gamma: gamma.to_vec(),
            z_xi: z_xi.to_vec(),
            z_gamma: z_gamma.to_vec(),
        };
        out.snapshots.push(snapshot(0, &xi, &gamma, &z_xi, &z_gamma));
        if i == 0 {
            out.eta_snapshots.push(vec![0.0; d]);
        }

        for k in 1..=max_iters {
            if eta_updated.load(Ordering::SeqCst) != p * (k - 1) {
                violations.fetch_add(1, Ordering::Relaxed);
            }
            let t = kernel.time(k);
            load(&eta, &mut eta_local);
            update.fill(0.0);
            let mut any_local = false;
            for (slot, &u) in users.iter().enumerate() {
                let blocks = UserBlocks {
                    xi: &mut xi[slot * d..(slot + 1) * d],
                    gamma: &mut gamma[slot],
                    z_xi: &mut z_xi[slot * d..(slot + 1) * d],
                    z_gamma: &mut z_gamma[slot],
                };
                let now = user_step(dataset, &kernel, u, &eta_local, blocks, &mut w, &mut acc);
                if now != active[slot] {
                    push_events(&mut out.events, k, t, u, active[slot], now);
                    active[slot] = now;
                    any_local = true;
                }
                for (g, a) in update.iter_mut().zip(&acc) {
                    *g += a;
                }
            }
            for (slot, v) in updates[i].iter().zip(&update) {
                slot.store(v.to_bits(), Ordering::Relaxed);
            }
            changed[i].store(any_local, Ordering::Relaxed);
            accumulated.fetch_add(1, Ordering::SeqCst);

            barrier.wait();
            barrier_waits.fetch_add(1, Ordering::Relaxed);

            if accumulated.load(Ordering::SeqCst) != p * k {
                violations.fetch_add(1, Ordering::Relaxed);
            }
            let any_changed = changed.iter().any(|c| c.load(Ordering::Relaxed));
            for j in plan.eta_shards[i].clone() {
                let sum = tree_sum(&updates, j);
                let new = eta_local[j] - kernel.primal_step * sum;
                eta[j].store(new.to_bits(), Ordering::Relaxed);
            }
            eta_updated.fetch_add(1, Ordering::SeqCst);

            barrier.wait();
            barrier_waits.fetch_add(1, Ordering::Relaxed);

            if should_record(k, max_iters, record_every, any_changed) {
                out.snapshots.push(snapshot(k, &xi, &gamma, &z_xi, &z_gamma));
                if i == 0 {
                    let mut e = vec![0.0; d];
                    load(&eta, &mut e);
                    out.eta_snapshots.push(e);
                }
            }
        }
        out
    };

    let outputs: Vec<WorkerOutput> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..p).map(|i| scope.spawn(move || worker(i))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });

    let n_points = outputs[0].snapshots.len();
    let mut points = Vec::with_capacity(n_points);
    for s in 0..n_points {
        let k = outputs[0].snapshots[s].k;
        let mut state = ModelState::for_dataset(dataset);
        state.t = kernel.time(k);
        state.eta.clone_from(&outputs[0].eta_snapshots[s]);
        for (shard, out) in plan.user_shards.iter().zip(&outputs) {
            let snap = &out.snapshots[s];
            debug_assert_eq!(snap.k, k);
            for (slot, &u) in shard.iter().enumerate() {
                state.xi[u * d..(u + 1) * d].copy_from_slice(&snap.xi[slot * d..(slot + 1) * d]);
                state.z_xi[u * d..(u + 1) * d].copy_from_slice(&snap.z_xi[slot * d..(slot + 1) * d]);
                state.gamma[u] = snap.gamma[slot];
                state.z_gamma[u] = snap.z_gamma[slot];
            }
        }
        points.push(PathPoint { k, state });
    }
    let mut events: Vec<SupportEvent> = outputs.into_iter().flat_map(|o| o.events).collect();
    events.sort_by_key(|e| (e.k, e.block));

    let stats = ParallelStats {
        threads: p,
        iterations: max_iters,
        barrier_waits: barrier_waits.into_inner(),
        phase_violations: violations.into_inner(),
    };
    let path = RegularizationPath {
        config: config.clone(),
        mode: kernel.mode,
        alpha: step.alpha,
        spectral_norm: step.spectral_norm,
        points,
        events,
    };
    Ok((path, stats))
}

/// One row of a speedup table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub threads: usize,
    pub mean_secs: f64,
    pub speedup: f64,
}

/// Mean wall time of `repeats` parallel fits per thread count, and the
/// speedup `T(first) / T(M)` relative to the first entry of `threads_list`
/// (pass `1` first for the usual `T(1)/T(M)`).
pub fn bench(
    dataset: &ComparisonDataset,
    config: &SolverConfig,
    threads_list: &[usize],
    repeats: usize,
) -> Result<Vec<BenchRow>> {
    let repeats = repeats.max(1);
    let mut rows: Vec<BenchRow> = Vec::with_capacity(threads_list.len());
    for &threads in threads_list {
        let cfg = SolverConfig {
            threads,
            ..config.clone()
        };
        let plan = ShardPlan::balanced(dataset, threads);
        let mut total = 0.0;
        for _ in 0..repeats {
            let start = Instant::now();
            fit_path_with_plan(dataset, &cfg, &plan)?;
            total += start.elapsed().as_secs_f64();
        }
        let mean_secs = total / repeats as f64;
        let base = rows.first().map_or(mean_secs, |r| r.mean_secs);
        rows.push(BenchRow {
            threads,
            mean_secs,
            speedup: base / mean_secs,
        });
    }
    Ok(rows)
}
