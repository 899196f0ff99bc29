//! Serial Linearized Bregman Iteration for the mixed-effects model.
//!
//! Each iteration takes one gradient step on the unpenalized common
//! coefficient, one gradient step on the dual blocks `z`, and recovers the
//! sparse personalized blocks by shrinking `z`:
//!
//! ```text
//! pred   = d Phi eta + X beta
//! g      = residual(y, pred)
//! eta   -= (alpha kappa / m) Phi^T d^T g
//! z     -= (alpha / m) X^T g
//! beta   = kappa * shrink(z)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::losses::LossFamily;
use crate::model::{dot, user_coefficients, ComparisonDataset, ModelState, Scores};
use crate::path::{Block, Direction, PathPoint, RegularizationPath, SupportEvent};
use crate::penalty::{norm2, shrink_block, shrink_scalar, PenaltyMode};

const POWER_ITER_CAP: usize = 10_000;

/// `||d Phi Phi^T d^T + X X^T||_2` by power iteration on the implicit
/// `m x m` operator, started from a seeded random unit vector.
pub fn spectral_norm(dataset: &ComparisonDataset, tol: f64, seed: u64) -> Result<f64> {
    let m = dataset.n_records();
    let d = dataset.dim();
    let n_users = dataset.n_users();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);

    let mut a_eta = vec![0.0; d];
    let mut b_xi = vec![0.0; n_users * d];
    let mut b_gamma = vec![0.0; n_users];
    let mut w = vec![0.0; m];
    let mut lambda_prev = f64::NAN;
    for _ in 0..POWER_ITER_CAP {
        // B^T v with B = [d Phi, X]
        a_eta.fill(0.0);
        b_xi.fill(0.0);
        b_gamma.fill(0.0);
        for u in 0..n_users {
            let bx = &mut b_xi[u * d..(u + 1) * d];
            for &k in dataset.user_records(u) {
                dataset.diff_axpy(k, v[k], bx);
                b_gamma[u] += v[k];
            }
            for (a, b) in a_eta.iter_mut().zip(bx.iter()) {
                *a += b;
            }
        }
        // B (B^T v)
        for u in 0..n_users {
            let bx = &b_xi[u * d..(u + 1) * d];
            for &k in dataset.user_records(u) {
                w[k] = dataset.diff_dot(k, &a_eta) + dataset.diff_dot(k, bx) + b_gamma[u];
            }
        }
        let lambda = dot(&v, &w);
        let norm_w = norm2(&w);
        if norm_w == 0.0 {
            return Ok(0.0);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm_w;
        }
        if (lambda - lambda_prev).abs() <= 1e-2 * tol * lambda {
            return Ok(lambda);
        }
        lambda_prev = lambda;
    }
    Err(Error::NoConvergence {
        what: "spectral norm power iteration",
        iters: POWER_ITER_CAP,
    })
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else if let Some(x) = v.first_mut() {
        *x = 1.0;
    }
}

/// Step size actually used by a run, with the operator norm that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedStep {
    pub alpha: f64,
    pub spectral_norm: f64,
    /// `alpha * kappa * norm / m`; must stay below 2.
    pub stability_ratio: f64,
}

pub fn resolve_step(dataset: &ComparisonDataset, config: &SolverConfig) -> Result<ResolvedStep> {
    config.validate()?;
    let m = dataset.n_records() as f64;
    let norm = spectral_norm(dataset, config.tol_spectral, config.seed)?;
    if norm == 0.0 {
        return Err(Error::InvalidConfig("design operator is identically zero".into()));
    }
    let alpha = config.alpha.unwrap_or(m / (config.kappa * norm));
    let ratio = alpha * config.kappa * norm / m;
    if ratio >= 2.0 {
        return Err(Error::StepSizeTooLarge { alpha, ratio });
    }
    Ok(ResolvedStep {
        alpha,
        spectral_norm: norm,
        stability_ratio: ratio,
    })
}

/// Everything an iteration needs that does not change between iterations.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kernel {
    pub family: LossFamily,
    pub mode: PenaltyMode,
    pub kappa: f64,
    pub alpha: f64,
    /// `alpha / m`
    pub dual_step: f64,
    /// `alpha * kappa / m`
    pub primal_step: f64,
}

impl Kernel {
    pub(crate) fn prepare(dataset: &ComparisonDataset, config: &SolverConfig) -> Result<(Self, ResolvedStep)> {
        config.validate()?;
        if config.family.requires_binary() {
            dataset.require_binary()?;
        }
        let mode = config.resolved_mode(dataset)?;
        let step = resolve_step(dataset, config)?;
        let m = dataset.n_records() as f64;
        let kernel = Kernel {
            family: config.family,
            mode,
            kappa: config.kappa,
            alpha: step.alpha,
            dual_step: step.alpha / m,
            primal_step: step.alpha * config.kappa / m,
        };
        Ok((kernel, step))
    }

    pub(crate) fn time(&self, k: usize) -> f64 {
        k as f64 * self.alpha
    }
}

/// Per-user mutable blocks handed to [`user_step`].
pub(crate) struct UserBlocks<'a> {
    pub xi: &'a mut [f64],
    pub gamma: &'a mut f64,
    pub z_xi: &'a mut [f64],
    pub z_gamma: &'a mut f64,
}

/// Gradient pass over user `u`'s records at the current `(eta, xi_u, gamma_u)`,
/// dual update and shrinkage of the user's blocks. Leaves
/// `Phi^T (d^u)^T (w .* g)` in `acc` and returns the new nonzero status of
/// `(xi_u, gamma_u)`.
#[inline]
pub(crate) fn user_step(
    dataset: &ComparisonDataset,
    kernel: &Kernel,
    u: usize,
    eta: &[f64],
    blocks: UserBlocks<'_>,
    w: &mut [f64],
    acc: &mut [f64],
) -> (bool, bool) {
    let records = dataset.records();
    user_coefficients(eta, blocks.xi, w);
    let gamma_u = *blocks.gamma;
    acc.fill(0.0);
    let mut acc_gamma = 0.0;
    for &k in dataset.user_records(u) {
        let r = &records[k];
        let pred = dataset.diff_dot(k, w) + gamma_u;
        let g = r.weight * kernel.family.residual(r.outcome, pred);
        dataset.diff_axpy(k, g, acc);
        acc_gamma += g;
    }
    for (z, a) in blocks.z_xi.iter_mut().zip(acc.iter()) {
        *z -= kernel.dual_step * a;
    }
    *blocks.z_gamma -= kernel.dual_step * acc_gamma;
    let xi_on = shrink_block(kernel.mode, kernel.kappa, blocks.z_xi, blocks.xi);
    *blocks.gamma = shrink_scalar(kernel.kappa, *blocks.z_gamma);
    (xi_on, *blocks.gamma != 0.0)
}

#[inline]
pub(crate) fn should_record(k: usize, max_iters: usize, record_every: usize, changed: bool) -> bool {
    changed || k.is_multiple_of(record_every) || k == max_iters
}

pub(crate) fn push_events(
    events: &mut Vec<SupportEvent>,
    k: usize,
    t: f64,
    u: usize,
    before: (bool, bool),
    after: (bool, bool),
) {
    let dir = |on: bool| if on { Direction::Entered } else { Direction::Left };
    if before.0 != after.0 {
        events.push(SupportEvent {
            k,
            t,
            block: Block::Deviation(u),
            direction: dir(after.0),
        });
    }
    if before.1 != after.1 {
        events.push(SupportEvent {
            k,
            t,
            block: Block::Bias(u),
            direction: dir(after.1),
        });
    }
}

/// Run `config.max_iters` iterations from the zero state and record the path.
pub fn fit_path(dataset: &ComparisonDataset, config: &SolverConfig) -> Result<RegularizationPath> {
    fit_path_observed(dataset, config, &mut |_, _| {})
}

/// [`fit_path`] that also hands every iterate `(k, state)` to `observer`,
/// including `k = 0`.
pub fn fit_path_observed(
    dataset: &ComparisonDataset,
    config: &SolverConfig,
    observer: &mut dyn FnMut(usize, &ModelState),
) -> Result<RegularizationPath> {
    let (kernel, step) = Kernel::prepare(dataset, config)?;
    let d = dataset.dim();
    let n_users = dataset.n_users();
    let max_iters = config.max_iters;

    let mut state = ModelState::for_dataset(dataset);
    let mut active = vec![(false, false); n_users];
    let mut points = vec![PathPoint {
        k: 0,
        state: state.clone(),
    }];
    let mut events = Vec::new();
    observer(0, &state);

    let mut w = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut grad_eta = vec![0.0; d];
    for k in 1..=max_iters {
        let t = kernel.time(k);
        grad_eta.fill(0.0);
        let mut changed = false;
        {
            let ModelState {
                eta,
                xi,
                gamma,
                z_xi,
                z_gamma,
                ..
            } = &mut state;
            let chunks = xi
                .chunks_mut(d.max(1))
                .zip(z_xi.chunks_mut(d.max(1)))
                .zip(gamma.iter_mut().zip(z_gamma.iter_mut()));
            for (u, ((xi_u, z_xi_u), (gamma_u, z_gamma_u))) in chunks.enumerate() {
                let blocks = UserBlocks {
                    xi: xi_u,
                    gamma: gamma_u,
                    z_xi: z_xi_u,
                    z_gamma: z_gamma_u,
                };
                let now = user_step(dataset, &kernel, u, eta, blocks, &mut w, &mut acc);
                if now != active[u] {
                    push_events(&mut events, k, t, u, active[u], now);
                    active[u] = now;
                    changed = true;
                }
                for (g, a) in grad_eta.iter_mut().zip(&acc) {
                    *g += a;
                }
            }
            for (e, g) in eta.iter_mut().zip(&grad_eta) {
                *e -= kernel.primal_step * g;
            }
        }
        state.t = t;
        observer(k, &state);
        if should_record(k, max_iters, config.record_every, changed) {
            points.push(PathPoint {
                k,
                state: state.clone(),
            });
        }
    }
    events.sort_by_key(|e| (e.k, e.block));
    Ok(RegularizationPath {
        config: config.clone(),
        mode: kernel.mode,
        alpha: step.alpha,
        spectral_norm: step.spectral_norm,
        points,
        events,
    })
}

pub const BASELINE_GRAD_TOL: f64 = 1e-8;
const BASELINE_ITER_CAP: usize = 2_000_000;

/// Gradient descent on the common coefficient alone (`xi = 0`, `gamma = 0`)
/// until the gradient norm drops to `grad_tol`.
pub fn fit_common(dataset: &ComparisonDataset, family: LossFamily, grad_tol: f64) -> Result<ModelState> {
    if family.requires_binary() {
        dataset.require_binary()?;
    }
    let m = dataset.n_records() as f64;
    let d = dataset.dim();
    let records = dataset.records();
    let lipschitz = family.curvature_bound() * common_gram_norm(dataset)? / m;
    let mut state = ModelState::for_dataset(dataset);
    if lipschitz == 0.0 {
        return Ok(state);
    }
    let step = 1.0 / lipschitz;
    let mut grad = vec![0.0; d];
    for _ in 0..BASELINE_ITER_CAP {
        grad.fill(0.0);
        for (k, r) in records.iter().enumerate() {
            let pred = dataset.diff_dot(k, &state.eta);
            let g = r.weight * family.residual(r.outcome, pred) / m;
            dataset.diff_axpy(k, g, &mut grad);
        }
        if norm2(&grad) <= grad_tol {
            return Ok(state);
        }
        for (e, g) in state.eta.iter_mut().zip(&grad) {
            *e -= step * g;
        }
    }
    Err(Error::NoConvergence {
        what: "common-only gradient descent",
        iters: BASELINE_ITER_CAP,
    })
}

/// HodgeRank-style common ranking: the model with every personalized block
/// frozen at zero, fitted to convergence.
pub fn hodgerank_baseline(dataset: &ComparisonDataset, family: LossFamily) -> Result<Scores> {
    let state = fit_common(dataset, family, BASELINE_GRAD_TOL)?;
    Ok(Scores::from_state(&state, dataset.features()))
}

/// Largest eigenvalue of `Phi^T d^T W d Phi` (weighted), by power iteration
/// in coefficient space.
fn common_gram_norm(dataset: &ComparisonDataset) -> Result<f64> {
    let d = dataset.dim();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    // break symmetry with the constant vector (null direction for identity features)
    for (i, x) in v.iter_mut().enumerate() {
        *x *= 1.0 + 0.1 * ((i * 7919) % 13) as f64;
    }
    normalize(&mut v);
    let mut w = vec![0.0; d];
    let mut prev = f64::NAN;
    for _ in 0..POWER_ITER_CAP {
        w.fill(0.0);
        for (k, r) in dataset.records().iter().enumerate() {
            let s = dataset.diff_dot(k, &v);
            dataset.diff_axpy(k, r.weight * s, &mut w);
        }
        let lambda = dot(&v, &w);
        let n = norm2(&w);
        if n == 0.0 {
            return Ok(0.0);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / n;
        }
        if (lambda - prev).abs() <= 1e-8 * lambda {
            // Rayleigh quotient sits below the top eigenvalue; pad it
            return Ok(lambda * 1.01);
        }
        prev = lambda;
    }
    Err(Error::NoConvergence {
        what: "common Gram power iteration",
        iters: POWER_ITER_CAP,
    })
}
