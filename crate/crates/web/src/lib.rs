//! WebAssembly bindings for the browser demo in `www/`. Every export returns
//! a JSON string so the page can plot it without extra glue.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::Serialize;
use wasm_bindgen::prelude::*;

use parsirank::cv::{mismatch_ratio, split_by_item, Predictor};
use parsirank::penalty::shrink_scalar;
use parsirank::simulation::{generate, SimConfig};
use parsirank::{fit_common, fit_path, Block, Direction, LossFamily, SolverConfig};

#[derive(Serialize)]
struct EventOut {
    t: f64,
    user: String,
    block: &'static str,
    entered: bool,
}

#[derive(Serialize)]
struct PathOut {
    alpha: f64,
    spectral_norm: f64,
    n_train: usize,
    n_test: usize,
    t: Vec<f64>,
    test_error: Vec<f64>,
    baseline_error: f64,
    deviations: Vec<usize>,
    biases: Vec<usize>,
    /// `eta[j][s]`: coefficient `j` at snapshot `s`.
    eta: Vec<Vec<f64>>,
    /// `gamma[u][s]`.
    gamma: Vec<Vec<f64>>,
    events: Vec<EventOut>,
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Simulate a crowd of `users` annotators, hold out a quarter of the items,
/// fit a path on the rest and report held-out mismatch along it.
#[wasm_bindgen]
pub fn fit_demo(seed: u32, users: u32, kappa: f64, iters: u32, loss: &str) -> Result<String, String> {
    let family: LossFamily = loss.parse().map_err(|e: parsirank::Error| e.to_string())?;
    let sim = SimConfig {
        n_users: users as usize,
        ..SimConfig::with_seed(seed as u64)
    };
    let (ds, _) = generate(&sim).map_err(|e| e.to_string())?;
    let (train, test) = split_by_item(&ds, 0.75, seed as u64).map_err(|e| e.to_string())?;
    let iters = iters.max(1) as usize;
    let cfg = SolverConfig {
        kappa,
        max_iters: iters,
        record_every: (iters / 100).max(1),
        ..SolverConfig::new(family)
    };
    let path = fit_path(&train, &cfg).map_err(|e| e.to_string())?;
    let base = fit_common(&train, LossFamily::Linear, parsirank::lbi::BASELINE_GRAD_TOL).map_err(|e| e.to_string())?;
    let baseline_error =
        mismatch_ratio(Predictor::state(&base, ds.features()), test.records(), false).map_err(|e| e.to_string())?;

    let points: Vec<_> = path
        .points
        .iter()
        .filter(|p| p.k % cfg.record_every == 0 || p.k == iters)
        .collect();
    let mut out = PathOut {
        alpha: path.alpha,
        spectral_norm: path.spectral_norm,
        n_train: train.n_records(),
        n_test: test.n_records(),
        t: Vec::with_capacity(points.len()),
        test_error: Vec::with_capacity(points.len()),
        baseline_error,
        deviations: Vec::new(),
        biases: Vec::new(),
        eta: vec![Vec::new(); train.dim()],
        gamma: vec![Vec::new(); train.n_users()],
        events: Vec::new(),
    };
    for p in points {
        let s = &p.state;
        out.t.push(s.t);
        out.test_error.push(
            mismatch_ratio(Predictor::state(s, ds.features()), test.records(), true).map_err(|e| e.to_string())?,
        );
        out.deviations
            .push((0..s.n_users()).filter(|&u| s.xi_of(u).iter().any(|x| *x != 0.0)).count());
        out.biases.push(s.gamma.iter().filter(|g| **g != 0.0).count());
        for (j, v) in s.eta.iter().enumerate() {
            out.eta[j].push(*v);
        }
        for (u, g) in s.gamma.iter().enumerate() {
            out.gamma[u].push(*g);
        }
    }
    out.events = path
        .events
        .iter()
        .map(|e| EventOut {
            t: e.t,
            user: train.user_ids()[e.block.user()].clone(),
            block: match e.block {
                Block::Deviation(_) => "deviation",
                Block::Bias(_) => "bias",
            },
            entered: e.direction == Direction::Entered,
        })
        .collect();
    to_json(&out)
}

#[derive(Serialize)]
struct Curve {
    z: Vec<f64>,
    value: Vec<f64>,
}

/// `kappa * max(0, 1 - 1/|z|) * z` sampled on `[lo, hi]`.
#[wasm_bindgen]
pub fn shrink_curve(kappa: f64, lo: f64, hi: f64, points: u32) -> Result<String, String> {
    if !(kappa > 0.0) || !(hi > lo) || points < 2 {
        return Err("need kappa > 0, hi > lo and at least 2 points".into());
    }
    let n = points as usize;
    let z: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let value = z.iter().map(|&x| shrink_scalar(kappa, x)).collect();
    to_json(&Curve { z, value })
}

#[derive(Serialize)]
struct FamilyCurve {
    name: &'static str,
    loss: Vec<f64>,
    residual: Vec<f64>,
}

#[derive(Serialize)]
struct LossCurves {
    pred: Vec<f64>,
    families: Vec<FamilyCurve>,
}

/// Per-record loss and residual of every family for a `y = +1` outcome.
#[wasm_bindgen]
pub fn loss_curves(lo: f64, hi: f64, points: u32) -> Result<String, String> {
    if !(hi > lo) || points < 2 {
        return Err("need hi > lo and at least 2 points".into());
    }
    let n = points as usize;
    let pred: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let families = LossFamily::ALL
        .iter()
        .map(|&f| FamilyCurve {
            name: f.name(),
            loss: pred.iter().map(|&p| f.record_loss(1.0, p)).collect(),
            residual: pred.iter().map(|&p| f.residual(1.0, p)).collect(),
        })
        .collect();
    to_json(&LossCurves { pred, families })
}
