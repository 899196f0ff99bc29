#![allow(dead_code)]

use parsirank::losses::loss_value;
use parsirank::{build_dataset, predict_linear, ComparisonDataset, FeatureMatrix, LossFamily, ModelState, RawComparison};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Minimize a convex `f` over `R^d` by a coarse grid on a box, then local
/// grids of shrinking spacing around the incumbent.
pub fn grid_minimize(f: &dyn Fn(&[f64]) -> f64, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let coarse = 40usize;
    let mut best = center.to_vec();
    let mut best_val = f(&best);
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    // coarse grid; includes the origin whenever it lies in the box at a node
    loop {
        for i in 0..d {
            x[i] = center[i] - radius + 2.0 * radius * idx[i] as f64 / coarse as f64;
        }
        let v = f(&x);
        if v < best_val {
            best_val = v;
            best.copy_from_slice(&x);
        }
        let mut i = 0;
        while i < d {
            idx[i] += 1;
            if idx[i] <= coarse {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
        if i == d {
            break;
        }
    }
    let origin = vec![0.0; d];
    if f(&origin) < best_val {
        best_val = f(&origin);
        best = origin;
    }
    let r = 3i64;
    let mut h = 2.0 * radius / coarse as f64;
    while h > 1e-12 {
        loop {
            let mut improved = false;
            let mut off = vec![-r; d];
            let start = best.clone();
            loop {
                for i in 0..d {
                    x[i] = start[i] + off[i] as f64 * h;
                }
                let v = f(&x);
                if v < best_val {
                    best_val = v;
                    best.copy_from_slice(&x);
                    improved = true;
                }
                let mut i = 0;
                while i < d {
                    off[i] += 1;
                    if off[i] <= r {
                        break;
                    }
                    off[i] = -r;
                    i += 1;
                }
                if i == d {
                    break;
                }
            }
            if !improved {
                break;
            }
        }
        h /= 3.0;
    }
    best
}

/// Golden-section search for a unimodal scalar function on `[lo, hi]`.
pub fn golden_section(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Brute-force `kappa * argmin_w 1/2 ||w - z||^2 + P(w)` for one block.
pub fn brute_prox_block(z: &[f64], kappa: f64, entrywise: bool) -> Vec<f64> {
    let f = |w: &[f64]| {
        let quad: f64 = w.iter().zip(z).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
        let pen = if entrywise {
            w.iter().map(|x| x.abs()).sum::<f64>()
        } else {
            w.iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        quad + pen
    };
    let radius = z.iter().fold(0.0f64, |m, x| m.max(x.abs())) + 0.5;
    grid_minimize(&f, z, radius).into_iter().map(|w| kappa * w).collect()
}

pub fn brute_prox_scalar(z: f64, kappa: f64) -> f64 {
    let f = |w: f64| 0.5 * (w - z) * (w - z) + w.abs();
    kappa * golden_section(&f, z - 2.0, z + 2.0, 1e-13)
}

pub fn objective(family: LossFamily, ds: &ComparisonDataset, s: &ModelState) -> f64 {
    loss_value(family, ds, &predict_linear(s, ds).unwrap()).unwrap()
}

/// Central differences of the data loss in every coordinate of
/// `(eta, xi, gamma)`.
pub fn fd_gradient(family: LossFamily, ds: &ComparisonDataset, s: &ModelState, h: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut probe = s.clone();
    let mut diff = |get: &dyn Fn(&mut ModelState) -> &mut f64| {
        let x0 = *get(&mut probe);
        *get(&mut probe) = x0 + h;
        let up = objective(family, ds, &probe);
        *get(&mut probe) = x0 - h;
        let down = objective(family, ds, &probe);
        *get(&mut probe) = x0;
        (up - down) / (2.0 * h)
    };
    let eta = (0..s.eta.len()).map(|j| diff(&|p: &mut ModelState| &mut p.eta[j])).collect();
    let xi = (0..s.xi.len()).map(|j| diff(&|p: &mut ModelState| &mut p.xi[j])).collect();
    let gamma = (0..s.gamma.len()).map(|j| diff(&|p: &mut ModelState| &mut p.gamma[j])).collect();
    (eta, xi, gamma)
}

pub fn rel_inf_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Random explicit-feature dataset with Gaussian features and a random
/// mix of outcomes (`binary` picks +-1, otherwise Gaussian responses).
pub fn random_dataset(seed: u64, n_users: usize, n_items: usize, dim: usize, per_user: usize, binary: bool) -> ComparisonDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n_items)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut recs = Vec::new();
    for u in 0..n_users {
        for _ in 0..per_user {
            let l = rng.gen_range(0..n_items);
            let mut r = rng.gen_range(0..n_items - 1);
            if r >= l {
                r += 1;
            }
            let y = if binary {
                if rng.gen_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            } else {
                rng.sample::<f64, _>(StandardNormal)
            };
            recs.push(RawComparison::new(format!("u{u}"), l, r, y));
        }
    }
    build_dataset(recs, FeatureMatrix::from_rows(&rows).unwrap()).unwrap()
}

pub fn random_state(rng: &mut ChaCha8Rng, n_users: usize, dim: usize, scale: f64) -> ModelState {
    let mut s = ModelState::zeros(n_users, dim);
    for v in s.eta.iter_mut().chain(s.xi.iter_mut()).chain(s.gamma.iter_mut()) {
        *v = scale * rng.sample::<f64, _>(StandardNormal);
    }
    s
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn state_diff(a: &ModelState, b: &ModelState) -> f64 {
    [
        max_abs_diff(&a.eta, &b.eta),
        max_abs_diff(&a.xi, &b.xi),
        max_abs_diff(&a.gamma, &b.gamma),
        max_abs_diff(&a.z_xi, &b.z_xi),
        max_abs_diff(&a.z_gamma, &b.z_gamma),
        (a.t - b.t).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// One-sided Mann-Whitney p-value for "values in `high` tend to exceed
/// values in `low`", normal approximation with tie correction.
pub fn rank_sum_p(high: &[f64], low: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = high.iter().map(|&x| (x, true)).chain(low.iter().map(|&x| (x, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for r in &mut ranks[i..=j] {
            *r = avg;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (n1, n2) = (high.len() as f64, low.len() as f64);
    let r1: f64 = all.iter().zip(&ranks).filter(|(a, _)| a.1).map(|(_, r)| r).sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let nn = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    let z = (u - n1 * n2 / 2.0) / var.sqrt();
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}
