//! One seed of the simulated study: hold out a quarter of the items, pick
//! the stopping time by 5-fold cross-validation and compare the refitted
//! mixed-effects model against a common-only ranking.
//!
//! `cargo run --release -p parsirank --example study -- 3`

use parsirank::cv::{fit_at, mismatch_ratio, run_cv, split_by_item, uniform_grid, CvConfig, Predictor, SplitMode};
use parsirank::simulation::{generate, SimConfig};
use parsirank::{hodgerank_baseline, resolve_step, LossFamily, SolverConfig};

fn main() -> parsirank::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (ds, _) = generate(&SimConfig::with_seed(seed))?;
    let (train, test) = split_by_item(&ds, 0.75, seed)?;

    let config = SolverConfig {
        kappa: 0.1,
        max_iters: 10_000,
        record_every: 20,
        seed,
        ..SolverConfig::new(LossFamily::BradleyTerry)
    };
    let alpha = resolve_step(&train, &config)?.alpha;
    let cv = CvConfig {
        folds: 5,
        t_grid: uniform_grid(alpha * config.max_iters as f64, 50),
        split_mode: SplitMode::ByRecord,
        seed,
    };
    let report = run_cv(&train, &config, &cv)?;
    let state = fit_at(&train, &config, report.t_cv)?;
    let mixed = mismatch_ratio(Predictor::state(&state, ds.features()), test.records(), true)?;

    let common = hodgerank_baseline(&train, LossFamily::Linear)?;
    let baseline = mismatch_ratio(Predictor::Scores(&common), test.records(), false)?;
    println!("seed {seed}: t_cv {:.1}, held-out mismatch {mixed:.4}, common-only {baseline:.4}", report.t_cv);
    Ok(())
}
