//! Parsimonious mixed-effects preference models for crowdsourced pairwise
//! comparisons.
//!
//! A single run of a Linearized Bregman Iteration produces a whole
//! regularization path, starting from one common ranking shared by all
//! annotators and gradually admitting per-annotator preference deviations
//! and position biases. Cross-validation over path time picks the stopping
//! point.
//!
//! ```no_run
//! use parsirank::{simulation, SolverConfig, LossFamily, fit_path};
//!
//! let (data, _truth) = simulation::generate(&simulation::SimConfig::with_seed(1)).unwrap();
//! let config = SolverConfig { max_iters: 2000, ..SolverConfig::new(LossFamily::BradleyTerry) };
//! let path = fit_path(&data, &config).unwrap();
//! println!("{} snapshots, {} support events", path.points.len(), path.events.len());
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod cv;
pub mod error;
pub mod io;
pub mod lbi;
pub mod losses;
pub mod model;
pub mod parallel;
pub mod path;
pub mod penalty;
pub mod simulation;

pub use config::SolverConfig;
pub use error::{Error, Result};
pub use lbi::{fit_common, fit_path, fit_path_observed, hodgerank_baseline, resolve_step, spectral_norm};
pub use losses::{parameter_gradient, LossFamily, ParamGradient};
pub use model::{build_dataset, predict_linear, ComparisonDataset, ComparisonRecord, FeatureMatrix, ModelState, RawComparison, Scores};
pub use parallel::{fit_path_parallel, ShardPlan};
pub use path::{interpolate_state, Block, Direction, RegularizationPath, SupportEvent};
pub use penalty::PenaltyMode;
