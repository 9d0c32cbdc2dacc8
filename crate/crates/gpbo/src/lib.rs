//! Black-box hyperparameter optimization over integer-indexed configuration
//! spaces: Gaussian-process Bayesian optimization with Expected Improvement,
//! greedy farthest-point initialization, batched suggestions with a random
//! interleave, and a median-rule early-stopping layer for staged evaluations
//! that imputes stopped trials — plus a benchmark harness that simulates both
//! evaluation protocols on synthetic objectives.
//!
//! The `parallel` feature (on by default) runs candidate scoring, grid
//! scans, model fitting restarts, and batch evaluations on rayon; disabling
//! it yields a fully sequential build with identical results.
//!
//! ```
//! use gpbo::bench::make_problem;
//! use gpbo::bo::{run_preliminary, LoopParams};
//!
//! let problem = make_problem("branin_grid", &[20, 20], 0)?;
//! let report = run_preliminary(&problem, 25, &LoopParams::default(), 42)?;
//! assert_eq!(report.observations.len(), 25);
//! # Ok::<(), gpbo::Error>(())
//! ```

pub mod acq;
pub mod bench;
pub mod bo;
mod error;
pub mod fidelity;
pub mod gp;
pub mod init;
pub mod lbfgsb;
mod par;
pub mod space;

pub use error::{Error, Result};
pub use space::{Configuration, HyperparameterDef, Space};
