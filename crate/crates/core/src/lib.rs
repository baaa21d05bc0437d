//! Post-hoc confidence calibration for open-vocabulary classifiers.
//!
//! The toolkit operates entirely on exported artifacts: unit-norm text-class
//! embedding matrices and per-sample logit matrices. It never runs an
//! encoder. The pipeline is:
//!
//! 1. load or generate artifacts ([`dataset`], [`synth`]),
//! 2. score the textual deviation of each query class against the base
//!    classes ([`proximity`]),
//! 3. fit and apply a calibrator ([`calibrate`]) — temperature scaling,
//!    histogram binning, isotonic regression, multi-class isotonic
//!    regression, distance-aware temperature rectification, or a
//!    composition of a logit-space transform with any of the above,
//! 4. evaluate with a binned-calibration metrics suite ([`metrics`]).
//!
//! Data-parallel inner loops (per-class scoring, per-sample application,
//! per-sample metric extraction) run on rayon when the default `parallel`
//! feature is enabled and fall back to plain iterators without it. Both
//! paths produce identical results: parallelism is restricted to
//! order-preserving maps, all reductions stay sequential.

pub mod calibrate;
pub mod dataset;
pub mod error;
pub mod matrix;
pub mod metrics;
mod par;
pub mod proximity;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
