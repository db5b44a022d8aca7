//! Dataset shift detection between a source and a target sample.
//!
//! Five KL divergences (joint, feature marginal, label marginal and the two
//! conditionals) are estimated from origin classifiers, and each comes with a
//! resampling p-value for the matching "no shift" hypothesis.
//!
//! ```no_run
//! use driftkit::pipeline::{run_samples, DetectConfig};
//! # fn demo(source: Vec<driftkit::data::LabeledSample>, target: Vec<driftkit::data::LabeledSample>) -> driftkit::Result<()> {
//! let report = run_samples(source, target, &DetectConfig::default())?;
//! println!("{}", driftkit::pipeline::render_summary(&report));
//! # Ok(())
//! # }
//! ```

pub mod data;
pub mod divergence;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod ratio;
pub mod rng;
pub mod synth;
pub mod testing;

pub use divergence::{KLEstimates, YEstimator};
pub use error::{Error, ErrorClass, Result};
pub use pipeline::{run, run_samples, DetectConfig, RunConfig, ShiftReport};
pub use testing::Hypothesis;
