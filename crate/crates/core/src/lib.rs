//! Multi-objective architecture search over a cell-stacking space.
//!
//! The search maximizes accuracy and minimizes parameter count under a hard
//! parameter budget. Candidates are proposed by a reverse recommendation
//! model: a forward surrogate maps codes to the two objectives, and a reverse
//! network is trained through the frozen forward surrogate to emit codes for
//! requested performance targets lying outside the current Pareto front.
//!
//! Real network training is replaced by the [`oracle`] module's pluggable
//! evaluators.

pub mod arr;
pub mod baselines;
pub mod error;
pub mod fes;
pub mod harness;
pub mod mlp;
pub mod oracle;
pub mod pareto;
pub mod rng;
pub mod search;
pub mod space;

pub use error::{Error, Result};
