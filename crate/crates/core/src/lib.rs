//! Numeric and textual primitives for entropy-guided decoding experiments.
//!
//! The crate is split by concern:
//!
//! * [`dist`] — next-token distributions, top-p renormalization, clamped
//!   entropy, and the recursive-entropy score.
//! * [`counterfactual`] — turning a question with a known answer into
//!   directed / reversed / undirected counterfactual prompts.
//! * [`trace`] — reasoning-trace segmentation, fact-hit detection,
//!   over-reflection flagging, and suffix loop detection.
//! * [`trend`] — grouped statistics and log-linear regression over
//!   recursive-entropy trajectories.
//!
//! Everything here is deterministic: randomness is always injected as an
//! explicit seed and all iteration orders are fixed.

pub mod counterfactual;
pub mod dist;
pub mod error;
pub mod trace;
pub mod trend;

pub use error::CoreError;
