//! Membership-inference auditing for transfer-learned linear heads.
//!
//! The engine consumes fixed feature embeddings (a frozen backbone's output),
//! trains softmax-regression target and shadow heads under a seeded split
//! protocol, scores eight membership-inference attacks, and reports
//! TPR-at-low-FPR with median/IQR aggregation across repeats.

pub mod attacks;
pub mod data;
pub mod error;
pub mod eval;
pub mod oracles;
pub mod orchestrator;
pub mod seed;
pub mod signals;
pub mod trainer;

pub use error::{Error, Result};
