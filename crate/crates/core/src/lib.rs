//! Discrete factor-graph inference with loop corrections.
//!
//! The crate bundles the pieces needed to run and evaluate loop-corrected
//! belief propagation on discrete graphical models:
//!
//! * [`table`] and [`graph`]: dense factor tables and factor graphs,
//! * [`io`]: the plain-text factor graph format,
//! * [`exact`]: brute-force enumeration and variable elimination,
//! * [`bp`]: belief propagation, mean field and the Bethe free energy,
//! * [`cavity`]: cavity networks and initial cavity distributions,
//! * [`loopcorrect`]: the error-factor fixed point and its beliefs,
//! * [`cumulant`]: the cumulant-based variants for binary pairwise models,
//! * [`models`]: random instance generators and noisy-OR decomposition,
//! * [`bench`]: error metrics and the benchmark harness behind the CLI.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod bp;
pub mod cavity;
pub mod cumulant;
pub mod error;
pub mod exact;
pub mod graph;
pub mod io;
pub mod loopcorrect;
pub mod models;
pub mod table;

pub use error::{Error, Result};
pub use graph::{FactorGraph, Subgraph, Variable};
pub use table::{linear_index, unlinear_index, FactorTable, JointState};
