//! Collaborative estimation in reproducing kernel Hilbert spaces.
//!
//! Two agents each own a finite feature dictionary and fit a single data
//! point per iteration by a proximal ridge step.  A fusion center lifts both
//! models into the sum-kernel space, fuses them by ridge regression on
//! virtual targets, and sends each agent back its component.
//!
//! Next to the estimator sit the operator-theoretic checks: transfer
//! operators, sampled operator norms, spectral diagnostics, input-sequence
//! validation and bounded-subsequence selection.

// `!(x > 0.0)` is used deliberately so that NaN is rejected with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agent;
pub mod diagnostics;
pub mod error;
pub mod fusion;
pub mod io;
pub mod linalg;
pub mod maea3;
pub mod sampling;
pub mod spaces;
pub mod transfer;

pub use error::{Error, Result};
