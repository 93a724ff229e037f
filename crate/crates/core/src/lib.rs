//! Batch size / learning rate scaling laws for sign-based optimizers.
//!
//! The laws live in [`laws`]; [`harness`] and [`oracle`] produce the
//! empirical numbers they are checked against, and [`fit`] recovers the law
//! constants from grid-search output.

#![allow(
    clippy::excessive_precision,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop
)]

pub mod error;
pub mod fit;
pub mod harness;
pub mod io;
pub mod laws;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod signstats;
pub mod verify;

pub use error::{Error, LawDiagnostic, Result};
pub use laws::LawInputs;
pub use model::{HessianSpec, InitSpec, Workload, WorkloadSpec};
pub use signstats::{GradientStats, SignModel};
