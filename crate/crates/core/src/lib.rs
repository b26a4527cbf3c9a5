//! Learning to control linear systems with partially controllable
//! structure: Riccati solvers, controllability structure, sparse system
//! identification from one-step transitions, and a Monte-Carlo harness.
//!
//! ```
//! use pclq::{linalg::Mat, lqr::{solve_dare, LqSystem}};
//!
//! let a = Mat::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
//! let b = Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
//! let sys = LqSystem::with_identity_costs(a, b).unwrap();
//! let sol = solve_dare(&sys).unwrap();
//! assert!(sol.residual < 1e-10);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod lqr;
pub mod rng;
pub mod structure;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use rng::Rng;

// The guide's code blocks are compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/riccati.md")]
    mod riccati {}
    #[doc = include_str!("../../../book/src/structure.md")]
    mod structure {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
