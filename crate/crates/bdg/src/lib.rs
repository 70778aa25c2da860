//! File formats, Monte-Carlo verification and the command-line front end for
//! [`bdg_core`].

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod io;
pub mod mc;
pub mod runner;
pub mod verify;

pub use error::{Error, Result};
