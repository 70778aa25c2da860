//! Numerics for the sharp constant `C` in `E[sqrt(tau)] <= C E[max_{s<=tau} |B(s)|]`.
//!
//! Hitting-time densities, the backward integro-differential solve for the value
//! function along the boundary, the bisection for the critical pair, and the
//! extension of the boundary solution to every state `(t, b, b*)`.
//!
//! Without the default `std` feature the crate is `no_std` (with `alloc`).

#![cfg_attr(not(feature = "std"), no_std)]
// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod critical;
pub mod densities;
pub mod error;
pub mod extension;
pub mod oide;
pub mod quadrature;

pub use error::{Error, Result};
