//! Numerical core: Caputo quadratures, a compact finite-difference solver for the
//! two-term time-fractional mixed diffusion-wave equation, a small dense-network
//! engine, and a physics-informed DeepONet trained against the quadratures.
//!
//! The crate is `no_std` (with `alloc`); the default `std` feature only enables
//! runtime CPU feature detection in the matrix kernel.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(a < b)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod fdsolver;
pub mod fracops;
pub mod neuralnet;
pub mod operatormodel;
