//! Control-state induction for autoregressive generation.
//!
//! The crate is `no_std` with `alloc`. [`semiring`] and [`semicrf`] implement
//! exact inference for the segmental posterior, [`constraints`] the
//! alignment-based posterior penalties, and [`inference_net`], [`decoder`] and
//! [`training`] the amortized model trained by a penalized evidence bound.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod constraints;
pub mod data;
pub mod decoder;
pub mod error;
pub mod inference_net;
pub mod math;
pub mod semicrf;
pub mod semiring;
pub mod training;

pub use error::{Error, Result};
