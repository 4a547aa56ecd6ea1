//! Occupancy analytics for automatic passenger counting data.
//!
//! The crate turns raw APC/AVL signals into validated rides, pools them into
//! hourly aggregate rides with load factors, and fits two mixed-effects
//! classifiers of undercrowding: a Bernoulli-logit GLMM with a per-segment
//! random intercept and a generalized mixed-effects random forest.
//!
//! Everything here is pure computation over in-memory data and builds
//! without `std` (an allocator is required). File formats, the weather
//! archive client and the command line live in the `undercrowd` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod aggregate;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod glmm;
pub mod gmerf;
pub mod ingest;
mod linalg;
pub mod math;
pub mod ride_analysis;
pub mod synth;
pub mod validate;

pub use error::{Diagnostic, Error, Result};

/// Maps `f` over `items`, across threads when the `parallel` feature is on.
/// Output order always follows input order.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send, R: Send>(items: alloc::vec::Vec<T>, f: impl Fn(T) -> R + Sync + Send) -> alloc::vec::Vec<R> {
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, R>(items: alloc::vec::Vec<T>, f: impl Fn(T) -> R) -> alloc::vec::Vec<R> {
    items.into_iter().map(f).collect()
}
