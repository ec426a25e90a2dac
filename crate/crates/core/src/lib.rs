//! Structural credit calibration toolkit.
//!
//! Equity is read as a European call on firm assets. From observed prices the
//! crate recovers implied asset and equity volatilities, then inverts a
//! physical-measure binomial tree for implied drift and implied up/downside
//! probabilities, and turns the downside probability into a stress signal.

// `!(x > y)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binomial;
pub mod calibration;
pub mod error;
pub mod market_data;
pub mod optimize;
pub mod pricing;
pub mod stress;
pub mod surfaces;
pub mod synthetic;

pub use error::{Error, ErrorCategory, Result};

/// Guide chapters, compiled so their snippets stay in sync with the API.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pricing.md")]
    mod pricing {}
    #[doc = include_str!("../../../book/src/binomial.md")]
    mod binomial {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/market-data.md")]
    mod market_data {}
    #[doc = include_str!("../../../book/src/surfaces.md")]
    mod surfaces {}
    #[doc = include_str!("../../../book/src/stress.md")]
    mod stress {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
