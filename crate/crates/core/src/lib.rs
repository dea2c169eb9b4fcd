// SPDX-License-Identifier: MIT OR Apache-2.0

//! Detection and localization of mean changes in high-dimensional panels.
//!
//! Each coordinate of a `n x d` panel gets a self-normalized CUSUM statistic;
//! the maximum over coordinates is compared against a critical value from a
//! Gumbel limit, a parametric Gaussian simulation, or a block multiplier
//! bootstrap. Coordinates above the critical value are flagged as changed and
//! their change time is estimated from the CUSUM argmax.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod cusum;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod lrv;
pub mod panel;
pub mod quantiles;
pub mod report;
pub mod rng;
pub mod simgen;

pub use error::{Error, Result};
pub use exec::Execution;
pub use panel::Panel;
