// Domain checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fbl;
pub mod gv_control;
pub mod markov_channel;
pub mod report;
pub mod specfun;
pub mod stability_analysis;

pub use error::{Error, Result};
