// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over parallel arrays read better than nested zips.
#![allow(clippy::needless_range_loop)]

pub mod algos;
pub mod conditioning;
pub mod envs;
mod error;
pub mod harness;
pub mod numkit;
pub mod policy;
pub mod rollout;

pub use error::{Error, Result};
