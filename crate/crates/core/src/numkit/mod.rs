//! Dense linear algebra, reverse-mode differentiation, singular values and
//! seeded random numbers for small networks.

mod rng;
mod svd;
mod tape;
mod tensor;

pub use rng::{derive_seed, mix64, Rng};
pub use svd::svd_values;
pub use tape::{Tape, Var};
pub use tensor::{dot, norm2, Tensor};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}: produced a non-finite value")]
    NonFinite(&'static str),
    #[error("log of a non-positive value")]
    LogDomain,
    #[error("sqrt of a negative value")]
    SqrtDomain,
    #[error("{op}: index out of range")]
    Index { op: &'static str },
}
