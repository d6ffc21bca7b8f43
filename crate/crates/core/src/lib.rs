//! Liveness/identity disentanglement toolkit.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod gradsuite;
pub mod kv;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod stylecross;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{apply_primitive, Primitive, PrimitiveKind, Tensor};
