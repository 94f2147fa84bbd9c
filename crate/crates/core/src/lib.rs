//! Tree-structured semi-supervised contrastive pre-training for
//! task-oriented dialog encoders.
//!
//! Dialog annotations from heterogeneous schemas are normalized into
//! semantic trees ([`sts`]), compared across ten structural views
//! ([`similarity`]), and used as soft targets for supervised contrastive
//! losses alongside dropout-based self-supervised contrastive learning and
//! span masked language modeling ([`objectives`]), all trained on a small
//! transformer ([`encoder`]) built on a double-precision autodiff engine
//! ([`tensor`]).

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod objectives;
pub mod sts;
pub mod similarity;
pub mod tensor;
pub mod train;

pub use error::{Error, Result, TensorError};
