//! Training and evaluation of long-context text embedding models at desk
//! scale.

// `!(x > 0.0)` is how validation rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod objectives;
pub mod params;
pub mod rope;
pub mod synthetic;
pub mod trainer;

pub use encoder::{
    finalize_embedding, mean_pool, pad_vocab, Encoder, EncoderConfig, Pooling, TokenBatch,
};
pub use error::{Error, Result};
pub use params::{BoundParams, Params};
pub use rope::{RopeKind, RopeParams, RopePolicy};
