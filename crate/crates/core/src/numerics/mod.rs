//! Dense linear algebra, the scoring primitives used by co-attention, and a
//! reverse-mode tape. Everything is `f64`.

mod matrix;
pub(crate) mod ops;
mod tape;

pub use matrix::{dot, Matrix};
pub use ops::{
    cosine, gelu, layer_norm, masked_log_softmax, masked_softmax, max_pool_rows,
    max_pool_rows_with_argmax, min_max_scale, softmax,
};
pub use tape::{ParamGrads, ParamId, Tape, Var};
