//! Small reverse-mode engine covering what the tone-mapping networks and
//! their training need: dilated convolution, LReLU, bias-free adaptive
//! normalization, elementwise arithmetic, pyramid resampling and reductions.

pub mod conv;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use conv::{conv2d, conv2d_backward};
pub use tape::{NormMode, Tape, Var};
pub use tensor::Tensor;
