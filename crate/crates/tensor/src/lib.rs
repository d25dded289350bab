//! Dense tensors with reverse-mode automatic differentiation, plus the
//! convolution, attention, normalization and resampling primitives used by
//! the segmentation model.

pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod precision;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{check_gradients, finite_diff_grad, relative_error, GradCheck};
pub use ops::conv::conv_out_size;
pub use ops::elementwise::Activation;
pub use ops::linalg::softmax_attention;
pub use ops::norm::LAYER_NORM_EPS;
pub use precision::{precision, set_precision, with_precision, Precision};
pub use tensor::Tensor;
