//! Dense vector math with a dynamic reverse-mode tape, Adam, finite-difference
//! gradient checking and a binary checkpoint format.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_params, write_params, FloatWidth};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, GroupReport, REL_ERROR_FLOOR};
pub use params::{reduce_grads, Grads, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{log_softmax, sigmoid, softmax, Tensor};
