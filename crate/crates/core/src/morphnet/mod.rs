//! Edit-vector morphing network: model definition, training and the
//! iterative morphing loop.

pub mod layers;
mod check;
mod infer;
pub mod io;
mod model;
mod train;

pub use model::{
    build_edit_table, DecodeOut, DiffOut, EditTable, Encoded, Forward, ForwardOptions, ModelConfig, MorphModel,
    NllOut,
};
pub use train::{corpus_nll, train, EpochRecord, StopReason, TrainConfig, TrainHistory};
pub use infer::{morph, MorphOptions, MorphOutput, MorphStop, StepDump};
pub use io::{load_model, save_model};
pub use check::GradientCheck;
