//! Memory-augmented dialogue models built on a Neural Turing Machine.
//!
//! Two architectures are provided, each with a memoryless baseline:
//!
//! * [`dntms`]: an encoder-decoder whose encoder writes segment summaries
//!   into one NTM per speaker, and whose decoder predicts from reads of both.
//!   With memory disabled it is a plain GRU seq2seq model.
//! * [`ntmlm`]: a GRU language model over the whole conversation that queries
//!   and writes a single NTM between fixed-size segments. With memory disabled
//!   it is a plain GRU language model.
//!
//! Everything runs on a small reverse-mode autodiff tape ([`autodiff`]) in
//! either `f32` or `f64`.

pub mod autodiff;
pub mod cells;
pub mod checkpoint;
pub mod copy_task;
pub mod corpus;
pub mod dntms;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ntm;
pub mod ntmlm;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tensor::{DType, Real, Tensor};
