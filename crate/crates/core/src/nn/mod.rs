//! Minimal dense-matrix autodiff used by every trainable model in the crate.

mod layers;
mod matrix;
mod params;
mod tape;

pub use layers::{Linear, Lstm};
pub use matrix::Matrix;
pub use params::{Adam, Gradients, ParamId, ParamStore, PARAM_FORMAT_VERSION};
pub use tape::{Tape, Var};

pub(crate) use tape::{cosine, softmax_into};
