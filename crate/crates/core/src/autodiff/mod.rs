//! Dense reverse-mode differentiation in double precision.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{sigmoid, softmax_slice, Gradients, SegmentMode, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
