//! Dense tensors, a reverse-mode gradient tape, and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use tape::{sigmoid, Tape, Var, CLAMP_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
