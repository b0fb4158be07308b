//! Small CPU neural-network substrate: dense, convolution, batch norm and
//! activation layers with manual backpropagation, Adam, and a binary
//! checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod tensor;

pub use checkpoint::{Checkpoint, NamedArray};
pub use layers::{Activation, BatchNorm, Conv2d, Dense, Layer, Mode, Param};
pub use network::{mse, weighted_mse, Adam, HasParams, Sequential};
pub use tensor::Tensor;
