//! Scene-adaptive video frame interpolation.
//!
//! A small kernel-prediction interpolation network ([`model`]) is trained with
//! a first-order meta-learning loop ([`trainer`]) so that a single gradient step
//! on a test video's own frames ([`adapt`]) improves the frames it synthesizes.
//! Everything runs on a deterministic 64-bit reverse-mode autodiff engine
//! ([`autodiff`]).

pub mod adapt;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod eval;
pub mod exec;
pub mod frame;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod ppm;
pub mod synth;
pub mod tasks;
pub mod tensor;
pub mod trainer;

pub use frame::{Frame, SharedFrame};
pub use model::{Arch, ModelParams};
pub use tensor::Tensor;
