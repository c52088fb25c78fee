pub mod autograd;
pub mod data;
pub mod discriminators;
pub mod error;
pub mod gradcheck;
pub mod inpainter;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod parser;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Float, Tensor};
