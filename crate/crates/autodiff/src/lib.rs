//! Dense `f64` tensors on a reverse-mode tape that supports gradients of
//! gradients, plus the layer operations and spectral normalisation needed by
//! small convolutional discriminators and generators.

pub mod checkpoint;
mod error;
mod graph;
mod nn;
pub mod spectral;
mod tensor;

pub use error::{IoError, TensorError};
pub use graph::{ConvGeom, Fault, Graph, Var};
pub use spectral::{spectral_normalize, PowerIteration, SpectralEstimate, WeightLayout};
pub use tensor::Tensor;

// Every tape node owns a fresh buffer, many of them megabytes in size. The
// system allocator hands those back to the kernel on free and page-faults
// them in again on the next step.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
