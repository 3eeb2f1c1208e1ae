//! Feedback-network HDR reconstruction from a single LDR image: tensors and
//! reverse-mode autodiff, image codecs, exposure bracketing, the network,
//! its losses and metrics, display tone mapping and a training loop.

pub mod autodiff;
pub mod checkpoint;
pub mod codec;
pub mod conv;
pub mod error;
pub mod exec;
pub mod exposure;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod params;
pub mod tensor;
pub mod tonemap;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{HdrImage, LdrImage, Resize};
pub use tensor::{Scalar, Tensor};
