//! Mouth-region emotion recognition.
//!
//! The pipeline finds a face with a Haar cascade, locates the mouth in the
//! lower half of the face, and classifies the mouth crop with a small
//! convolutional network trained by ADAM.

pub mod checkpoint;
pub mod datapipe;
pub mod error;
pub mod haar;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::Tensor;
