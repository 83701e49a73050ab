//! Photo-realistic monocular gaze redirection: a conditional WGAN-GP eye
//! patch generator, its dual-headed critic, the training objectives, the
//! evaluation metric suite and the experiment harnesses.

pub mod autograd;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
