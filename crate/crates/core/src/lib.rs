//! Multimodal fundus + OCT classification of age-related macular
//! degeneration. Color-space encoder paths feed Gaussian scale spaces into a
//! frozen CNN backbone; scale-wise self-attention fuses the tokens before a
//! random-forest head.

pub mod attention;
pub mod augment;
pub mod backbone;
pub mod cv;
pub mod error;
pub mod forest;
pub mod imageio;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod scale_space;
pub mod util;

pub use error::{Error, Result};
