//! Training and evaluation engine for activity recognition from smart-insole
//! sensor windows.
//!
//! The model is a circular dilated 1D convolutional network (CDCNN): four
//! conv blocks with dilations 1, 2, 4, 8 and wrap-around padding over the
//! time axis, batch normalization, ReLU, and dropout, followed by global
//! average pooling and a linear head over four activity classes. Everything
//! is built from scratch on a minimal f32 tensor, with reverse-mode
//! gradients verified against finite differences.
//!
//! The crate also provides the dataset format (160-step windows over 18
//! pressure, 3 accelerometer, and 3 gyroscope channels), subject-disjoint
//! splitting, deterministic seeded training with early stopping, permutation
//! feature importance, and a flattened-feature linear baseline.

pub mod adam;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;
mod util;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;

pub use util::{fmt_sig6, round_sig6};
