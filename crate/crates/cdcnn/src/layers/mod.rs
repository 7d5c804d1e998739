//! Forward and backward passes for every layer the network uses.

pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod loss;
pub mod pool;
pub mod relu;

pub use batchnorm::{BatchNormState, BnCache};
pub use conv::ConvSpec;
