//! Tremor severity scoring from video and pose keypoints.

pub mod dataset;
pub mod deepnet;
pub mod embed;
pub mod error;
pub mod features;
pub mod forest;
pub mod poseproc;
pub mod rng;
pub mod synth;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = deepnet::Tensor<f32>;
pub type Tensor64 = deepnet::Tensor<f64>;
pub type ConvLstm32 = deepnet::ConvLstm<f32>;
pub type ConvLstm64 = deepnet::ConvLstm<f64>;
