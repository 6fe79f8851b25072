//! Differentiable 3-D Conv-LSTM severity classifier.

pub mod augment;
pub mod graph;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use augment::{augment, AugmentParams, AugmentRanges};
pub use graph::{Conv3dSpec, Graph, PoolSpec, Var};
pub use model::{centre_in_time, ArchConfig, ConvBlock, ConvLstm, ForwardVars, Prediction};
pub use optim::{Adam, ReduceOnPlateau};
pub use tensor::Tensor;
pub use train::{centre_crop, evaluate, train, write_history_csv, EpochRecord, Evaluation, Labelled, TrainConfig, TrainOutcome};
