pub mod embed;
pub mod eval;
pub mod features;
pub mod preprocess;
pub mod report;
pub mod synth;
pub mod train;
