//! Network-wide probabilistic dynamic line rating forecasting with a
//! double-hop line-graph convolutional LSTM.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: grid topology, line-graph conversion and graph operators
//! * [`thermal`]: steady-state heat-balance ampacity
//! * [`datagen`]: synthetic weather, rating labels and windowed datasets
//! * [`autodiff`]: dense reverse-mode differentiation
//! * [`model`]: recurrent cells, bidirectional encoder and quantile heads
//! * [`train`]: pinball-loss training with AdamW
//! * [`metrics`]: interval coverage and scoring
//! * [`verify`]: finite-difference checks of every op and model
//! * [`exec`]: sequential or rayon-backed execution of data-parallel loops

pub mod autodiff;
pub mod datagen;
mod error;
pub mod exec;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod thermal;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Execution;
pub use tensor::Matrix;
