pub mod attention;
pub mod cli;
pub mod autograd;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod params;
pub mod pipeline;
pub mod rnn_cells;
pub mod time_embedding;
pub mod training;

pub use error::{Error, Result};
