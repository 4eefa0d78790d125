pub mod circular;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod labels;
pub mod metrics;
pub mod neural;
pub mod service;
pub mod svr;

pub use error::{Error, Result};
