pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod replay;
pub mod scene;
pub mod synthetic;
pub mod training;
pub mod transformer;

pub use config::Config;
pub use error::{Error, Result};
pub use model::Model;
