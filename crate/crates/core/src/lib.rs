pub mod error;
pub mod autoenc;
pub mod dynsys;
pub mod fed;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod pod;

pub use error::{Error, Result};
