pub mod error;
pub mod fit;
pub mod linalg;
pub mod topology;

pub use error::{Error, Result};
pub mod observers;
pub mod regulation;
pub mod simkit;
pub mod scenarios;
pub mod config;
pub mod random;
pub mod props;
