mod binio;
pub mod data;
pub mod error;
pub mod lottery;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod optim;
pub mod pruning;

pub use error::{Error, Result};
