pub mod baselines;
pub mod evalbench;
mod error;
pub mod gan;
pub mod media;
pub mod metrics;
pub mod trainer;

pub use error::{Result, StegoError};
