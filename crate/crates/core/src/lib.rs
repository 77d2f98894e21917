pub mod click;
pub mod diff;
pub mod dla;
pub mod error;
pub mod experiment;
pub mod letor;
pub mod metrics;
pub mod permcheck;
pub mod prod;
pub mod scorer;
pub mod seed;

pub use error::{Error, Result};
