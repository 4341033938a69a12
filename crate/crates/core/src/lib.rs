pub mod classifiers;
pub mod error;
pub mod numkit;
pub mod oodkit;
pub mod pipeline;
pub mod rng;
pub mod synthdomain;

pub use error::{Error, Result};
