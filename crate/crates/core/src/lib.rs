pub mod autodiff;
pub mod data;
pub mod encoders;
pub mod error;
pub mod geom;
pub mod nn;
#[cfg(test)]
mod oracle;
pub mod pipeline;
pub mod refine;
pub mod seed;

pub use error::{Error, Result};
