pub mod checkpoint;
pub mod contrastive;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod head;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod seed;
pub mod selftrain;
pub mod synth;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use model::DstModel;
pub use params::ParamSet;
