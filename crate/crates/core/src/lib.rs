pub mod audio;
pub mod baselines;
pub mod checkpoint;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod fixture;
pub mod miner;
pub mod model;
pub mod prosody;
pub mod review;
pub mod segmenter;
pub mod text;
pub mod trail;

pub use error::{Error, Result};
