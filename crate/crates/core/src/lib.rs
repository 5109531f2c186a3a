//! Fine-tuning a multinomial classifier head on CKKS-encrypted feature vectors.

pub mod error;
pub mod ckks;
pub mod linalg;
pub mod approx;
pub mod ingest;
pub mod protocol;
pub mod tolerance;
pub mod trainer;
pub mod ring;
pub mod store;

pub use error::{Error, Result};
