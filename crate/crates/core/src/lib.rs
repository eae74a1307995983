//! Contrastive association learning: core numerics.
//!
//! Everything here works on in-memory data and needs only `alloc`. File
//! formats, the command line and wall-clock timing live in the `cal` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod multi_seed;
pub mod pca;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod synth;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::CalModel;
pub use rng::SeededRng;
