//! Point-cloud conditioned diffusion policy with a Mixer-style decoder,
//! trained and evaluated end to end on planar manipulation tasks.

pub mod error;
pub mod numerics;
pub mod dim;
pub mod envbench;
pub mod perception;
pub mod policy;
pub mod schedule;

pub use error::{Error, Result};
