//! Bundle adjustment for stereo rigs with a soft constant-baseline constraint.

pub mod cost;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod problem;
pub mod rig;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
