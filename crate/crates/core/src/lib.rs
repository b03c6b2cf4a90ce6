//! Curriculum reinforcement learning for a simulated car on procedurally
//! built tracks under three weather conditions.

pub mod config;
pub mod curriculum;
pub mod distribution;
pub mod env;
pub mod error;
pub mod geom;
pub mod nn;
pub mod perception;
pub mod policy;
pub mod replay;
pub mod report;
pub mod rundir;
pub mod sac;
pub mod track;
pub mod vehicle;

pub use error::{Error, Result};
