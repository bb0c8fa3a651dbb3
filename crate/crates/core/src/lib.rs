//! Robust zeroing control barrier functions for sampled-data mechanical
//! systems, a QP safety filter, and a multi-fingered grasp simulator.

pub mod barrier;
pub mod cli;
pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
