//! Deterministic two-wheeled robot simulator and a toolkit for analysing
//! the robot's perceptual (sensor) space against its physical position.
//!
//! The simulator ([`sim`], [`explore`]) produces a sensorimotor log
//! ([`dataset`]); the analysis modules ([`neighbors`], [`stats`],
//! [`geometry`], [`cluster`], [`transform`]) read it back. Data-parallel
//! loops go through [`par`], which uses rayon when the `parallel` feature
//! is on and plain iteration otherwise.

pub mod cluster;
pub mod config;
pub mod dataset;
pub mod error;
pub mod explore;
pub mod geometry;
pub mod neighbors;
pub mod par;
pub mod points;
pub mod sim;
pub mod stats;
pub mod transform;

pub use error::{Error, Result};
