//! Task-aware latent space over 2D tool silhouettes, and tool imagination by
//! gradient traversal of that space.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: polygons, tools, scenarios and the exact reachability oracle
//! - [`raster`]: fixed-resolution grids and their image file formats
//! - [`scenegen`]: procedural scenarios, labelled balanced datasets, toolkits
//! - [`nets`]: encoders, decoder, success classifier, losses and training
//! - [`imagine`]: latent traversal, random-walk baseline, imagined-tool checks
//! - [`harness`]: evaluations, confidence intervals, reports and run configs

pub mod error;
pub mod geometry;
pub mod harness;
pub mod imagine;
pub mod nets;
pub mod raster;
pub mod scenegen;
pub mod seeds;

pub use error::{Error, Result};
