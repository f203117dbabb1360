//! Egocentric human motion estimation from head poses.
//!
//! A world-frame trajectory of central pupil frame (CPF) poses is encoded into
//! spatially and temporally invariant conditioning features, a conditional
//! diffusion prior samples local body motion (joint rotations, shape,
//! contacts), and samples are placed back into the world by aligning the body
//! CPF with the input trajectory. Optional hand observations steer sampling
//! through a Levenberg–Marquardt guidance solver.

pub mod body;
pub mod cli;
pub mod conditioning;
pub mod data;
pub mod error;
pub mod geometry;
pub mod guidance;
pub mod metrics;
pub mod motionprior;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};
