//! Desk-scale toolkit for reconstructing static scenes with 3D Gaussian
//! splats from image sequences that contain moving distractors.

pub mod align;
pub mod cli;
pub mod config;
pub mod error;
pub mod guide;
pub mod image;
pub mod masking;
pub mod ply;
pub mod pointcloud;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use image::{Image, Mask};
