//! Unified homography estimation from image features and pixel intensities.
//!
//! A single ESM-style nonlinear least-squares problem over SL(3) and a global
//! gain/bias model combines per-pixel intensity residuals with feature
//! transfer residuals. The weight of each part follows the current feature
//! transfer error, so features dominate far from the solution and
//! intensities take over close to it.

pub mod bench;
pub mod features;
pub mod geometry;
pub mod image_ops;
pub mod photometric;
pub mod solver;
pub mod synth;
pub mod tracker;
