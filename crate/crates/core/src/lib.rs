//! Rigid scene-flow toolkit.
//!
//! Synthesizes rigid flow from depth and ego-motion, recovers ego-motion from
//! flow and depth with RANSAC + Levenberg-Marquardt PnP, infers a per-pixel
//! rigidity map from the disagreement between optical and rigid flow, and
//! provides the unsupervised photometric losses, flow fusion and evaluation
//! metrics around them. A deterministic synthetic scene generator supplies
//! ground truth for all of it.

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod losses;
pub mod photometric;
pub mod pipeline;
pub mod rfm;
pub mod simulator;
pub mod pnp;

pub use error::{Error, ErrorClass, Result};
pub use geometry::{CameraPose, Intrinsics, Point3};
pub use grid::{DepthMap, FlowField, Grid, Image, PixelMask, ScalarMap};
