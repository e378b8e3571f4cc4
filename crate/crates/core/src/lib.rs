//! Simulation and reconstruction library for adaptive foveated single-pixel
//! imaging.
//!
//! A scene is measured one correlation at a time through Hadamard-derived
//! masks that have been stretched onto a space-variant cell grid (a small
//! Cartesian fovea surrounded by ring/sector periphery cells). Sub-frames are
//! reconstructed in cell space with a fast Walsh-Hadamard transform and then
//! fused into super-sampled composites whose effective exposure-time varies
//! across the field. The fovea is steered between fixations by blip-frame
//! motion detection, Haar detail estimation, stochastic jumps or manual clicks.
//!
//! Module map:
//!
//! - [`hadamard`]: Sylvester bases, FWHT, differential pattern pairs.
//! - [`cellgrid`]: uniform and foveated grids, half-cell shifts, stretch transform.
//! - [`scene`]: static and scripted dynamic scenes, image ingestion.
//! - [`detector`]: simulated single-pixel detector on a mask clock.
//! - [`reconstruct`]: uniform images, space-variant sub-frames, blip-frames.
//! - [`fusion`]: weighted averaging, linear-constraint least squares, motion masks.
//! - [`guidance`]: difference maps, motion targets, Haar trajectories, decisions.
//! - [`runtime`]: acquisition loop, timing report, persistence, gateway protocol.

pub mod cellgrid;
pub mod detector;
pub mod error;
pub mod field;
pub mod fusion;
pub mod guidance;
pub mod hadamard;
pub mod io;
pub mod reconstruct;
pub mod runtime;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
pub use field::Field;
