//! 3D shape models from 2D keypoint tracks.
//!
//! Learns a 3D shape auto-encoder and a 2D-to-3D lifting network from 2D
//! keypoints alone. Per-frame rotation and depth are solved in closed form by
//! an orthographic-N-point fit that is differentiated through during training.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the CLI and
//! anything touching the operating system live in the `paul` crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod networks;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod suite;
pub mod trainer;

pub use error::{AutodiffError, DataError, GeometryError, ModelError, ShapeError, TrainError};
pub use matrix::Matrix;
