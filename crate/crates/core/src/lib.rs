//! Graph-level reconstruction pretraining for 3D molecular encoders, with
//! probes for embedding smoothness, linear separability and linearized
//! training dynamics.

pub mod ad;
pub mod rng;
pub mod tensor;
pub mod geometry;
pub mod model;
pub mod objectives;
pub mod data;
pub mod parallel;
pub mod train;
pub mod probes;
pub mod score;
pub mod cli;
