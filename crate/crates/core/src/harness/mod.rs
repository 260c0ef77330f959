//! Synthetic data, seeded noise, tensor files and the command-line driver.

pub mod cli;
pub mod noise;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod tensor;
