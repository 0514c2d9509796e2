pub mod advprobe;
pub mod augment;
pub mod data;
pub mod denoiser;
pub mod diffmap;
pub mod encoders;
pub mod error;
pub mod faitheval;
pub mod generation;
pub mod image;
pub mod nn;
pub mod repmatch;
pub mod repops;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
pub use image::ImageBatch;
