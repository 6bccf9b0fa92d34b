pub mod array_io;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod export;
pub mod fbp;
pub mod geometry;
pub mod metrics;
pub mod momentum;
pub mod grid;
pub mod nn;
pub mod noise;
pub mod phantom;
pub mod projector;
pub mod rng;

pub use error::{Error, ErrorClass, FormatError, Result};
pub use geometry::FanBeamGeometry;
pub use grid::{Image, Sinogram, WeightDiag};
