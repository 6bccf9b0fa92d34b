//! The book's chapters, one module each, so `cargo test --doc` runs every
//! listing against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/noise.md")]
pub mod noise {}
#[doc = include_str!("../../../book/src/fbp.md")]
pub mod fbp {}
#[doc = include_str!("../../../book/src/denoiser.md")]
pub mod denoiser {}
#[doc = include_str!("../../../book/src/layers.md")]
pub mod layers {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
