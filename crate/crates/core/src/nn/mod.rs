//! A small CNN engine: just enough for the four-layer refining networks.
//!
//! Everything is generic over [`Real`] so training can run in `f32` while
//! gradient checks exercise the identical code path in `f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod denoiser;
pub mod spectral;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::ConvLayer;
pub use denoiser::{denoiser_apply, DenoiserParams, Identity, ImageDenoiser, Variant};
pub use spectral::{spectral_normalize, RsnState};
pub use train::{denoiser_train_layer, TrainHyper, TrainLog};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}
