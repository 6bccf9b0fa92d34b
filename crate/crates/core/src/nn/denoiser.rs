//! The four-layer refining network and its variants.
//!
//! `conv(1→C) → ReLU → conv(C→C) → ReLU → conv(C→C) → ReLU → conv(C→1)`, all
//! 3×3 with bias. Residual variants return `x - R(x)`; `dn-rsn` returns the
//! network output directly. Images are multiplied by `input_scale` on the way
//! in and divided by it on the way out so the network sees values of order
//! one instead of attenuation in 1/mm.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use super::conv::{ConvGrad, ConvLayer};
use super::Real;
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::rng;

/// Default input scale: 1/μ_water, so water maps to 1.
pub const DEFAULT_INPUT_SCALE: f64 = 50.0;
pub const DEFAULT_CHANNELS: usize = 64;
pub const KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "simplecnn")]
    SimpleCnn,
    #[serde(rename = "simplecnn-rsn")]
    SimpleCnnRsn,
    #[serde(rename = "dn-rsn")]
    DnRsn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::SimpleCnn, Variant::SimpleCnnRsn, Variant::DnRsn];

    /// Output is `x - R(x)`.
    pub fn residual(self) -> bool {
        !matches!(self, Variant::DnRsn)
    }

    /// Every layer is spectrally normalised after each optimiser step.
    pub fn spectral_normalized(self) -> bool {
        !matches!(self, Variant::SimpleCnn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::SimpleCnn => "simplecnn",
            Variant::SimpleCnnRsn => "simplecnn-rsn",
            Variant::DnRsn => "dn-rsn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected simplecnn, simplecnn-rsn or dn-rsn)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams<T> {
    pub layers: Vec<ConvLayer<T>>,
    pub variant: Variant,
    pub input_scale: f64,
}

/// Activations kept from the forward pass for backpropagation.
pub struct ForwardCache<T> {
    /// Scaled input followed by the three post-ReLU hidden activations.
    activations: Vec<Array3<T>>,
}

impl<T: Real> DenoiserParams<T> {
    /// He-initialised network.
    pub fn random(variant: Variant, channels: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0x696e_6974);
        let widths = [1, channels, channels, channels, 1];
        let layers = widths
            .windows(2)
            .map(|w| ConvLayer::he(w[0], w[1], KERNEL, &mut r))
            .collect();
        DenoiserParams {
            layers,
            variant,
            input_scale: DEFAULT_INPUT_SCALE,
        }
    }

    /// All weights and biases zero.
    pub fn zeros(variant: Variant, channels: usize) -> Self {
        let widths = [1, channels, channels, channels, 1];
        DenoiserParams {
            layers: widths.windows(2).map(|w| ConvLayer::zeros(w[0], w[1], KERNEL)).collect(),
            variant,
            input_scale: DEFAULT_INPUT_SCALE,
        }
    }

    pub fn channels(&self) -> usize {
        self.layers[0].out_channels()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> DenoiserParams<U> {
        let conv = |a: &T| U::of(a.f64());
        DenoiserParams {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    weight: l.weight.map(conv),
                    bias: l.bias.map(conv),
                    rsn: l.rsn.as_ref().map(|s| super::RsnState {
                        u: s.u.map(conv),
                        v: s.v.map(conv),
                    }),
                })
                .collect(),
            variant: self.variant,
            input_scale: self.input_scale,
        }
    }

    /// Network output in scaled units for an already-scaled `1 × h × w` input.
    pub fn forward(&self, input: ArrayView3<'_, T>) -> Result<(Array3<T>, ForwardCache<T>)> {
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = input.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.forward(current.view())?;
            if i < last {
                next.mapv_inplace(|v| v.max(T::zero()));
            }
            activations.push(current);
            current = next;
        }
        if self.variant.residual() {
            current = &activations[0] - &current;
        }
        Ok((current, ForwardCache { activations }))
    }

    /// Parameter gradients for `∂L/∂output` (scaled units).
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: ArrayView3<'_, T>) -> Result<Vec<ConvGrad<T>>> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = if self.variant.residual() {
            grad_out.mapv(|v| -v)
        } else {
            grad_out.to_owned()
        };
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[i];
            let (grad_in, grad) = layer.backward(input.view(), g.view(), i > 0)?;
            grads.push(grad);
            if let Some(mut gi) = grad_in {
                // input of layer i is the ReLU output of layer i-1
                ndarray::Zip::from(&mut gi).and(input).for_each(|d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
                g = gi;
            }
        }
        grads.reverse();
        Ok(grads)
    }

    pub fn scale_in(&self, img: &Image) -> Array3<T> {
        let (h, w) = img.shape();
        let s = self.input_scale;
        Array3::from_shape_fn((1, h, w), |(_, i, j)| T::of(img.view()[[i, j]] * s))
    }

    pub fn scale_out(&self, out: &Array3<T>) -> Image {
        let (_, h, w) = out.dim();
        let s = self.input_scale;
        Image::new(ndarray::Array2::from_shape_fn((h, w), |(i, j)| out[[0, i, j]].f64() / s))
    }
}

/// Anything that maps an image to a refined image.
pub trait ImageDenoiser: Sync {
    fn denoise(&self, x: &Image) -> Result<Image>;
}

impl<T: Real> ImageDenoiser for DenoiserParams<T> {
    fn denoise(&self, x: &Image) -> Result<Image> {
        let (out, _) = self.forward(self.scale_in(x).view())?;
        Ok(self.scale_out(&out))
    }
}

/// `D(x) = x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl ImageDenoiser for Identity {
    fn denoise(&self, x: &Image) -> Result<Image> {
        Ok(x.clone())
    }
}

impl<F> ImageDenoiser for F
where
    F: Fn(&Image) -> Image + Sync,
{
    fn denoise(&self, x: &Image) -> Result<Image> {
        Ok(self(x))
    }
}

pub fn denoiser_apply<T: Real>(params: &DenoiserParams<T>, x: &Image) -> Result<Image> {
    params.denoise(x)
}
