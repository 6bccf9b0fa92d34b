//! Stride-1 "same" 2-D convolution (cross-correlation) via im2col + GEMM.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, Axis};
use rand_distr::{Distribution, Normal};

use super::spectral::RsnState;
use super::Real;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// `out_ch × in_ch × k × k`.
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub rsn: Option<RsnState<T>>,
}

/// Gradients of a scalar loss with respect to one layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad<T> {
    pub weight: Array4<T>,
    pub bias: Array1<T>,
}

impl<T: Real> ConvGrad<T> {
    pub fn zeros_like(layer: &ConvLayer<T>) -> Self {
        ConvGrad {
            weight: Array4::zeros(layer.weight.dim()),
            bias: Array1::zeros(layer.bias.dim()),
        }
    }

    pub fn add_assign(&mut self, other: &ConvGrad<T>) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }

    pub fn scale(&mut self, factor: T) {
        self.weight.mapv_inplace(|v| v * factor);
        self.bias.mapv_inplace(|v| v * factor);
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        ConvLayer {
            weight: Array4::zeros((out_ch, in_ch, k, k)),
            bias: Array1::zeros(out_ch),
            rsn: None,
        }
    }

    /// He initialisation: `N(0, 2/fan_in)` weights, zero bias.
    pub fn he(in_ch: usize, out_ch: usize, k: usize, rng: &mut StreamRng) -> Self {
        let mut layer = Self::zeros(in_ch, out_ch, k);
        let std = (2.0 / (in_ch * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        layer.weight.mapv_inplace(|_| T::of(normal.sample(rng)));
        layer
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.dim().2
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, T> {
        let (o, i, k, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((o, i * k * k))
            .expect("weights are contiguous")
    }

    fn check_input(&self, channels: usize) -> Result<()> {
        if channels != self.in_channels() {
            return Err(Error::shape("conv input channels", &[self.in_channels()], &[channels]));
        }
        Ok(())
    }

    /// Convolution plus bias.
    pub fn forward(&self, input: ArrayView3<'_, T>) -> Result<Array3<T>> {
        let mut out = self.apply_linear(input)?;
        for (mut plane, &b) in out.outer_iter_mut().zip(&self.bias) {
            plane.mapv_inplace(|v| v + b);
        }
        Ok(out)
    }

    /// The linear part `K x` (no bias).
    pub fn apply_linear(&self, input: ArrayView3<'_, T>) -> Result<Array3<T>> {
        let (c, h, w) = input.dim();
        self.check_input(c)?;
        let cols = im2col(input, self.kernel_size());
        let out = self.weight_matrix().dot(&cols);
        Ok(out
            .into_shape_with_order((self.out_channels(), h, w))
            .expect("gemm output is contiguous"))
    }

    /// The adjoint `Kᵀ g` of the linear part.
    pub fn apply_transpose(&self, grad_out: ArrayView3<'_, T>) -> Result<Array3<T>> {
        let (c, h, w) = grad_out.dim();
        if c != self.out_channels() {
            return Err(Error::shape("conv output channels", &[self.out_channels()], &[c]));
        }
        let g = to_matrix(grad_out);
        let cols = self.weight_matrix().t().dot(&g);
        Ok(col2im(&cols, self.in_channels(), h, w, self.kernel_size()))
    }

    /// Gradients given the layer input and `∂L/∂output`. The input gradient is
    /// skipped when `need_input` is false.
    pub fn backward(
        &self,
        input: ArrayView3<'_, T>,
        grad_out: ArrayView3<'_, T>,
        need_input: bool,
    ) -> Result<(Option<Array3<T>>, ConvGrad<T>)> {
        let (c, h, w) = input.dim();
        self.check_input(c)?;
        if grad_out.dim() != (self.out_channels(), h, w) {
            let (a, b, d) = grad_out.dim();
            return Err(Error::shape("conv output gradient", &[self.out_channels(), h, w], &[a, b, d]));
        }
        let k = self.kernel_size();
        let cols = im2col(input, k);
        let g = to_matrix(grad_out);
        let gw = g.dot(&cols.t());
        let weight = gw
            .into_shape_with_order(self.weight.dim())
            .expect("gemm output is contiguous");
        let bias = g.sum_axis(Axis(1));
        let grad_in = if need_input {
            let gcols = self.weight_matrix().t().dot(&g);
            Some(col2im(&gcols, c, h, w, k))
        } else {
            None
        };
        Ok((grad_in, ConvGrad { weight, bias }))
    }
}

fn to_matrix<T: Real>(a: ArrayView3<'_, T>) -> Array2<T> {
    let (c, h, w) = a.dim();
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, h * w))
        .expect("standard layout")
}

/// Rows indexed by `(channel, ky, kx)`, columns by output pixel; zero padding.
pub(crate) fn im2col<T: Real>(input: ArrayView3<'_, T>, k: usize) -> Array2<T> {
    let (c, h, w) = input.dim();
    let input = input.as_standard_layout();
    let src = input.as_slice().expect("standard layout");
    let r = (k / 2) as isize;
    let mut cols = Array2::<T>::zeros((c * k * k, h * w));
    let dst_all = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let dy = ky as isize - r;
            for kx in 0..k {
                let dx = kx as isize - r;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut dst_all[row * h * w..(row + 1) * h * w];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let s0 = (sy * w) as isize + x_lo as isize + dx;
                    let s0 = s0 as usize;
                    dst[y * w + x_lo..y * w + x_hi].copy_from_slice(&plane[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto a `c × h × w` array.
pub(crate) fn col2im<T: Real>(cols: &Array2<T>, c: usize, h: usize, w: usize, k: usize) -> Array3<T> {
    let cols = cols.as_standard_layout();
    let src_all = cols.as_slice().expect("standard layout");
    let r = (k / 2) as isize;
    let mut out = Array3::<T>::zeros((c, h, w));
    let dst_all = out.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let plane = &mut dst_all[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let dy = ky as isize - r;
            for kx in 0..k {
                let dx = kx as isize - r;
                let row = (ci * k + ky) * k + kx;
                let src = &src_all[row * h * w..(row + 1) * h * w];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (sy as usize * w) as isize + x_lo as isize + dx;
                    let s0 = s0 as usize;
                    for (d, &v) in plane[s0..s0 + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&src[y * w + x_lo..y * w + x_hi])
                    {
                        *d += v;
                    }
                }
            }
        }
    }
    out
}
