//! Fan-beam filtered backprojection for an equispaced flat detector over a
//! full 2π scan.
//!
//! Measurements are rescaled to a virtual detector through the isocentre,
//! cosine weighted, convolved with the band-limited ramp kernel (half
//! amplitude, since every ray is measured twice over 2π), and backprojected
//! with the `1/U²` distance weight and linear interpolation.

use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::grid::{Image, Sinogram};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Ramp,
    #[default]
    #[serde(alias = "hann")]
    HannApodizedRamp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FbpOptions {
    pub filter: FilterKind,
    /// FFT length; defaults to the next power of two ≥ `2·n_detectors - 1`.
    pub filter_len: Option<usize>,
}

impl From<FilterKind> for FbpOptions {
    fn from(filter: FilterKind) -> Self {
        FbpOptions {
            filter,
            filter_len: None,
        }
    }
}

/// FBP image clamped to be nonnegative.
pub fn fbp_reconstruct(geom: &FanBeamGeometry, y: &Sinogram, filter: FilterKind) -> Result<Image> {
    fbp_unclamped(geom, y, filter.into()).map(Image::clamp_nonnegative)
}

/// The linear part of FBP, before the nonnegativity clamp.
pub fn fbp_unclamped(geom: &FanBeamGeometry, y: &Sinogram, opts: FbpOptions) -> Result<Image> {
    geom.validate()?;
    y.check_shape(geom.sinogram_shape())?;
    let filtered = filter_views(geom, y, opts)?;
    Ok(backproject_weighted(geom, &filtered))
}

/// Spacing of the detector rescaled to pass through the isocentre.
fn virtual_pitch(geom: &FanBeamGeometry) -> f64 {
    geom.detector_pitch * geom.source_to_iso / geom.source_to_detector
}

fn filter_views(geom: &FanBeamGeometry, y: &Sinogram, opts: FbpOptions) -> Result<Array2<f64>> {
    let n_det = geom.n_detectors;
    let len = opts
        .filter_len
        .unwrap_or_else(|| (2 * n_det - 1).next_power_of_two());
    if len < n_det {
        return Err(Error::InvalidParameter(format!(
            "filter length {len} is shorter than the detector count {n_det}"
        )));
    }
    let a = virtual_pitch(geom);
    let r = geom.source_to_iso;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(len);
    let ifft = planner.plan_fft_inverse(len);

    // spatial Ram-Lak kernel h(m·a), wrapped for circular convolution
    let mut kernel: Vec<Complex<f64>> = (0..len)
        .map(|k| {
            let m = if k <= len / 2 { k as i64 } else { k as i64 - len as i64 };
            let h = if m == 0 {
                1.0 / (4.0 * a * a)
            } else if m % 2 != 0 {
                -1.0 / ((m * m) as f64 * PI * PI * a * a)
            } else {
                0.0
            };
            Complex::new(h, 0.0)
        })
        .collect();
    fft.process(&mut kernel);
    // a from the convolution sum, 1/2 for double coverage, 1/len for the inverse FFT
    let scale = 0.5 * a / len as f64;
    let response: Vec<f64> = kernel
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let window = match opts.filter {
                FilterKind::Ramp => 1.0,
                FilterKind::HannApodizedRamp => {
                    let f = 2.0 * k.min(len - k) as f64 / len as f64;
                    0.5 * (1.0 + (PI * f).cos())
                }
            };
            h.re * window * scale
        })
        .collect();

    let cosine: Vec<f64> = (0..n_det)
        .map(|j| {
            let s = geom.detector_offset(j) * r / geom.source_to_detector;
            r / (r * r + s * s).sqrt()
        })
        .collect();

    let mut out = Array2::zeros((geom.n_views, n_det));
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for (view, mut row) in out.outer_iter_mut().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for j in 0..n_det {
            buf[j].re = y.view()[[view, j]] * cosine[j];
        }
        fft.process(&mut buf);
        for (c, h) in buf.iter_mut().zip(&response) {
            *c *= *h;
        }
        ifft.process(&mut buf);
        for j in 0..n_det {
            row[j] = buf[j].re;
        }
    }
    Ok(out)
}

fn backproject_weighted(geom: &FanBeamGeometry, filtered: &Array2<f64>) -> Image {
    let n = geom.n_pixels;
    let n_det = geom.n_detectors;
    let r = geom.source_to_iso;
    let a = virtual_pitch(geom);
    let center = 0.5 * (n_det as f64 - 1.0);
    let d_beta = 2.0 * PI / geom.n_views as f64;
    let frames: Vec<_> = (0..geom.n_views).map(|v| geom.view_frame(v)).collect();

    let mut img = Image::zeros(n, n);
    img.as_slice_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(row, out)| {
            for (col, value) in out.iter_mut().enumerate() {
                let [x, y] = geom.pixel_center(row, col);
                let mut acc = 0.0;
                for (view, f) in frames.iter().enumerate() {
                    let depth = r - (x * f.toward_source[0] + y * f.toward_source[1]);
                    let lateral = x * f.detector_axis[0] + y * f.detector_axis[1];
                    let u = depth / r;
                    let pos = lateral * r / depth / a + center;
                    if pos < 0.0 || pos > (n_det - 1) as f64 {
                        continue;
                    }
                    let j0 = (pos.floor() as usize).min(n_det.saturating_sub(2));
                    let frac = pos - j0 as f64;
                    let q = if n_det == 1 {
                        filtered[[view, 0]]
                    } else {
                        (1.0 - frac) * filtered[[view, j0]] + frac * filtered[[view, j0 + 1]]
                    };
                    acc += q / (u * u);
                }
                *value = acc * d_beta;
            }
        });
    img
}
