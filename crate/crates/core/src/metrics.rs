//! Error metrics in shifted Hounsfield units (air 0 HU, water 1000 HU).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::Image;

/// Attenuation of water, 1/mm.
pub const MU_WATER: f64 = 0.02;

pub fn to_hu(mu: f64) -> f64 {
    1000.0 * mu / MU_WATER
}

pub fn from_hu(hu: f64) -> f64 {
    hu * MU_WATER / 1000.0
}

/// Root-mean-square HU difference over the (optionally masked) pixels.
pub fn rmse_hu(x: &Image, reference: &Image, mask: Option<&Array2<bool>>) -> Result<f64> {
    x.check_shape(reference.shape())?;
    if let Some(m) = mask {
        if m.dim() != x.shape() {
            let (a, b) = x.shape();
            return Err(Error::shape("mask", &[a, b], &[m.dim().0, m.dim().1]));
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (idx, (&a, &b)) in x.as_slice().iter().zip(reference.as_slice()).enumerate() {
        if let Some(m) = mask {
            if !m.as_slice().expect("standard layout")[idx] {
                continue;
            }
        }
        let d = to_hu(a) - to_hu(b);
        sum += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidParameter("RMSE mask selects no pixels".into()));
    }
    Ok((sum / count as f64).sqrt())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
