//! Image-domain and measurement-domain arrays.
//!
//! All three types wrap a row-major `Array2<f64>`. They exist so that an
//! image cannot be handed to a routine expecting a sinogram by accident.

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Zip};

use crate::error::{Error, Result};

macro_rules! grid_newtype {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(Array2<f64>);

        impl $name {
            /// Takes ownership, copying into row-major order if needed.
            pub fn new(values: Array2<f64>) -> Self {
                if values.is_standard_layout() {
                    $name(values)
                } else {
                    $name(values.as_standard_layout().into_owned())
                }
            }

            pub fn zeros(rows: usize, cols: usize) -> Self {
                $name(Array2::zeros((rows, cols)))
            }

            pub fn from_elem(rows: usize, cols: usize, value: f64) -> Self {
                $name(Array2::from_elem((rows, cols), value))
            }

            pub fn from_shape_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
                let got = values.len();
                Array2::from_shape_vec((rows, cols), values)
                    .map($name)
                    .map_err(|_| Error::shape($what, &[rows * cols], &[got]))
            }

            pub fn shape(&self) -> (usize, usize) {
                self.0.dim()
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn view(&self) -> ArrayView2<'_, f64> {
                self.0.view()
            }

            pub fn view_mut(&mut self) -> ArrayViewMut2<'_, f64> {
                self.0.view_mut()
            }

            pub fn as_array(&self) -> &Array2<f64> {
                &self.0
            }

            pub fn into_inner(self) -> Array2<f64> {
                self.0
            }

            /// Row-major contiguous storage.
            pub fn as_slice(&self) -> &[f64] {
                self.0.as_slice().expect("grid arrays are kept in standard layout")
            }

            pub fn as_slice_mut(&mut self) -> &mut [f64] {
                self.0.as_slice_mut().expect("grid arrays are kept in standard layout")
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn dot(&self, other: &Self) -> f64 {
                self.as_slice().iter().zip(other.as_slice()).map(|(a, b)| a * b).sum()
            }

            pub fn norm(&self) -> f64 {
                self.dot(self).sqrt()
            }

            pub(crate) fn check_shape(&self, expected: (usize, usize)) -> Result<()> {
                let got = self.shape();
                if got == expected {
                    Ok(())
                } else {
                    Err(Error::shape($what, &[expected.0, expected.1], &[got.0, got.1]))
                }
            }
        }

        impl From<Array2<f64>> for $name {
            fn from(values: Array2<f64>) -> Self {
                $name::new(values)
            }
        }
    };
}

grid_newtype!(
    /// Attenuation map on an N×N pixel grid, in 1/mm.
    Image,
    "image"
);
grid_newtype!(
    /// Post-log line integrals indexed by (view, detector).
    Sinogram,
    "sinogram"
);
grid_newtype!(
    /// Diagonal of the statistical weighting matrix, shaped like a sinogram.
    WeightDiag,
    "weights"
);

impl Image {
    /// Elementwise `[x]₊`.
    pub fn clamp_nonnegative(mut self) -> Self {
        self.0.mapv_inplace(|v| v.max(0.0));
        self
    }

    pub fn min_value(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `self + scale * other`, shapes must agree.
    pub fn add_scaled(&self, scale: f64, other: &Image) -> Result<Image> {
        self.check_shape(other.shape())?;
        Ok(Image(&self.0 + &(&other.0 * scale)))
    }

    /// Rotate by 90° counter-clockwise.
    pub fn rot90(&self) -> Image {
        let (rows, cols) = self.shape();
        Image(Array2::from_shape_fn((cols, rows), |(i, j)| self.0[[j, cols - 1 - i]]))
    }
}

impl WeightDiag {
    pub fn ones(rows: usize, cols: usize) -> Self {
        WeightDiag::from_elem(rows, cols, 1.0)
    }

    /// Rejects negative or non-finite entries.
    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::NonFinite("weights"));
        }
        if self.0.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidParameter("negative statistical weight".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        WeightDiag(&self.0 * factor)
    }
}

impl Sinogram {
    /// Entrywise product with the weight diagonal.
    pub fn weighted(&self, w: &WeightDiag) -> Result<Sinogram> {
        w.check_shape(self.shape())?;
        let mut out = self.0.clone();
        Zip::from(&mut out).and(&w.0).for_each(|s, &wi| *s *= wi);
        Ok(Sinogram(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_input_is_made_contiguous() {
        let a = ndarray::array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let img = Image::new(a.reversed_axes());
        assert_eq!(img.shape(), (3, 2));
        assert_eq!(img.as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn rot90_is_counterclockwise() {
        let img = Image::new(ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(img.rot90().as_slice(), &[2.0, 4.0, 1.0, 3.0]);
        assert_eq!(img.rot90().rot90().rot90().rot90(), img);
    }
}
