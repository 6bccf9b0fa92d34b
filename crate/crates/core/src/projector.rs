//! The implicit system matrix `A` and the normal-operator quantities MBIR needs.
//!
//! Ray footprints are exact intersection lengths (Siddon) from the source to
//! each detector-cell centre. They are traced once into a compressed sparse
//! row table; forward projection gathers along a row and back projection
//! scatters along the same row, so `back` is the transpose of `forward` by
//! construction.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::grid::{Image, Sinogram, WeightDiag};

/// A linear map from images to sinograms together with its adjoint.
pub trait SystemOperator: Sync {
    fn image_shape(&self) -> (usize, usize);
    fn sinogram_shape(&self) -> (usize, usize);
    fn forward(&self, img: &Image) -> Result<Sinogram>;
    fn back(&self, sino: &Sinogram) -> Result<Image>;
}

/// Sparse fan-beam system matrix for one geometry.
#[derive(Clone, Debug)]
pub struct FanBeamProjector {
    geom: FanBeamGeometry,
    row_ptr: Vec<usize>,
    pixels: Vec<u32>,
    lengths: Vec<f64>,
}

impl FanBeamProjector {
    pub fn new(geom: &FanBeamGeometry) -> Result<Self> {
        geom.validate()?;
        let n_rays = geom.n_rays();
        let mut row_ptr = Vec::with_capacity(n_rays + 1);
        let mut pixels = Vec::new();
        let mut lengths = Vec::new();
        let mut scratch = Vec::new();
        row_ptr.push(0);
        for view in 0..geom.n_views {
            let source = geom.view_frame(view).source;
            for det in 0..geom.n_detectors {
                let target = geom.detector_point(view, det);
                trace_ray(geom, source, target, &mut scratch, |pixel, len| {
                    pixels.push(pixel as u32);
                    lengths.push(len);
                });
                row_ptr.push(pixels.len());
            }
        }
        Ok(FanBeamProjector {
            geom: geom.clone(),
            row_ptr,
            pixels,
            lengths,
        })
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.geom
    }

    /// Pixel indices (row-major) and intersection lengths of one ray.
    pub fn ray_footprint(&self, view: usize, det: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let ray = view * self.geom.n_detectors + det;
        let span = self.row_ptr[ray]..self.row_ptr[ray + 1];
        self.pixels[span.clone()]
            .iter()
            .zip(&self.lengths[span])
            .map(|(&p, &l)| (p as usize, l))
    }

    /// Number of stored nonzero weights.
    pub fn nnz(&self) -> usize {
        self.lengths.len()
    }
}

impl SystemOperator for FanBeamProjector {
    fn image_shape(&self) -> (usize, usize) {
        self.geom.image_shape()
    }

    fn sinogram_shape(&self) -> (usize, usize) {
        self.geom.sinogram_shape()
    }

    fn forward(&self, img: &Image) -> Result<Sinogram> {
        img.check_shape(self.image_shape())?;
        let x = img.as_slice();
        let n_det = self.geom.n_detectors;
        let mut out = Sinogram::zeros(self.geom.n_views, n_det);
        out.as_slice_mut()
            .par_chunks_mut(n_det)
            .enumerate()
            .for_each(|(view, row)| {
                for (det, value) in row.iter_mut().enumerate() {
                    let ray = view * n_det + det;
                    let span = self.row_ptr[ray]..self.row_ptr[ray + 1];
                    *value = self.pixels[span.clone()]
                        .iter()
                        .zip(&self.lengths[span])
                        .map(|(&p, &l)| l * x[p as usize])
                        .sum();
                }
            });
        Ok(out)
    }

    fn back(&self, sino: &Sinogram) -> Result<Image> {
        sino.check_shape(self.sinogram_shape())?;
        let n = self.geom.n_pixels;
        let mut out = Image::zeros(n, n);
        let x = out.as_slice_mut();
        for (ray, &s) in sino.as_slice().iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let span = self.row_ptr[ray]..self.row_ptr[ray + 1];
            for (&p, &l) in self.pixels[span.clone()].iter().zip(&self.lengths[span]) {
                x[p as usize] += l * s;
            }
        }
        Ok(out)
    }
}

/// Visit every pixel crossed by the segment `p0 → p1` with its intersection length.
fn trace_ray(
    geom: &FanBeamGeometry,
    p0: [f64; 2],
    p1: [f64; 2],
    alphas: &mut Vec<f64>,
    mut visit: impl FnMut(usize, f64),
) {
    let n = geom.n_pixels;
    let pitch = geom.pixel_pitch;
    let half = 0.5 * n as f64 * pitch;
    let d = [p1[0] - p0[0], p1[1] - p0[1]];
    let length = d[0].hypot(d[1]);
    if length == 0.0 {
        return;
    }

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        if d[axis].abs() <= 1e-15 * length {
            if p0[axis] <= -half || p0[axis] >= half {
                return;
            }
        } else {
            let a = (-half - p0[axis]) / d[axis];
            let b = (half - p0[axis]) / d[axis];
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    if hi <= lo {
        return;
    }

    alphas.clear();
    alphas.push(lo);
    alphas.push(hi);
    for axis in 0..2 {
        if d[axis].abs() <= 1e-15 * length {
            continue;
        }
        for k in 0..=n {
            let plane = -half + k as f64 * pitch;
            let a = (plane - p0[axis]) / d[axis];
            if a > lo && a < hi {
                alphas.push(a);
            }
        }
    }
    alphas.sort_unstable_by(f64::total_cmp);

    let last = n as isize - 1;
    let mut pending: Option<(usize, f64)> = None;
    for pair in alphas.windows(2) {
        let seg = (pair[1] - pair[0]) * length;
        if seg <= 0.0 {
            continue;
        }
        let mid = 0.5 * (pair[0] + pair[1]);
        let x = p0[0] + mid * d[0];
        let y = p0[1] + mid * d[1];
        let col = (((x + half) / pitch).floor() as isize).clamp(0, last) as usize;
        let row = (((half - y) / pitch).floor() as isize).clamp(0, last) as usize;
        let pixel = row * n + col;
        pending = match pending {
            Some((p, acc)) if p == pixel => Some((p, acc + seg)),
            Some((p, acc)) => {
                visit(p, acc);
                Some((pixel, seg))
            }
            None => Some((pixel, seg)),
        };
    }
    if let Some((p, acc)) = pending {
        visit(p, acc);
    }
}

/// Explicit matrix operator; also used to densify other operators for testing.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    /// Rows index flattened sinogram entries, columns flattened pixels.
    pub matrix: Array2<f64>,
    image_shape: (usize, usize),
    sinogram_shape: (usize, usize),
}

impl DenseOperator {
    pub fn new(matrix: Array2<f64>, image_shape: (usize, usize), sinogram_shape: (usize, usize)) -> Result<Self> {
        let expected = [sinogram_shape.0 * sinogram_shape.1, image_shape.0 * image_shape.1];
        let got = matrix.dim();
        if [got.0, got.1] != expected {
            return Err(Error::shape("dense operator", &expected, &[got.0, got.1]));
        }
        Ok(DenseOperator {
            matrix,
            image_shape,
            sinogram_shape,
        })
    }

    /// Build the explicit matrix by projecting every unit basis image.
    pub fn from_operator<A: SystemOperator>(op: &A) -> Result<Self> {
        let (rows, cols) = op.image_shape();
        let (views, dets) = op.sinogram_shape();
        let mut matrix = Array2::zeros((views * dets, rows * cols));
        let mut basis = Image::zeros(rows, cols);
        for j in 0..rows * cols {
            basis.as_slice_mut()[j] = 1.0;
            let column = op.forward(&basis)?;
            matrix.column_mut(j).assign(&ndarray::ArrayView1::from(column.as_slice()));
            basis.as_slice_mut()[j] = 0.0;
        }
        Self::new(matrix, (rows, cols), (views, dets))
    }
}

impl SystemOperator for DenseOperator {
    fn image_shape(&self) -> (usize, usize) {
        self.image_shape
    }

    fn sinogram_shape(&self) -> (usize, usize) {
        self.sinogram_shape
    }

    fn forward(&self, img: &Image) -> Result<Sinogram> {
        img.check_shape(self.image_shape)?;
        let x = ndarray::ArrayView1::from(img.as_slice());
        let y = self.matrix.dot(&x);
        Sinogram::from_shape_vec(self.sinogram_shape.0, self.sinogram_shape.1, y.to_vec())
    }

    fn back(&self, sino: &Sinogram) -> Result<Image> {
        sino.check_shape(self.sinogram_shape)?;
        let s = ndarray::ArrayView1::from(sino.as_slice());
        let x = self.matrix.t().dot(&s);
        Image::from_shape_vec(self.image_shape.0, self.image_shape.1, x.to_vec())
    }
}

/// `A x` for a geometry, building the ray table on the fly.
pub fn forward_project(geom: &FanBeamGeometry, img: &Image) -> Result<Sinogram> {
    FanBeamProjector::new(geom)?.forward(img)
}

/// `Aᵀ s` for a geometry, building the ray table on the fly.
pub fn back_project(geom: &FanBeamGeometry, sino: &Sinogram) -> Result<Image> {
    FanBeamProjector::new(geom)?.back(sino)
}

/// `Aᵀ diag(w) A x`.
pub fn normal_apply<A: SystemOperator + ?Sized>(op: &A, w: &WeightDiag, x: &Image) -> Result<Image> {
    let ax = op.forward(x)?;
    op.back(&ax.weighted(w)?)
}

/// `Aᵀ diag(w) A 1`, the data-term part of the diagonal majorizer.
pub fn majorizer_diag<A: SystemOperator + ?Sized>(op: &A, w: &WeightDiag) -> Result<Image> {
    w.check_shape(op.sinogram_shape())?;
    w.validate()?;
    let (rows, cols) = op.image_shape();
    normal_apply(op, w, &Image::from_elem(rows, cols, 1.0))
}

/// Outcome of power iteration on `Aᵀ diag(w) A`.
#[derive(Clone, Debug)]
pub struct PowerIteration {
    pub lambda: f64,
    pub iterations: usize,
    /// Rayleigh quotient after each iteration; nondecreasing for a PSD operator.
    pub rayleigh: Vec<f64>,
}

const RESEED: u64 = 0x5eed_cafe;

/// Power iteration for `λ_max(Aᵀ diag(w) A)`.
///
/// Starts from the all-ones image (the normal operator has nonnegative
/// entries, so its Perron vector is nonnegative); if an iterate vanishes the
/// vector is redrawn from a fixed-seed Gaussian source. Stops when the
/// relative change of the Rayleigh quotient drops below `tol`.
pub fn power_iteration<A: SystemOperator + ?Sized>(
    op: &A,
    w: &WeightDiag,
    max_iters: usize,
    tol: f64,
) -> Result<PowerIteration> {
    if max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    w.check_shape(op.sinogram_shape())?;
    w.validate()?;
    let (rows, cols) = op.image_shape();
    let mut v = Image::from_elem(rows, cols, 1.0);
    let mut reseeded = false;
    let mut rayleigh = Vec::new();
    let mut lambda = 0.0;
    let mut iterations = 0;
    while iterations < max_iters {
        let norm = v.norm();
        if norm == 0.0 {
            if reseeded {
                break;
            }
            reseeded = true;
            let mut rng = ChaCha8Rng::seed_from_u64(RESEED);
            for value in v.as_slice_mut() {
                *value = StandardNormal.sample(&mut rng);
            }
            continue;
        }
        v.as_slice_mut().iter_mut().for_each(|e| *e /= norm);
        let hv = normal_apply(op, w, &v)?;
        iterations += 1;
        let next = v.dot(&hv);
        rayleigh.push(next);
        let converged = iterations > 1 && (next - lambda).abs() <= tol * next.abs();
        lambda = next;
        v = hv;
        if converged {
            break;
        }
    }
    Ok(PowerIteration {
        lambda,
        iterations,
        rayleigh,
    })
}

/// Estimate of the spectral radius of `Aᵀ diag(w) A`.
pub fn estimate_spectral_radius<A: SystemOperator + ?Sized>(
    op: &A,
    w: &WeightDiag,
    max_iters: usize,
    tol: f64,
) -> Result<f64> {
    power_iteration(op, w, max_iters, tol).map(|p| p.lambda)
}
