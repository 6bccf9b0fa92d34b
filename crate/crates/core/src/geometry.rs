//! Fan-beam scan description.
//!
//! The image grid is centred on the isocentre with pixel `(row, col)` at
//! `x = (col - (N-1)/2)·pitch`, `y = ((N-1)/2 - row)·pitch`. View `k` places
//! the source at angle `φ_k = 2πk / n_views` on a circle of radius
//! `source_to_iso`; the flat detector sits opposite, perpendicular to the
//! central ray, with cell `j` at lateral offset `(j - (n_det-1)/2)·pitch`
//! along `(-sin φ, cos φ)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scanner and reconstruction-grid parameters. Distances are in mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanBeamGeometry {
    pub n_pixels: usize,
    pub pixel_pitch: f64,
    pub n_views: usize,
    pub n_detectors: usize,
    pub detector_pitch: f64,
    pub source_to_iso: f64,
    pub source_to_detector: f64,
}

/// Source position and detector layout for one view.
#[derive(Clone, Copy, Debug)]
pub struct ViewFrame {
    pub source: [f64; 2],
    /// Unit vector from the isocentre towards the source.
    pub toward_source: [f64; 2],
    /// Unit vector along the detector row, direction of increasing cell index.
    pub detector_axis: [f64; 2],
}

impl FanBeamGeometry {
    pub fn new(
        n_pixels: usize,
        pixel_pitch: f64,
        n_views: usize,
        n_detectors: usize,
        detector_pitch: f64,
        source_to_iso: f64,
        source_to_detector: f64,
    ) -> Result<Self> {
        let geom = FanBeamGeometry {
            n_pixels,
            pixel_pitch,
            n_views,
            n_detectors,
            detector_pitch,
            source_to_iso,
            source_to_detector,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Clinical-like scanner distances with the grid spanning `fov` mm and a
    /// detector pitch chosen so the fan covers the inscribed circle with 5% margin.
    pub fn scaled(n_pixels: usize, fov: f64, n_views: usize, n_detectors: usize) -> Result<Self> {
        let source_to_iso = 595.0;
        let source_to_detector = 1085.6;
        let radius = fov / 2.0;
        if !(radius > 0.0 && radius < source_to_iso) {
            return Err(Error::Geometry(format!("field of view {fov} mm does not fit inside the source orbit")));
        }
        let half_angle = (radius / source_to_iso).asin();
        let half_width = source_to_detector * half_angle.tan();
        let detector_pitch = 1.05 * 2.0 * half_width / n_detectors.max(1) as f64;
        Self::new(
            n_pixels,
            fov / n_pixels.max(1) as f64,
            n_views,
            n_detectors,
            detector_pitch,
            source_to_iso,
            source_to_detector,
        )
    }

    /// Desk-scale stand-in for a 512×512, 0.69 mm body scan: same 353 mm field of view.
    pub fn desk(n_pixels: usize, n_views: usize, n_detectors: usize) -> Result<Self> {
        Self::scaled(n_pixels, 512.0 * 0.69, n_views, n_detectors)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_pixels", self.n_pixels),
            ("n_views", self.n_views),
            ("n_detectors", self.n_detectors),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Geometry(format!("{name} must be at least 1")));
            }
        }
        let lengths = [
            ("pixel_pitch", self.pixel_pitch),
            ("detector_pitch", self.detector_pitch),
            ("source_to_iso", self.source_to_iso),
            ("source_to_detector", self.source_to_detector),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Geometry(format!("{name} must be positive, got {v}")));
            }
        }
        if self.source_to_detector <= self.source_to_iso {
            return Err(Error::Geometry(format!(
                "source_to_detector ({}) must exceed source_to_iso ({})",
                self.source_to_detector, self.source_to_iso
            )));
        }
        let radius = self.fov_radius();
        if radius >= self.source_to_iso {
            return Err(Error::Geometry(format!(
                "field of view radius {radius} mm reaches the source orbit"
            )));
        }
        // Fan half-angle subtended by the outer detector edge must reach the
        // tangent to the inscribed circle.
        let half_width = 0.5 * self.n_detectors as f64 * self.detector_pitch;
        let fan = (half_width / self.source_to_detector).atan();
        let needed = (radius / self.source_to_iso).asin();
        if fan < needed {
            return Err(Error::Geometry(format!(
                "detector fan half-angle {:.4} rad does not cover the field of view ({:.4} rad needed)",
                fan, needed
            )));
        }
        Ok(())
    }

    /// Radius of the circle inscribed in the pixel grid.
    pub fn fov_radius(&self) -> f64 {
        0.5 * self.n_pixels as f64 * self.pixel_pitch
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.n_pixels, self.n_pixels)
    }

    pub fn sinogram_shape(&self) -> (usize, usize) {
        (self.n_views, self.n_detectors)
    }

    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_detectors
    }

    pub fn view_angle(&self, view: usize) -> f64 {
        2.0 * PI * view as f64 / self.n_views as f64
    }

    pub fn view_frame(&self, view: usize) -> ViewFrame {
        let (s, c) = self.view_angle(view).sin_cos();
        ViewFrame {
            source: [self.source_to_iso * c, self.source_to_iso * s],
            toward_source: [c, s],
            detector_axis: [-s, c],
        }
    }

    /// Lateral offset of detector cell `det` from the central ray, on the detector.
    pub fn detector_offset(&self, det: usize) -> f64 {
        (det as f64 - 0.5 * (self.n_detectors as f64 - 1.0)) * self.detector_pitch
    }

    /// Centre of detector cell `det` in view `view`.
    pub fn detector_point(&self, view: usize, det: usize) -> [f64; 2] {
        let f = self.view_frame(view);
        let back = self.source_to_detector;
        let u = self.detector_offset(det);
        [
            f.source[0] - back * f.toward_source[0] + u * f.detector_axis[0],
            f.source[1] - back * f.toward_source[1] + u * f.detector_axis[1],
        ]
    }

    /// Physical centre of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        let half = 0.5 * (self.n_pixels as f64 - 1.0);
        [
            (col as f64 - half) * self.pixel_pitch,
            (half - row as f64) * self.pixel_pitch,
        ]
    }
}
