//! Perturbed Shepp-Logan phantoms in attenuation units.
//!
//! The ellipse layout is the modified Shepp-Logan head. Intensities are
//! chosen so the skull ring sits at 0.04 /mm, brain tissue at water
//! (0.02 /mm) and the inner structures a few hundred HU either side. A
//! nonzero `variant_seed` jitters centres, axes, angles and contrasts so that
//! different seeds act as different "patients".

use rand::Rng;

use crate::grid::Image;
use crate::rng;

/// Upper bound on any phantom value, 1/mm.
pub const MU_MAX: f64 = 0.04;

/// One additive ellipse in normalised coordinates (the grid spans [-1, 1]²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    /// Counter-clockwise rotation, radians.
    pub angle: f64,
    pub value: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.semi_axes[0]).powi(2) + (v / self.semi_axes[1]).powi(2) <= 1.0
    }
}

const fn e(cx: f64, cy: f64, a: f64, b: f64, deg: f64, value: f64) -> Ellipse {
    Ellipse {
        center: [cx, cy],
        semi_axes: [a, b],
        angle: deg * std::f64::consts::PI / 180.0,
        value,
    }
}

const BASE: [Ellipse; 10] = [
    e(0.0, 0.0, 0.69, 0.92, 0.0, 0.04),
    e(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.02),
    e(0.22, 0.0, 0.11, 0.31, -18.0, -0.005),
    e(-0.22, 0.0, 0.16, 0.41, 18.0, -0.005),
    e(0.0, 0.35, 0.21, 0.25, 0.0, 0.003),
    e(0.0, 0.1, 0.046, 0.046, 0.0, 0.003),
    e(0.0, -0.1, 0.046, 0.046, 0.0, 0.003),
    e(-0.08, -0.605, 0.046, 0.023, 0.0, 0.003),
    e(0.0, -0.605, 0.023, 0.023, 0.0, 0.003),
    e(0.06, -0.605, 0.023, 0.046, 0.0, 0.003),
];

/// Ellipse table for a phantom variant; seed 0 is the unperturbed layout.
pub fn phantom_ellipses(variant_seed: u64) -> Vec<Ellipse> {
    if variant_seed == 0 {
        return BASE.to_vec();
    }
    let mut rng = rng::stream(variant_seed, 0x7068_616e);
    let mut table = BASE.to_vec();
    // head outline: common scale keeps the skull ring intact
    let sx = rng.gen_range(0.93..1.0);
    let sy = rng.gen_range(0.93..1.0);
    for outline in &mut table[..2] {
        outline.semi_axes[0] *= sx;
        outline.semi_axes[1] *= sy;
        outline.center[1] *= sy;
    }
    for inner in &mut table[2..] {
        inner.center[0] = inner.center[0] * sx + rng.gen_range(-0.02..0.02);
        inner.center[1] = inner.center[1] * sy + rng.gen_range(-0.02..0.02);
        inner.semi_axes[0] *= sx * rng.gen_range(0.9..1.1);
        inner.semi_axes[1] *= sy * rng.gen_range(0.9..1.1);
        inner.angle += rng.gen_range(-5.0f64..5.0).to_radians();
        inner.value *= rng.gen_range(0.8..1.2);
    }
    table
}

/// Normalised coordinates of the centre of pixel `(row, col)` on an `n×n` grid.
pub fn normalized_coords(n: usize, row: usize, col: usize) -> (f64, f64) {
    let h = 2.0 / n as f64;
    (-1.0 + (col as f64 + 0.5) * h, 1.0 - (row as f64 + 0.5) * h)
}

/// Rasterise a phantom by point-sampling ellipse membership at pixel centres.
pub fn shepp_logan(n: usize, variant_seed: u64) -> Image {
    assert!(n >= 16, "phantom grid must be at least 16×16");
    let table = phantom_ellipses(variant_seed);
    let mut img = Image::zeros(n, n);
    for ((row, col), value) in img.view_mut().indexed_iter_mut() {
        let (x, y) = normalized_coords(n, row, col);
        *value = table
            .iter()
            .filter(|el| el.contains(x, y))
            .map(|el| el.value)
            .sum::<f64>()
            .clamp(0.0, MU_MAX);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = shepp_logan(64, 17);
        let b = shepp_logan(64, 17);
        assert_eq!(a, b);
        assert_ne!(a, shepp_logan(64, 18));
    }

    #[test]
    fn values_within_bounds() {
        for seed in [0, 1, 2, 99, 12345] {
            let img = shepp_logan(48, seed);
            assert!(img.as_slice().iter().all(|&v| (0.0..=MU_MAX).contains(&v)));
        }
    }

    #[test]
    fn center_pixel_matches_ellipse_sum() {
        for seed in [0u64, 5, 31] {
            let n = 64;
            let img = shepp_logan(n, seed);
            let (x, y) = normalized_coords(n, n / 2, n / 2);
            let mut expected = 0.0;
            for el in phantom_ellipses(seed) {
                let (s, c) = el.angle.sin_cos();
                let (dx, dy) = (x - el.center[0], y - el.center[1]);
                let u = (c * dx + s * dy) / el.semi_axes[0];
                let v = (-s * dx + c * dy) / el.semi_axes[1];
                if u * u + v * v <= 1.0 {
                    expected += el.value;
                }
            }
            assert!((img.view()[[n / 2, n / 2]] - expected).abs() < 1e-15);
            assert!(expected > 0.0);
        }
    }

    #[test]
    fn background_is_air() {
        let img = shepp_logan(32, 3);
        assert_eq!(img.view()[[0, 0]], 0.0);
    }
}
