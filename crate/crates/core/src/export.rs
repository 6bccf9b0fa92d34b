//! 8-bit grayscale PNG panels with a linear HU display window.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array_io::write_atomic;
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::metrics::to_hu;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: f64,
    pub width: f64,
}

impl Default for Window {
    fn default() -> Self {
        Window {
            center: 1000.0,
            width: 400.0,
        }
    }
}

impl Window {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !self.center.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "display window needs a finite center and positive width, got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// Gray level for an HU value: linear over `[center - width/2, center + width/2]`, clamped.
    pub fn gray(&self, hu: f64) -> u8 {
        let lo = self.center - 0.5 * self.width;
        let v = ((hu - lo) / self.width * 255.0).round();
        v.clamp(0.0, 255.0) as u8
    }
}

pub fn to_gray(img: &Image, window: Window) -> Result<Vec<u8>> {
    window.validate()?;
    Ok(img.as_slice().iter().map(|&mu| window.gray(to_hu(mu))).collect())
}

pub fn encode_png(img: &Image, window: Window) -> Result<Vec<u8>> {
    let pixels = to_gray(img, window)?;
    let (rows, cols) = img.shape();
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, cols as u32, rows as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Data(format!("PNG encoding failed: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Data(format!("PNG encoding failed: {e}")))?;
    }
    Ok(buf)
}

/// Write `img` as a windowed PNG, atomically.
pub fn export_image(img: &Image, path: &Path, window: Window) -> Result<()> {
    write_atomic(path, &encode_png(img, window)?)
}

/// Place equally sized images side by side.
pub fn hstack(images: &[&Image]) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidParameter("no images to tile".into()))?;
    let views: Vec<_> = images
        .iter()
        .map(|im| im.check_shape(first.shape()).map(|_| im.view()))
        .collect::<Result<_>>()?;
    let tiled = ndarray::concatenate(ndarray::Axis(1), &views).expect("shapes checked");
    Ok(Image::new(tiled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::from_hu;

    fn decode(bytes: &[u8]) -> (u32, u32, Vec<u8>) {
        let dec = png::Decoder::new(bytes);
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (info.width, info.height, buf)
    }

    #[test]
    fn window_levels() {
        let w = Window::default();
        assert!((w.gray(1000.0) as i32 - 128).abs() <= 1);
        assert_eq!(w.gray(799.0), 0);
        assert_eq!(w.gray(-5000.0), 0);
        assert_eq!(w.gray(1201.0), 255);
        assert_eq!(w.gray(1e9), 255);
    }

    #[test]
    fn ramp_round_trip() {
        let w = Window {
            center: 500.0,
            width: 1000.0,
        };
        let hu: Vec<f64> = (0..256).map(|k| k as f64 * 1000.0 / 255.0).collect();
        let img = Image::from_shape_vec(1, 256, hu.iter().map(|&h| from_hu(h)).collect()).unwrap();
        let (width, height, pixels) = decode(&encode_png(&img, w).unwrap());
        assert_eq!((width, height), (256, 1));
        // each HU value sits exactly on a gray level, up to rounding of the unit conversion
        for (k, &p) in pixels.iter().enumerate() {
            assert!((p as i32 - k as i32).abs() <= 1, "level {k} -> {p}");
        }
        assert_eq!(pixels[0], 0);
        assert_eq!(pixels[255], 255);
    }

    #[test]
    fn file_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.png");
        let img = crate::phantom::shepp_logan(32, 0);
        export_image(&img, &path, Window::default()).unwrap();
        let (w, h, _) = decode(&std::fs::read(&path).unwrap());
        assert_eq!((w, h), (32, 32));
        assert!(export_image(&img, &dir.path().join("missing/x.png"), Window::default()).is_err());
        assert!(to_gray(&img, Window { center: 0.0, width: 0.0 }).is_err());
    }

    #[test]
    fn tiles() {
        let a = Image::zeros(3, 2);
        let b = Image::from_elem(3, 2, 1.0);
        let t = hstack(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), (3, 4));
        assert!(hstack(&[&a, &Image::zeros(2, 2)]).is_err());
    }
}
