use std::path::Path;

use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Row-major RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<f64>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: [f64; 3]) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            rgb: color.iter().copied().cycle().take(3 * n).collect(),
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y * self.width + x) as usize;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, c: [f64; 3]) {
        let i = 3 * (y * self.width + x) as usize;
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .rgb
                .chunks_exact(3)
                .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
                .collect(),
        }
    }

    /// Quantizes to 8 bits, as stored on disk.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            rgb: self.rgb.iter().map(|&v| to_u8(v) as f64 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.rgb.iter().map(|&v| to_u8(v)).collect();
        image::save_buffer(path, &bytes, self.width, self.height, image::ColorType::Rgb8).map_err(|source| {
            Error::Image {
                path: path.to_path_buf(),
                source,
            }
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingImage(path.to_path_buf()));
        }
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            rgb: img.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl GrayImage {
    /// Bilinear sample at pixel coordinates (integers are pixel centers),
    /// with the partial derivatives in `u` and `v`. `None` outside the
    /// region where all four neighbours exist.
    pub fn sample(&self, u: f64, v: f64) -> Option<(f64, f64, f64)> {
        let (w, h) = (self.width as usize, self.height as usize);
        if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
            return None;
        }
        let x0 = (u.floor() as usize).min(w.saturating_sub(2));
        let y0 = (v.floor() as usize).min(h.saturating_sub(2));
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let at = |x: usize, y: usize| self.data[y * w + x];
        let (i00, i10, i01, i11) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
        let val = (1.0 - fx) * (1.0 - fy) * i00 + fx * (1.0 - fy) * i10 + (1.0 - fx) * fy * i01 + fx * fy * i11;
        let du = (1.0 - fy) * (i10 - i00) + fy * (i11 - i01);
        let dv = (1.0 - fx) * (i01 - i00) + fx * (i11 - i10);
        Some((val, du, dv))
    }

    /// Taped bilinear sample.
    pub fn sample_var<'t>(&self, u: Var<'t>, v: Var<'t>) -> Option<Var<'t>> {
        let (val, du, dv) = self.sample(u.value(), v.value())?;
        Some(Var::binary(u, v, val, du, dv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixel_centers_and_interpolates() {
        let g = GrayImage {
            width: 2,
            height: 2,
            data: vec![0.0, 1.0, 2.0, 3.0],
        };
        assert_eq!(g.sample(0.0, 0.0).unwrap().0, 0.0);
        assert_eq!(g.sample(1.0, 1.0).unwrap().0, 3.0);
        let (v, du, dv) = g.sample(0.5, 0.5).unwrap();
        assert_eq!((v, du, dv), (1.5, 1.0, 2.0));
        assert!(g.sample(1.01, 0.0).is_none());
        assert!(g.sample(-0.01, 0.0).is_none());
    }

    #[test]
    fn png_round_trip_is_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::filled(4, 3, [0.1, 0.5, 0.9]);
        img.set_pixel(2, 1, [1.0, 0.0, 0.25]);
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back, img.quantized());
        assert!(matches!(
            Image::load_png(&dir.path().join("missing.png")),
            Err(Error::MissingImage(_))
        ));
    }
}
