use std::path::Path;

use crate::error::{Error, Result};

/// RGB image with channels-last f32 pixels in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::Data(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Image {
            width,
            height,
            pixels: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = image::load_from_memory(&bytes)
            .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img.as_raw().iter().map(|v| *v as f32 / 255.0).collect();
        Image::new(w as usize, h as usize, pixels)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Image(other),
            })
    }

    /// Bilinear resample of the region `(x0, y0, w, h)` (in source pixels,
    /// fractional allowed) to `out_w x out_h`.
    pub fn resample(&self, x0: f64, y0: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> Image {
        let mut out = Vec::with_capacity(out_w * out_h * 3);
        let sx = w / out_w as f64;
        let sy = h / out_h as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        for oy in 0..out_h {
            let fy = (y0 + (oy as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y_lo = fy.floor() as usize;
            let y_hi = (y_lo + 1).min(self.height - 1);
            let ty = (fy - y_lo as f64) as f32;
            for ox in 0..out_w {
                let fx = (x0 + (ox as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x_lo = fx.floor() as usize;
                let x_hi = (x_lo + 1).min(self.width - 1);
                let tx = (fx - x_lo as f64) as f32;
                let (a, b) = (self.get(x_lo, y_lo), self.get(x_hi, y_lo));
                let (c, d) = (self.get(x_lo, y_hi), self.get(x_hi, y_hi));
                for ch in 0..3 {
                    let top = a[ch] + (b[ch] - a[ch]) * tx;
                    let bot = c[ch] + (d[ch] - c[ch]) * tx;
                    out.push(top + (bot - top) * ty);
                }
            }
        }
        Image {
            width: out_w,
            height: out_h,
            pixels: out,
        }
    }

    pub fn resize(&self, out_w: usize, out_h: usize) -> Image {
        if out_w == self.width && out_h == self.height {
            return self.clone();
        }
        self.resample(0.0, 0.0, self.width as f64, self.height as f64, out_w, out_h)
    }

    /// Resize the short side to `resize`, then take the central `crop x crop`.
    pub fn resize_center_crop(&self, resize: usize, crop: usize) -> Image {
        let scale = resize as f64 / self.width.min(self.height) as f64;
        let rw = ((self.width as f64 * scale).round() as usize).max(crop);
        let rh = ((self.height as f64 * scale).round() as usize).max(crop);
        // Equivalent to resizing to rw x rh and cropping, done in one resample.
        let src_w = crop as f64 * self.width as f64 / rw as f64;
        let src_h = crop as f64 * self.height as f64 / rh as f64;
        let x0 = (self.width as f64 - src_w) / 2.0;
        let y0 = (self.height as f64 - src_h) / 2.0;
        self.resample(x0, y0, src_w, src_h, crop, crop)
    }

    /// Writes the image as normalised CHW values `(v - 0.5) / 0.25` into `out`.
    pub fn write_chw(&self, out: &mut [f64]) {
        let plane = self.width * self.height;
        debug_assert_eq!(out.len(), plane * 3);
        for (p, px) in self.pixels.chunks(3).enumerate() {
            for ch in 0..3 {
                out[ch * plane + p] = (px[ch] as f64 - 0.5) / 0.25;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_exact() {
        let img = Image::new(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.resize(2, 1), img);
    }

    #[test]
    fn constant_image_stays_constant_under_resampling() {
        let img = Image::filled(10, 8, [0.25, 0.5, 0.75]);
        let r = img.resize_center_crop(12, 6);
        assert_eq!((r.width(), r.height()), (6, 6));
        for px in r.pixels().chunks(3) {
            assert!((px[0] - 0.25).abs() < 1e-6 && (px[2] - 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::new(2, 2, (0..12).map(|v| v as f32 * 20.0 / 255.0).collect()).unwrap();
        img.save_png(&path).unwrap();
        let back = Image::load(&path).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
