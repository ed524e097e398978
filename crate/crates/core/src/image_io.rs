//! Linear-valued RGB images with alpha, stored as 8-bit PNG.
//!
//! Pixel values are treated as linear in `[0, 1]`; no sRGB transfer curve is
//! applied on load or save.

use std::path::Path;

use crate::error::{Result, TuvfError};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major `[height * width * 3]`.
    pub rgb: Vec<f64>,
    /// Row-major `[height * width]`.
    pub alpha: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, rgb: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        if rgb.len() != width * height * 3 || alpha.len() != width * height {
            return Err(TuvfError::shape(
                "image",
                format!("{}x{} image with {} rgb and {} alpha values", width, height, rgb.len(), alpha.len()),
            ));
        }
        Ok(Image {
            width,
            height,
            rgb,
            alpha,
        })
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Image {
            width,
            height,
            rgb: color.iter().copied().cycle().take(width * height * 3).collect(),
            alpha: vec![1.0; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Bilinear colour at continuous frame coordinates (pixel centres at
    /// `i + 0.5`), clamp-to-edge.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let (a, b, c, d) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
        [0, 1, 2].map(|k| (a[k] * (1.0 - tx) + b[k] * tx) * (1.0 - ty) + (c[k] * (1.0 - tx) + d[k] * tx) * ty)
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    /// Copies `tile` into this image with its top-left corner at `(x0, y0)`.
    pub fn blit(&mut self, tile: &Image, x0: usize, y0: usize) {
        for y in 0..tile.height {
            let src = y * tile.width;
            let dst = (y0 + y) * self.width + x0;
            self.rgb[dst * 3..(dst + tile.width) * 3].copy_from_slice(&tile.rgb[src * 3..(src + tile.width) * 3]);
            self.alpha[dst..dst + tile.width].copy_from_slice(&tile.alpha[src..src + tile.width]);
        }
    }

    /// Fraction of pixels with alpha above one half.
    pub fn coverage(&self) -> f64 {
        self.alpha.iter().filter(|&&a| a > 0.5).count() as f64 / self.alpha.len().max(1) as f64
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(TuvfError::shape(
                "image_l1",
                format!("{}x{} vs {}x{}", self.width, self.height, other.width, other.height),
            ));
        }
        Ok(self.rgb.iter().zip(&other.rgb).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.rgb.len() as f64)
    }

    fn to_u8(v: f64) -> u8 {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }

    pub fn save_png(&self, path: &Path, with_alpha: bool) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| TuvfError::io(parent, e))?;
        }
        let (w, h) = (self.width as u32, self.height as u32);
        let result = if with_alpha {
            let mut buf = Vec::with_capacity(self.width * self.height * 4);
            for (c, a) in self.rgb.chunks(3).zip(&self.alpha) {
                buf.extend(c.iter().map(|&v| Self::to_u8(v)));
                buf.push(Self::to_u8(*a));
            }
            image::RgbaImage::from_raw(w, h, buf).expect("buffer sized to image").save(path)
        } else {
            let buf = self.rgb.iter().map(|&v| Self::to_u8(v)).collect();
            image::RgbImage::from_raw(w, h, buf).expect("buffer sized to image").save(path)
        };
        result.map_err(|e| TuvfError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => TuvfError::io(path, io),
            other => TuvfError::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        let rgba = img.to_rgba8();
        let (w, h) = (rgba.width() as usize, rgba.height() as usize);
        let mut rgb = Vec::with_capacity(w * h * 3);
        let mut alpha = Vec::with_capacity(w * h);
        for p in rgba.pixels() {
            rgb.extend(p.0[..3].iter().map(|&v| v as f64 / 255.0));
            alpha.push(p.0[3] as f64 / 255.0);
        }
        Image::new(w, h, rgb, alpha)
    }

    /// Grayscale mask in `[0, 1]` from the red channel of a PNG.
    pub fn load_mask(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
        let img = Image::load_png(path)?;
        let mask = img.rgb.chunks(3).map(|c| c[0]).collect();
        Ok((img.width, img.height, mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_quantises() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let mut img = Image::filled(3, 2, [0.2, 0.4, 1.0]);
        img.alpha[1] = 0.0;
        img.save_png(&p, true).unwrap();
        let back = Image::load_png(&p).unwrap();
        assert_eq!(back.alpha[1], 0.0);
        assert!(back.mean_abs_diff(&img).unwrap() < 1.0 / 255.0);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = Image::load_png(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }
}
