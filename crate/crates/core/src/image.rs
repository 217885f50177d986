//! Planar float images and the fixed per-channel standardization.

use crate::error::{Error, Result};
use std::path::Path;

/// Per-channel mean and std applied after scaling pixels to `[0, 1]`.
pub const CHANNEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Channel-major (CHW) float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    /// Maps `[0, 1]` pixels to standardized values.
    pub fn normalized(&self) -> Image {
        let mut out = self.clone();
        let plane = self.height * self.width;
        for c in 0..self.channels {
            let (m, s) = (CHANNEL_MEAN[c % 3], CHANNEL_STD[c % 3]);
            for v in &mut out.data[c * plane..(c + 1) * plane] {
                *v = (*v - m) / s;
            }
        }
        out
    }

    /// Checks that values lie in the range produced by [`Image::normalized`].
    pub fn check_normalized(&self) -> Result<()> {
        let plane = self.height * self.width;
        for c in 0..self.channels {
            let (m, s) = (CHANNEL_MEAN[c % 3], CHANNEL_STD[c % 3]);
            let (lo, hi) = (-m / s - 1e-3, (1.0 - m) / s + 1e-3);
            if let Some(v) = self.data[c * plane..(c + 1) * plane]
                .iter()
                .find(|v| !(**v >= lo && **v <= hi))
            {
                return Err(Error::InvalidArgument(format!(
                    "pixel value {v} in channel {c} is outside the normalized range [{lo:.3}, {hi:.3}]"
                )));
            }
        }
        Ok(())
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::zeros(3, h, w);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                *out.at_mut(c, y as usize, x as usize) = p[c] as f32 / 255.0;
            }
        }
        out
    }

    /// Converts a `[0, 1]` image to 8-bit RGB (grayscale is replicated).
    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c: usize| {
                let c = c.min(self.channels - 1);
                (self.at(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Image::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let rgb = self.to_rgb8();
        let mut bytes = Vec::new();
        rgb.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?;
        crate::export::atomic_write(path, &bytes)
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Image {
        let mut out = Image::zeros(self.channels, out_h, out_w);
        let sy = self.height as f32 / out_h as f32;
        let sx = self.width as f32 / out_w as f32;
        let coord = |o: usize, scale: f32, n: usize| {
            let f = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f32);
            let i0 = f.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, f - i0 as f32)
        };
        for y in 0..out_h {
            let (y0, y1, fy) = coord(y, sy, self.height);
            for x in 0..out_w {
                let (x0, x1, fx) = coord(x, sx, self.width);
                for c in 0..self.channels {
                    let top = self.at(c, y0, x0) * (1.0 - fx) + self.at(c, y0, x1) * fx;
                    let bot = self.at(c, y1, x0) * (1.0 - fx) + self.at(c, y1, x1) * fx;
                    *out.at_mut(c, y, x) = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        out
    }

    /// Copies the rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        let mut out = Image::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    *out.at_mut(c, y, x) = self.at(c, y0 + y, x0 + x);
                }
            }
        }
        out
    }
}
