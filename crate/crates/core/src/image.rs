//! Planar float images and integer label grids.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `C×H×W` image in channel-major layout. Values live in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                format!("{channels}x{height}x{width}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Image::new(self.channels, height, width);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = (fy - y0 as f64) as f32;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = (fx - x0 as f64) as f32;
                for c in 0..self.channels {
                    let top = self.get(c, y0, x0) * (1.0 - wx) + self.get(c, y0, x1) * wx;
                    let bot = self.get(c, y1, x0) * (1.0 - wx) + self.get(c, y1, x1) * wx;
                    out.set(c, y, x, top * (1.0 - wy) + bot * wy);
                }
            }
        }
        out
    }

    /// Rounds every value to the nearest 8-bit level, matching what a PNG
    /// round trip produces.
    pub fn quantized(&self) -> Image {
        let data = self
            .data
            .iter()
            .map(|&v| from_u8(to_u8(v)))
            .collect::<Vec<_>>();
        Image { data, ..*self }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::shape("3 channels", self.channels));
        }
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in buf.enumerate_pixels_mut() {
            let (x, y) = (x as usize, y as usize);
            *px = image::Rgb([
                to_u8(self.get(0, y, x)),
                to_u8(self.get(1, y, x)),
                to_u8(self.get(2, y, x)),
            ]);
        }
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_owned(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::new(3, h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, from_u8(px.0[c]));
            }
        }
        Ok(out)
    }
}

// 255 levels span [-1, 1]; 127.5 maps exactly onto the byte range.
fn to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn from_u8(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// An `H×W` grid of small integer labels (class ids or instance ids).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u16>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize) -> Self {
        LabelGrid {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u16) {
        self.data[y * self.width + x] = v;
    }

    pub fn max(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Writes a single-channel 8-bit PNG; labels above 255 are rejected.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if self.max() > 255 {
            return Err(Error::InvalidConfig(format!(
                "label value {} does not fit an 8-bit map",
                self.max()
            )));
        }
        let bytes = self.data.iter().map(|&v| v as u8).collect::<Vec<_>>();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches grid");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<LabelGrid> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_owned(),
                source,
            })?
            .to_luma8();
        Ok(LabelGrid {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.into_raw().into_iter().map(u16::from).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_is_idempotent() {
        let img = Image::from_vec(1, 1, 3, vec![-1.0, 0.1234, 1.0]).unwrap();
        let q = img.quantized();
        assert_eq!(q, q.quantized());
        assert_eq!(q.data[0], -1.0);
        assert_eq!(q.data[2], 1.0);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::filled(3, 8, 8, 0.25);
        let r = img.resize(16, 4);
        assert!(r.data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
        assert_eq!(r.shape(), (3, 16, 4));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(3, 4, 5);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 / 60.0) * 2.0 - 1.0;
        }
        let img = img.quantized();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);

        let mut grid = LabelGrid::new(3, 2);
        grid.set(1, 1, 7);
        let p = dir.path().join("g.png");
        grid.save_png(&p).unwrap();
        assert_eq!(LabelGrid::load_png(&p).unwrap(), grid);
    }
}
