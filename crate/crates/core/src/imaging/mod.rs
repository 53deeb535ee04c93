//! 8-bit images, float planes, bicubic degradation, colour conversion,
//! quality metrics and training-patch sampling.

mod color;
mod dataset;
mod metrics;
mod png_io;
pub mod resize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub use color::rgb_to_y;
pub use dataset::{augment, extract_patch, make_pair, Dataset, ImagePair, Symmetry};
pub use metrics::{crop_border, psnr, ssim, PSNR_IDENTICAL};
pub use png_io::{read_png, write_png};
pub use resize::{bicubic_resize, bicubic_resize_plane};

/// Row-major 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedImage(format!("{channels} channels")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Image(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Image::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 || left + width > self.width || top + height > self.height {
            return Err(Error::Image(format!(
                "crop {width}x{height}+{left}+{top} outside {}x{}",
                self.width, self.height
            )));
        }
        Image::from_fn(width, height, self.channels, |x, y, c| self.get(left + x, top + y, c))
    }

    /// Crops to the largest multiple of `s` in each dimension, anchored at
    /// the top-left corner.
    pub fn modcrop(&self, s: usize) -> Result<Image> {
        if s == 0 {
            return Err(Error::Image("modcrop factor must be >= 1".into()));
        }
        let (w, h) = (self.width / s * s, self.height / s * s);
        if w == 0 || h == 0 {
            return Err(Error::Image(format!(
                "{}x{} is smaller than the factor {s}",
                self.width, self.height
            )));
        }
        self.crop(0, 0, w, h)
    }

    /// Quarter turn clockwise.
    pub fn rot90(&self) -> Image {
        let (w, h) = (self.height, self.width);
        Image::from_fn(w, h, self.channels, |x, y, c| self.get(y, self.height - 1 - x, c))
            .expect("rotation preserves sample count")
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.width, self.height, self.channels, |x, y, c| {
            self.get(self.width - 1 - x, y, c)
        })
        .expect("flip preserves sample count")
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.width, self.height, self.channels, |x, y, c| {
            self.get(x, self.height - 1 - y, c)
        })
        .expect("flip preserves sample count")
    }

    /// One float plane per channel, values in `[0, 255]`.
    pub fn to_planes(&self) -> Vec<Plane> {
        (0..self.channels)
            .map(|c| Plane {
                width: self.width,
                height: self.height,
                data: (0..self.width * self.height)
                    .map(|i| self.data[i * self.channels + c] as f64)
                    .collect(),
            })
            .collect()
    }

    /// Interleaves planes back into an image, clamping to `[0, 255]` and
    /// rounding half away from zero.
    pub fn from_planes(planes: &[Plane]) -> Result<Image> {
        let first = planes.first().ok_or_else(|| Error::Image("no planes".into()))?;
        if planes
            .iter()
            .any(|p| p.width != first.width || p.height != first.height)
        {
            return Err(Error::Image("planes differ in size".into()));
        }
        let mut data = Vec::with_capacity(first.data.len() * planes.len());
        for i in 0..first.data.len() {
            for p in planes {
                data.push(quantize(p.data[i]));
            }
        }
        Image::new(first.width, first.height, planes.len(), data)
    }

    /// `1 x C x H x W` tensor with samples scaled to `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let shape = Shape::new(1, self.channels, self.height, self.width);
        Tensor::from_fn(shape, |_, c, y, x| T::from_f64(self.get(x, y, c) as f64 / 255.0))
    }

    /// Converts the first batch entry of a `[0, 1]`-scaled tensor back to
    /// 8 bits.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Image> {
        let s = t.shape();
        Image::from_fn(s.w, s.h, s.c, |x, y, c| quantize(t.at(0, c, y, x).as_f64() * 255.0))
    }
}

/// Clamp to `[0, 255]` and round half away from zero.
pub fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

/// Single-channel float image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height || data.is_empty() {
            return Err(Error::Image(format!(
                "{} samples for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}
