//! Image and mask containers.
//!
//! Images are stored height-major, then width, then channel (HWC), with values
//! nominally in `[0, 1]`. The flat layout doubles as the `1 x (H*W*C)` row used on
//! the autodiff tape.

use std::path::Path;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(height * width * channels, data.len()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn to_row(&self) -> Mat {
        Mat::from_shape_vec((1, self.data.len()), self.data.clone()).expect("row shape")
    }

    /// Rebuilds an image from a `1 x (H*W*C)` row.
    pub fn from_row(row: &Mat, height: usize, width: usize, channels: usize) -> Result<Self> {
        if row.nrows() != 1 {
            return Err(Error::shape((1, height * width * channels), row.dim()));
        }
        Self::new(height, width, channels, row.iter().copied().collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean_abs_diff(&self, other: &ImageTensor) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(total / self.data.len().max(1) as f64)
    }

    /// Quantizes to 8-bit RGB. Single-channel images are replicated.
    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let mut out = ImageBuffer::new(self.width as u32, self.height as u32);
        for (x, y, px) in out.enumerate_pixels_mut() {
            let mut rgb = [0u8; 3];
            for (c, slot) in rgb.iter_mut().enumerate() {
                let ch = if self.channels == 1 { 0 } else { c };
                *slot = to_u8(self.get(y as usize, x as usize, ch));
            }
            *px = Rgb(rgb);
        }
        out
    }

    pub fn from_rgb8(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Self {
        let (w, h) = img.dimensions();
        let data = img.pixels().flat_map(|p| p.0).map(from_u8).collect();
        Self {
            height: h as usize,
            width: w as usize,
            channels: 3,
            data,
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_u8(v: u8) -> f64 {
    v as f64 / 255.0
}

/// Single-channel soft mask with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(height * width, values.len()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("mask values must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Builds a mask, clamping every value into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::from_clamped(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn area(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Pixelwise maximum, the soft union of two masks.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(
                (self.height, self.width),
                (other.height, other.width),
            ));
        }
        Ok(Mask::from_clamped(
            self.height,
            self.width,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.max(*b))
                .collect(),
        ))
    }

    pub fn ensure_matches(&self, image: &ImageTensor) -> Result<()> {
        if (self.height, self.width) != (image.height(), image.width()) {
            return Err(Error::shape(
                (image.height(), image.width()),
                (self.height, self.width),
            ));
        }
        Ok(())
    }

    /// Replicates the mask over `channels`, giving a `1 x (H*W*C)` row.
    pub fn broadcast_row(&self, channels: usize) -> Mat {
        let data: Vec<f64> = self
            .values
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, channels))
            .collect();
        Mat::from_shape_vec((1, data.len()), data).expect("mask row")
    }

    pub fn to_image(&self) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.values.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ImageTensor::zeros(4, 5, 3);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = from_u8((i * 7 % 256) as u8);
        }
        let path = dir.path().join("probe.png");
        img.save_png(&path).unwrap();
        assert_eq!(ImageTensor::load_png(&path).unwrap(), img);
    }

    #[test]
    fn mask_rejects_out_of_range() {
        assert!(Mask::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(Mask::new(1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn broadcast_row_repeats_channels() {
        let m = Mask::new(1, 2, vec![0.25, 1.0]).unwrap();
        let row = m.broadcast_row(3);
        assert_eq!(row.as_slice().unwrap(), &[0.25, 0.25, 0.25, 1.0, 1.0, 1.0]);
    }
}
