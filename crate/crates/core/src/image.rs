//! Flat image tensor used throughout the pipeline.
//!
//! One type carries clean images, perturbed latents, noise draws, denoiser
//! outputs and gradients. Data is row-major `(y, x, channel)`.

use crate::error::{Error, Result};

/// Dense `H×W×C` tensor of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: (height, width, channels),
                got: (data.len(), 1, 1),
            });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn full(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
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

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch { expected: self.shape(), got: other.shape() })
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape(), other.shape(), "zip over mismatched shapes");
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| k * v)
    }

    /// `ca·a + cb·b` elementwise.
    pub fn lin_comb(ca: f64, a: &Self, cb: f64, b: &Self) -> Self {
        a.zip(b, |x, y| ca * x + cb * y)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot over mismatched shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(&self, other: &Self) -> f64 {
        self.sub(other).norm()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "diff over mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Cyclic spatial shift by `(dy, dx)`; channels move with their pixel.
    pub fn cyclic_shift(&self, dy: usize, dx: usize) -> Self {
        Self::from_fn(self.height, self.width, self.channels, |y, x, c| {
            let sy = (y + self.height - dy % self.height) % self.height;
            let sx = (x + self.width - dx % self.width) % self.width;
            self.get(sy, sx, c)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(ImageTensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(2, 2, 1, vec![0.0; 4]).is_ok());
    }

    #[test]
    fn indexing_is_row_major() {
        let img = ImageTensor::from_fn(2, 3, 2, |y, x, c| (y * 100 + x * 10 + c) as f64);
        assert_eq!(img.get(1, 2, 1), 121.0);
        let (y, x, c, width, channels) = (1, 2, 1, 3, 2);
        assert_eq!(img.data()[(y * width + x) * channels + c], 121.0);
    }

    #[test]
    fn cyclic_shift_round_trips() {
        let img = ImageTensor::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64);
        let back = img.cyclic_shift(1, 2).cyclic_shift(3, 2);
        assert_eq!(img, back);
    }

    #[test]
    fn lin_comb_matches_manual() {
        let a = ImageTensor::full(2, 2, 1, 2.0);
        let b = ImageTensor::full(2, 2, 1, 3.0);
        let out = ImageTensor::lin_comb(0.5, &a, 2.0, &b);
        assert_eq!(out.data(), &[7.0; 4]);
    }
}
