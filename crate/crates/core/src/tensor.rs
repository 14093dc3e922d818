//! Dense per-frame containers.
//!
//! Everything is stored row-major: row, then column, then channel. A flattened
//! spatial index `i` corresponds to `(i / width, i % width)`.

use crate::error::{Error, Result};

/// Dense `height x width x channels` feature tensor for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    /// Builds a map from row-major data. Rejects length mismatches and
    /// non-finite values.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width}x{channels} map needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Builds a map by evaluating `f(row, col, channel)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
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

    /// Number of spatial positions, `H*W`.
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Feature vector at `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> &[f32] {
        self.pixel(row * self.width + col)
    }

    /// Feature vector at flattened spatial index `i`.
    pub fn pixel(&self, i: usize) -> &[f32] {
        let start = i * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [f32] {
        let start = i * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Per-pixel object ids: 0 is background, `1..=objects` are objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectLabelMap {
    height: usize,
    width: usize,
    objects: u8,
    labels: Vec<u8>,
}

impl ObjectLabelMap {
    pub fn new(height: usize, width: usize, objects: u8, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} label map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l > objects) {
            return Err(Error::LabelOutOfRange { label, objects });
        }
        Ok(Self {
            height,
            width,
            objects,
            labels,
        })
    }

    /// Builds a map whose object count is the largest label present.
    pub fn from_labels(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        let objects = labels.iter().copied().max().unwrap_or(0);
        Self::new(height, width, objects, labels)
    }

    pub fn background(height: usize, width: usize, objects: u8) -> Self {
        Self {
            height,
            width,
            objects,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn objects(&self) -> u8 {
        self.objects
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn same_dims(&self, other: &ObjectLabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Raises the declared object count, e.g. to align maps from one video.
    pub fn with_objects(mut self, objects: u8) -> Result<Self> {
        if let Some(&label) = self.labels.iter().find(|&&l| l > objects) {
            return Err(Error::LabelOutOfRange { label, objects });
        }
        self.objects = objects;
        Ok(self)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> ObjectLabelMap {
        let (h, w) = (self.height * factor, self.width * factor);
        let mut labels = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                labels.push(self.at(r / factor, c / factor));
            }
        }
        ObjectLabelMap {
            height: h,
            width: w,
            objects: self.objects,
            labels,
        }
    }
}
