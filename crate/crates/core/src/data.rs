//! Labeled image sets, the sample currency shared by every module.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Channel-first image shape `(C, H, W)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageShape {
            channels,
            height,
            width,
        }
    }

    /// Number of values in one image.
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.channels, self.height, self.width)
    }
}

/// A set of equally shaped images with integer class labels in `[0, class_count)`.
///
/// Pixels are stored contiguously, image after image, channel-first.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet<T = f32> {
    shape: ImageShape,
    class_count: usize,
    pixels: Vec<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn new(
        shape: ImageShape,
        class_count: usize,
        pixels: Vec<T>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if pixels.len() != labels.len() * shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!(
                    "{} values for {} images of {shape}",
                    labels.len() * shape.len(),
                    labels.len()
                ),
                actual: format!("{} values", pixels.len()),
            });
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {l} of sample {i} is outside [0, {class_count})"
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "pixel {} of sample {}",
                i % shape.len(),
                i / shape.len()
            )));
        }
        Ok(LabeledSet {
            shape,
            class_count,
            pixels,
            labels,
        })
    }

    pub fn empty(shape: ImageShape, class_count: usize) -> Self {
        LabeledSet {
            shape,
            class_count,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[T] {
        let n = self.shape.len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.shape.len();
        &mut self.pixels[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, image: &[T], label: usize) -> Result<()> {
        if image.len() != self.shape.len() {
            return Err(Error::ShapeMismatch {
                expected: self.shape.to_string(),
                actual: format!("{} values", image.len()),
            });
        }
        if label >= self.class_count {
            return Err(Error::InvalidArgument(format!(
                "label {label} is outside [0, {})",
                self.class_count
            )));
        }
        self.pixels.extend_from_slice(image);
        self.labels.push(label);
        Ok(())
    }

    /// New set holding the given samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let n = self.shape.len();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        LabeledSet {
            shape: self.shape,
            class_count: self.class_count,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn classes_present(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }

    pub fn extend_from(&mut self, other: &LabeledSet<T>) -> Result<()> {
        if other.shape != self.shape || other.class_count != self.class_count {
            return Err(Error::ShapeMismatch {
                expected: format!("{} with {} classes", self.shape, self.class_count),
                actual: format!("{} with {} classes", other.shape, other.class_count),
            });
        }
        self.pixels.extend_from_slice(&other.pixels);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    pub fn concat<'a>(
        shape: ImageShape,
        class_count: usize,
        parts: impl IntoIterator<Item = &'a LabeledSet<T>>,
    ) -> Result<Self> {
        let mut out = LabeledSet::empty(shape, class_count);
        for p in parts {
            out.extend_from(p)?;
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> LabeledSet<U> {
        LabeledSet {
            shape: self.shape,
            class_count: self.class_count,
            pixels: self.pixels.iter().map(|v| U::of(v.f64())).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Exact storage size of the pixel payload.
    pub fn byte_size(&self) -> u64 {
        (self.pixels.len() * T::BYTES) as u64
    }

    /// Content checksum over shape, labels and raw little-endian pixels.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "{}|{}|{}|{}|",
            self.shape,
            self.class_count,
            self.len(),
            T::NAME
        ));
        for &l in &self.labels {
            h.update((l as u32).to_le_bytes());
        }
        for v in &self.pixels {
            h.update(v.f64().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
