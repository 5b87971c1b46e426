use serde::{Deserialize, Serialize};

use crate::data::{ImageShape, LabeledSet};
use crate::error::{Error, Result};

/// Synthetic images of one class distilled at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub step_id: usize,
    pub class_id: usize,
    pub images: LabeledSet<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferTotals {
    pub images: usize,
    pub bytes: u64,
}

/// Append-only store of the distilled sets of all recorded steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DistilledBuffer {
    shape: ImageShape,
    class_count: usize,
    entries: Vec<BufferEntry>,
}

impl DistilledBuffer {
    pub fn new(shape: ImageShape, class_count: usize) -> Self {
        DistilledBuffer {
            shape,
            class_count,
            entries: Vec::new(),
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn contains_step(&self, step_id: usize) -> bool {
        self.entries.iter().any(|e| e.step_id == step_id)
    }

    pub fn steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = self.entries.iter().map(|e| e.step_id).collect();
        steps.dedup();
        steps
    }

    pub fn image_count(&self) -> usize {
        self.entries.iter().map(|e| e.images.len()).sum()
    }

    /// Exact payload size: images x C*H*W x 4 bytes.
    pub fn byte_size(&self) -> u64 {
        (self.image_count() * self.shape.len() * std::mem::size_of::<f32>()) as u64
    }

    pub fn totals(&self) -> BufferTotals {
        BufferTotals {
            images: self.image_count(),
            bytes: self.byte_size(),
        }
    }

    /// Record the synthetic set of `step_id`, one entry per class in ascending
    /// class order.
    pub fn append_step(&mut self, step_id: usize, synthetic: &LabeledSet<f32>) -> Result<()> {
        if self.contains_step(step_id) {
            return Err(Error::InvalidArgument(format!(
                "step {step_id} is already recorded in the buffer"
            )));
        }
        if synthetic.shape() != self.shape || synthetic.class_count() != self.class_count {
            return Err(Error::ShapeMismatch {
                expected: format!("{} with {} classes", self.shape, self.class_count),
                actual: format!(
                    "{} with {} classes",
                    synthetic.shape(),
                    synthetic.class_count()
                ),
            });
        }
        for class_id in synthetic.classes_present() {
            self.entries.push(BufferEntry {
                step_id,
                class_id,
                images: synthetic.select(&synthetic.indices_of_class(class_id)),
            });
        }
        Ok(())
    }

    /// Append a pre-split entry (used when reading buffer files).
    pub fn push_entry(&mut self, entry: BufferEntry) -> Result<()> {
        if entry.images.shape() != self.shape
            || entry.images.labels().iter().any(|&l| l != entry.class_id)
        {
            return Err(Error::InvalidArgument(format!(
                "entry for step {} class {} does not match the buffer",
                entry.step_id, entry.class_id
            )));
        }
        if let Some(last) = self.entries.last() {
            if last.step_id > entry.step_id {
                return Err(Error::InvalidArgument(
                    "buffer entries must be in step order".into(),
                ));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    /// All recorded images as one training set, in recording order.
    pub fn training_set(&self) -> LabeledSet<f32> {
        LabeledSet::concat(
            self.shape,
            self.class_count,
            self.entries.iter().map(|e| &e.images),
        )
        .expect("entries share the buffer shape")
    }

    /// Images recorded strictly before `step_id`.
    pub fn training_set_before(&self, step_id: usize) -> LabeledSet<f32> {
        LabeledSet::concat(
            self.shape,
            self.class_count,
            self.entries
                .iter()
                .filter(|e| e.step_id < step_id)
                .map(|e| &e.images),
        )
        .expect("entries share the buffer shape")
    }
}
