//! Shared fixtures for the benchmarks.

use distill_cl_core::{seed, ImageShape, LabeledSet};
use rand::Rng;

pub const MNIST_SHAPE: ImageShape = ImageShape {
    channels: 1,
    height: 28,
    width: 28,
};

/// Uniform-noise images with labels cycling through `classes`.
pub fn noise_set(n: usize, classes: usize, seed_value: u64) -> LabeledSet<f32> {
    let mut rng = seed::rng(seed_value);
    let pixels = (0..n * MNIST_SHAPE.len())
        .map(|_| rng.gen::<f32>())
        .collect();
    LabeledSet::new(
        MNIST_SHAPE,
        classes,
        pixels,
        (0..n).map(|i| i % classes).collect(),
    )
    .expect("consistent fixture")
}
