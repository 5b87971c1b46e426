use std::ops::Range;

use rand::Rng as _;

use super::spec::ModelSpec;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::seed;

/// Offsets of one block's tensors inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    /// `(out, in, 3, 3)` kernel.
    pub kernel: Range<usize>,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
}

/// Flat parameter layout, a pure function of the [`ModelSpec`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub blocks: Vec<BlockLayout>,
    /// `(classes, features)` weight matrix.
    pub fc_weight: Range<usize>,
    pub fc_bias: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let mut blocks = Vec::with_capacity(spec.depth());
        for (b, &out) in spec.block_widths.iter().enumerate() {
            let inc = spec.block_input_channels(b);
            blocks.push(BlockLayout {
                in_channels: inc,
                out_channels: out,
                groups: spec.norm.groups_for(out),
                kernel: take(out * inc * 9),
                gamma: take(out),
                beta: take(out),
            });
        }
        let fc_weight = take(spec.class_count * spec.flatten_dim());
        let fc_bias = take(spec.class_count);
        ParamLayout {
            blocks,
            fc_weight,
            fc_bias,
            total: at,
        }
    }
}

/// Learnable parameters of a ConvNetD network, stored as one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    spec: ModelSpec,
    layout: ParamLayout,
    seed: u64,
    values: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: He-uniform conv kernels (bound `sqrt(6 / fan_in)`),
    /// classifier weights and bias uniform in `±1/sqrt(features)`, norm scale 1
    /// and shift 0. Values are drawn in `f64` so both precisions agree.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = ParamLayout::new(spec);
        let mut values = vec![0.0f64; layout.total];
        let mut rng = seed::rng(seed);
        for b in &layout.blocks {
            let bound = (6.0 / (b.in_channels * 9) as f64).sqrt();
            for v in &mut values[b.kernel.clone()] {
                *v = rng.gen_range(-bound..bound);
            }
            values[b.gamma.clone()].fill(1.0);
        }
        let bound = 1.0 / (spec.flatten_dim() as f64).sqrt();
        for v in &mut values[layout.fc_weight.start..layout.fc_bias.end] {
            *v = rng.gen_range(-bound..bound);
        }
        Ok(ModelParams {
            spec: spec.clone(),
            layout,
            seed,
            values: values.into_iter().map(T::of).collect(),
        })
    }

    pub fn from_values(spec: &ModelSpec, seed: u64, values: Vec<T>) -> Result<Self> {
        spec.validate()?;
        let layout = ParamLayout::new(spec);
        if values.len() != layout.total {
            return Err(crate::Error::ShapeMismatch {
                expected: format!("{} parameters for {spec}", layout.total),
                actual: format!("{} values", values.len()),
            });
        }
        Ok(ModelParams {
            spec: spec.clone(),
            layout,
            seed,
            values,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kernel(&self, block: usize) -> &[T] {
        &self.values[self.layout.blocks[block].kernel.clone()]
    }

    pub fn gamma(&self, block: usize) -> &[T] {
        &self.values[self.layout.blocks[block].gamma.clone()]
    }

    pub fn beta(&self, block: usize) -> &[T] {
        &self.values[self.layout.blocks[block].beta.clone()]
    }

    pub fn fc_weight(&self) -> &[T] {
        &self.values[self.layout.fc_weight.clone()]
    }

    pub fn fc_bias(&self) -> &[T] {
        &self.values[self.layout.fc_bias.clone()]
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            seed: self.seed,
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}
