//! Analytic FLOPs accounting.
//!
//! Conventions: one multiply-accumulate is 2 FLOPs and every conv tap is
//! counted, including taps that land on zero padding. Per activation,
//! normalization costs 8 FLOPs (mean 1, variance 3, normalize and affine 4)
//! plus 5 per group and sample (two divisions, epsilon, square root and
//! reciprocal), ReLU 1, and each pooled output 4 (three adds and a scale). The classifier
//! costs `2 * F * classes`. Backward costs twice the forward pass and an
//! optimizer update costs 2 FLOPs per parameter.

use serde::{Deserialize, Serialize};

use super::spec::{pooled, ModelSpec};
use crate::error::Result;

pub const NORM_FLOPS_PER_ACTIVATION: u64 = 8;
pub const NORM_FLOPS_PER_GROUP: u64 = 5;
pub const RELU_FLOPS_PER_ACTIVATION: u64 = 1;
pub const POOL_FLOPS_PER_OUTPUT: u64 = 4;
pub const UPDATE_FLOPS_PER_PARAM: u64 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub conv: u64,
    pub norm: u64,
    pub relu: u64,
    pub pool: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsCount {
    pub forward_per_sample: u64,
    /// Forward plus backward for one sample.
    pub train_step_per_sample: u64,
    /// Optimizer update cost for one step, independent of batch size.
    pub update_per_step: u64,
    pub blocks: Vec<LayerFlops>,
    pub classifier: u64,
}

impl FlopsCount {
    /// Cost of training on `samples` samples with `steps` optimizer updates.
    pub fn training(&self, samples: u64, steps: u64) -> u64 {
        samples * self.train_step_per_sample + steps * self.update_per_step
    }
}

pub fn count_flops(spec: &ModelSpec) -> Result<FlopsCount> {
    spec.validate()?;
    let (mut h, mut w) = (
        spec.input_shape.height as u64,
        spec.input_shape.width as u64,
    );
    let mut blocks = Vec::with_capacity(spec.depth());
    for (b, &cout) in spec.block_widths.iter().enumerate() {
        let cin = spec.block_input_channels(b) as u64;
        let cout = cout as u64;
        let act = cout * h * w;
        let (ph, pw) = (pooled(h as usize) as u64, pooled(w as usize) as u64);
        blocks.push(LayerFlops {
            conv: 2 * 9 * cin * cout * h * w,
            norm: NORM_FLOPS_PER_ACTIVATION * act
                + NORM_FLOPS_PER_GROUP * spec.norm.groups_for(cout as usize) as u64,
            relu: RELU_FLOPS_PER_ACTIVATION * act,
            pool: POOL_FLOPS_PER_OUTPUT * cout * ph * pw,
        });
        h = ph;
        w = pw;
    }
    let classifier = 2 * spec.flatten_dim() as u64 * spec.class_count as u64;
    let forward = blocks
        .iter()
        .map(|l| l.conv + l.norm + l.relu + l.pool)
        .sum::<u64>()
        + classifier;
    Ok(FlopsCount {
        forward_per_sample: forward,
        train_step_per_sample: 3 * forward,
        update_per_step: UPDATE_FLOPS_PER_PARAM * spec.param_count() as u64,
        blocks,
        classifier,
    })
}
