use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::model::{count_flops, Loss, ModelParams, Reduction, Want};
use crate::seed;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd_momentum" | "sgd" => Some(OptimizerKind::SgdMomentum),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

impl LrSchedule {
    pub fn as_str(&self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(LrSchedule::Constant),
            "cosine" => Some(LrSchedule::Cosine),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Only used by SGD.
    pub momentum: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(30)
    }
}

impl OptimizerConfig {
    /// Adam, lr 0.01, batch 256, weight decay 5e-4, constant schedule.
    pub fn adam(epochs: usize) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 256,
            epochs,
            lr_schedule: LrSchedule::Constant,
        }
    }

    /// SGD with momentum 0.9, weight decay 5e-4 and a cosine schedule.
    pub fn sgd(lr: f64, epochs: usize) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            lr,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 256,
            epochs,
            lr_schedule: LrSchedule::Cosine,
        }
    }

    /// Every violated constraint, for reporting all at once.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            p.push(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            p.push(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            p.push(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 {
            p.push("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            p.push("epochs must be at least 1".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(p.join("; ")))
        }
    }

    pub fn effective_batch(&self, n: usize) -> usize {
        self.batch_size.min(n).max(1)
    }

    /// Optimizer updates performed on `n` samples.
    pub fn update_steps(&self, n: usize) -> u64 {
        (self.epochs * n.div_ceil(self.effective_batch(n))) as u64
    }

    fn lr_at(&self, step: u64, total: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                self.lr * 0.5 * (1.0 + (PI * step as f64 / total.max(1) as f64).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub update_steps: u64,
    pub samples_seen: u64,
    pub flops: u64,
    /// Mean batch loss of the last epoch.
    pub final_loss: f64,
}

/// FLOPs charged for training `spec` on `n` samples with `opt`.
pub fn training_flops(
    spec: &crate::model::ModelSpec,
    n: usize,
    opt: &OptimizerConfig,
) -> Result<u64> {
    let f = count_flops(spec)?;
    Ok(f.training((opt.epochs * n) as u64, opt.update_steps(n)))
}

struct OptState {
    first: Vec<f32>,
    second: Vec<f32>,
    t: i32,
}

/// Minibatch training on mean cross-entropy. Batches are reshuffled every
/// epoch from `seed`; the last batch of an epoch may be short.
pub fn train_model(
    mut params: ModelParams<f32>,
    data: &LabeledSet<f32>,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<(ModelParams<f32>, TrainReport)> {
    opt.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let n = data.len();
    let batch = opt.effective_batch(n);
    let total = opt.update_steps(n);
    let mut state = OptState {
        first: vec![0.0; params.len()],
        second: if opt.kind == OptimizerKind::Adam {
            vec![0.0; params.len()]
        } else {
            Vec::new()
        },
        t: 0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0u64;
    let mut final_loss = 0.0;
    for epoch in 0..opt.epochs {
        order.shuffle(&mut seed::derived_rng(seed, "epoch", epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let mb = data.select(&idx);
            let (loss, grads) = params
                .backward(&mb, Loss::CrossEntropy(Reduction::Mean), Want::PARAMS)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b}: loss is {loss}"
                )));
            }
            let grad = grads.params.expect("parameter gradients requested");
            apply_update(
                &mut params,
                &grad,
                opt,
                opt.lr_at(step, total) as f32,
                &mut state,
            );
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        final_loss = epoch_loss / batches as f64;
    }
    let flops = training_flops(params.spec(), n, opt)?;
    Ok((
        params,
        TrainReport {
            update_steps: step,
            samples_seen: (opt.epochs * n) as u64,
            flops,
            final_loss,
        },
    ))
}

fn apply_update(
    params: &mut ModelParams<f32>,
    grad: &[f32],
    opt: &OptimizerConfig,
    lr: f32,
    s: &mut OptState,
) {
    let wd = opt.weight_decay as f32;
    let w = params.values_mut();
    match opt.kind {
        OptimizerKind::SgdMomentum => {
            let mu = opt.momentum as f32;
            for ((w, &g), v) in w.iter_mut().zip(grad).zip(s.first.iter_mut()) {
                *v = mu * *v + g + wd * *w;
                *w -= lr * *v;
            }
        }
        OptimizerKind::Adam => {
            s.t += 1;
            let (b1, b2) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32);
            let c1 = 1.0 - b1.powi(s.t);
            let c2 = 1.0 - b2.powi(s.t);
            for (((w, &g), m), v) in w
                .iter_mut()
                .zip(grad)
                .zip(s.first.iter_mut())
                .zip(s.second.iter_mut())
            {
                let g = g + wd * *w;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS as f32);
            }
        }
    }
}
