//! Dataset distillation by distribution matching.

mod buffer;
mod dm;
mod dsa;

pub use buffer::{BufferEntry, BufferTotals, DistilledBuffer};
pub use dm::{dm_loss, dm_loss_grad, dm_loss_param_grad, DmLoss};
pub use dsa::{
    augment_backward, augment_pixels, dsa_apply, AugmentKind, AugmentOp, AugmentationDraw,
    CUTOUT_FRACTION, MAX_ROTATION_DEGREES, MAX_SHIFT_FRACTION, SCALE_RANGE,
};

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::model::{count_flops, ModelParams, ModelSpec, UPDATE_FLOPS_PER_PARAM};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Noise,
    RealSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub ipc: usize,
    pub outer_steps: usize,
    /// Step size at the first outer step.
    pub synth_lr: f64,
    /// Step size at the last outer step; cosine decay in between.
    pub synth_lr_final: f64,
    pub real_batch_per_class: usize,
    pub init_mode: InitMode,
    /// Augmentations sampled from when non-empty; empty disables DSA.
    pub dsa_ops: Vec<AugmentKind>,
    /// Architecture of the randomly initialized feature extractors.
    pub distill_spec: ModelSpec,
    pub seed: u64,
}

impl DistillConfig {
    pub fn new(distill_spec: ModelSpec) -> Self {
        DistillConfig {
            ipc: 10,
            outer_steps: 1000,
            synth_lr: 1.0,
            synth_lr_final: 0.1,
            real_batch_per_class: 256,
            init_mode: InitMode::RealSample,
            dsa_ops: AugmentKind::ALL.to_vec(),
            distill_spec,
            seed: 0,
        }
    }

    pub fn dsa_enabled(&self) -> bool {
        !self.dsa_ops.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.ipc == 0 {
            problems.push("ipc must be at least 1".to_string());
        }
        if self.outer_steps == 0 {
            problems.push("outer_steps must be at least 1".to_string());
        }
        if !(self.synth_lr >= 0.0 && self.synth_lr.is_finite()) {
            problems.push(format!(
                "synth_lr must be a finite non-negative number, got {}",
                self.synth_lr
            ));
        }
        if !(self.synth_lr_final >= 0.0 && self.synth_lr_final.is_finite()) {
            problems.push(format!(
                "synth_lr_final must be finite and non-negative, got {}",
                self.synth_lr_final
            ));
        }
        if self.real_batch_per_class == 0 {
            problems.push("real_batch_per_class must be at least 1".to_string());
        }
        if let Err(e) = self.distill_spec.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }

    /// Synthetic step size at outer step `k` (0-based).
    pub fn lr_at(&self, k: usize) -> f64 {
        if self.outer_steps <= 1 {
            return self.synth_lr;
        }
        let t = k as f64 / (self.outer_steps - 1) as f64;
        self.synth_lr_final + (self.synth_lr - self.synth_lr_final) * 0.5 * (1.0 + (PI * t).cos())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticInit {
    pub set: LabeledSet<f32>,
    /// Classes with fewer than `ipc` real samples, initialized with replacement.
    pub fallback_classes: Vec<usize>,
}

/// `ipc` starting images for every class present in `real`, class-major.
pub fn init_synthetic(real: &LabeledSet<f32>, cfg: &DistillConfig) -> Result<SyntheticInit> {
    let mut rng = seed::derived_rng(cfg.seed, "synthetic-init", 0);
    let mut set = LabeledSet::empty(real.shape(), real.class_count());
    let mut fallback_classes = Vec::new();
    let per = real.shape().len();
    for class in real.classes_present() {
        match cfg.init_mode {
            InitMode::Noise => {
                for _ in 0..cfg.ipc {
                    let img: Vec<f32> = (0..per).map(|_| rng.gen::<f32>()).collect();
                    set.push(&img, class)?;
                }
            }
            InitMode::RealSample => {
                let idx = real.indices_of_class(class);
                let chosen: Vec<usize> = if idx.len() >= cfg.ipc {
                    sample(&mut rng, idx.len(), cfg.ipc)
                        .into_iter()
                        .map(|k| idx[k])
                        .collect()
                } else {
                    fallback_classes.push(class);
                    (0..cfg.ipc)
                        .map(|_| idx[rng.gen_range(0..idx.len())])
                        .collect()
                };
                for i in chosen {
                    set.push(real.image(i), class)?;
                }
            }
        }
    }
    Ok(SyntheticInit {
        set,
        fallback_classes,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillOutcome {
    pub synthetic: LabeledSet<f32>,
    /// Loss before the update at each outer step.
    pub losses: Vec<f64>,
    pub flops: u64,
    pub fallback_classes: Vec<usize>,
}

/// Draw a per-class real batch of at most `per_class` images.
fn sample_real_batch(real: &LabeledSet<f32>, per_class: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let mut picked = Vec::new();
    for class in real.classes_present() {
        let idx = real.indices_of_class(class);
        let take = per_class.min(idx.len());
        let mut chosen: Vec<usize> = sample(rng, idx.len(), take)
            .into_iter()
            .map(|k| idx[k])
            .collect();
        chosen.sort_unstable();
        picked.extend(chosen);
    }
    picked
}

/// Run distribution matching on `real` and return the distilled images.
///
/// Every outer step draws a fresh network, a per-class real batch and, with
/// DSA enabled, one augmentation shared by the real and synthetic batches,
/// then takes one plain gradient step on the synthetic pixels and clamps them
/// to `[0, 1]`.
pub fn distill(real: &LabeledSet<f32>, cfg: &DistillConfig) -> Result<DistillOutcome> {
    cfg.validate()?;
    let spec = &cfg.distill_spec;
    if spec.input_shape != real.shape() || spec.class_count != real.class_count() {
        return Err(Error::ShapeMismatch {
            expected: format!(
                "{} with {} classes (distill spec)",
                spec.input_shape, spec.class_count
            ),
            actual: format!("{} with {} classes", real.shape(), real.class_count()),
        });
    }
    if real.is_empty() {
        return Err(Error::InvalidArgument("cannot distill an empty set".into()));
    }
    let SyntheticInit {
        set: mut synthetic,
        fallback_classes,
    } = init_synthetic(real, cfg)?;
    let flops = count_flops(spec)?;
    let mut total_flops = 0u64;
    let mut losses = Vec::with_capacity(cfg.outer_steps);

    for k in 0..cfg.outer_steps {
        let net = ModelParams::<f32>::init(spec, seed::derive(cfg.seed, "dm-net", k as u64))?;
        let mut rng = seed::derived_rng(cfg.seed, "dm-batch", k as u64);
        let batch = real.select(&sample_real_batch(real, cfg.real_batch_per_class, &mut rng));
        let draw = cfg
            .dsa_enabled()
            .then(|| AugmentationDraw::sample(&mut rng, real.shape(), &cfg.dsa_ops));

        let (loss, grad) =
            dm_loss_grad(&net, &batch, &synthetic, draw.as_ref()).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("outer step {k}: {what}")),
                other => other,
            })?;
        losses.push(loss.value);

        let lr = cfg.lr_at(k) as f32;
        if lr != 0.0 {
            for (p, g) in synthetic.pixels_mut().iter_mut().zip(&grad) {
                *p = (*p - lr * g).clamp(0.0, 1.0);
            }
        }
        total_flops += batch.len() as u64 * flops.forward_per_sample
            + synthetic.len() as u64 * flops.train_step_per_sample
            + UPDATE_FLOPS_PER_PARAM * synthetic.pixels().len() as u64;
    }
    Ok(DistillOutcome {
        synthetic,
        losses,
        flops: total_flops,
        fallback_classes,
    })
}

/// FLOPs charged by [`distill`] for the given batch composition.
pub fn distill_flops(
    cfg: &DistillConfig,
    real_batch_images: u64,
    synthetic_images: u64,
) -> Result<u64> {
    let f = count_flops(&cfg.distill_spec)?;
    let pixels = synthetic_images * cfg.distill_spec.input_shape.len() as u64;
    Ok(cfg.outer_steps as u64
        * (real_batch_images * f.forward_per_sample
            + synthetic_images * f.train_step_per_sample
            + UPDATE_FLOPS_PER_PARAM * pixels))
}
