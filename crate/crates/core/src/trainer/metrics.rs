use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::scenario::{ScenarioKind, ScenarioManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    CumulativeBaseline,
    FixedLargest,
    Adaptive,
    NaiveForgetting,
}

impl Regime {
    /// Table order.
    pub const ALL: [Regime; 4] = [
        Regime::CumulativeBaseline,
        Regime::FixedLargest,
        Regime::Adaptive,
        Regime::NaiveForgetting,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::CumulativeBaseline => "cumulative_baseline",
            Regime::FixedLargest => "fixed_largest",
            Regime::Adaptive => "adaptive",
            Regime::NaiveForgetting => "naive_forgetting",
        }
    }

    /// Short row label used in comparison tables.
    pub fn label(&self) -> &'static str {
        match self {
            Regime::CumulativeBaseline => "baseline",
            Regime::FixedLargest => "largest",
            Regime::Adaptive => "adaptive",
            Regime::NaiveForgetting => "naive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s || r.label() == s)
    }

    pub fn distills(&self) -> bool {
        matches!(self, Regime::Adaptive | Regime::FixedLargest)
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub t: usize,
    /// Architecture the recorded accuracy was measured with.
    pub model_spec: String,
    pub model_depth: usize,
    pub grown: usize,
    pub ladder_exhausted: bool,
    /// Micro-averaged accuracy on the union of test sets `1..=t`.
    pub accuracy: f64,
    pub macro_accuracy: f64,
    pub test_samples: usize,
    pub train_samples: usize,
    pub distill_flops: u64,
    pub train_flops: u64,
    pub cumulative_train_flops: u64,
    /// Distillation plus training, summed over steps `1..=t`.
    pub cumulative_flops: u64,
    pub buffer_images: usize,
    pub buffer_bytes: u64,
    pub distill_loss_start: Option<f64>,
    pub distill_loss_end: Option<f64>,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRef {
    pub id: String,
    pub kind: ScenarioKind,
    pub dataset: String,
    pub seed: u64,
    pub n_steps: usize,
    pub full_train_size: usize,
    pub full_train_bytes: u64,
}

impl ScenarioRef {
    pub fn new(manifest: &ScenarioManifest, shape: ImageShape) -> Self {
        ScenarioRef {
            id: manifest.id(),
            kind: manifest.kind,
            dataset: manifest.dataset.clone(),
            seed: manifest.seed,
            n_steps: manifest.n_steps,
            full_train_size: manifest.full_train_size,
            full_train_bytes: full_train_bytes(manifest.full_train_size, shape),
        }
    }
}

/// Bytes of `images` f32 images of `shape`.
pub fn full_train_bytes(images: usize, shape: ImageShape) -> u64 {
    (images * shape.len() * std::mem::size_of::<f32>()) as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub end_accuracy: f64,
    pub average_accuracy: f64,
    pub cumulative_flops: u64,
    pub cumulative_train_flops: u64,
    pub final_buffer_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub schema_version: u32,
    pub scenario: ScenarioRef,
    pub regime: Regime,
    pub master_seed: u64,
    pub steps: Vec<StepMetrics>,
    pub summary: Option<RunSummary>,
    /// Set when the run aborted; `steps` then holds the completed prefix.
    pub failure: Option<String>,
}

impl RunLog {
    pub fn new(scenario: ScenarioRef, regime: Regime, master_seed: u64) -> Self {
        RunLog {
            schema_version: 1,
            scenario,
            regime,
            master_seed,
            steps: Vec::new(),
            summary: None,
            failure: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
            && self.steps.len() == self.scenario.n_steps
            && !self.steps.is_empty()
    }

    pub fn finish(&mut self) {
        self.summary = self.steps.last().map(|last| RunSummary {
            end_accuracy: last.accuracy,
            average_accuracy: self.steps.iter().map(|s| s.accuracy).sum::<f64>()
                / self.steps.len() as f64,
            cumulative_flops: last.cumulative_flops,
            cumulative_train_flops: last.cumulative_train_flops,
            final_buffer_bytes: last.buffer_bytes,
        });
    }

    pub fn check(&self) -> Result<()> {
        if !self.is_complete() {
            return Err(Error::InvalidArgument(format!(
                "{} log is incomplete ({} of {} steps{})",
                self.regime,
                self.steps.len(),
                self.scenario.n_steps,
                self.failure
                    .as_deref()
                    .map(|f| format!(", failed: {f}"))
                    .unwrap_or_default()
            )));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.t != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "{} log has step {} at position {}",
                    self.regime,
                    s.t,
                    i + 1
                )));
            }
            if i > 0 && s.cumulative_flops < self.steps[i - 1].cumulative_flops {
                return Err(Error::InvalidArgument(format!(
                    "{} log: cumulative FLOPs decrease at step {}",
                    self.regime, s.t
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub end_accuracy: f64,
    pub average_accuracy: f64,
    /// Total FLOPs (distillation and training) relative to the reference.
    pub needed_flops_fraction: f64,
    /// Training FLOPs only, relative to the reference.
    pub needed_train_flops_fraction: f64,
    pub memory_fraction: f64,
}

pub fn aggregate(log: &RunLog, reference: &RunLog) -> Result<Aggregates> {
    log.check()?;
    reference.check()?;
    if log.scenario != reference.scenario {
        return Err(Error::InvalidArgument(format!(
            "scenario mismatch: {} log is on {}, reference on {}",
            log.regime, log.scenario.id, reference.scenario.id
        )));
    }
    let (me, re) = (log.steps.last().unwrap(), reference.steps.last().unwrap());
    let ratio = |a: u64, b: u64| {
        if b == 0 {
            f64::NAN
        } else {
            a as f64 / b as f64
        }
    };
    Ok(Aggregates {
        end_accuracy: me.accuracy,
        average_accuracy: log.steps.iter().map(|s| s.accuracy).sum::<f64>()
            / log.steps.len() as f64,
        needed_flops_fraction: ratio(me.cumulative_flops, re.cumulative_flops),
        needed_train_flops_fraction: ratio(me.cumulative_train_flops, re.cumulative_train_flops),
        memory_fraction: me.buffer_bytes as f64 / log.scenario.full_train_bytes as f64,
    })
}
