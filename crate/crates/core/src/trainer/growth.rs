use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{count_flops, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GrowthRule {
    /// Grow when accuracy drops below `factor` times the best earlier accuracy.
    Relative { factor: f64 },
    /// Grow when accuracy is below a fixed standard.
    Absolute { a_standard: f64 },
}

impl Default for GrowthRule {
    fn default() -> Self {
        GrowthRule::Relative { factor: 0.95 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthPolicy {
    pub ladder: Vec<ModelSpec>,
    pub rule: GrowthRule,
    pub max_growths_per_step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowthDecision {
    pub spec: ModelSpec,
    pub grown: bool,
    /// Accuracy was below the standard but no larger entry exists.
    pub ladder_exhausted: bool,
}

impl GrowthPolicy {
    pub fn new(ladder: Vec<ModelSpec>) -> Result<Self> {
        let p = GrowthPolicy {
            ladder,
            rule: GrowthRule::default(),
            max_growths_per_step: 1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.ladder.is_empty() {
            p.push("ladder must hold at least one model".into());
        }
        let mut prev: Option<u64> = None;
        for (i, spec) in self.ladder.iter().enumerate() {
            match count_flops(spec) {
                Ok(f) => {
                    if prev.is_some_and(|q| f.forward_per_sample <= q) {
                        p.push(format!(
                            "ladder entry {i} ({spec}) is not larger than its predecessor"
                        ));
                    }
                    prev = Some(f.forward_per_sample);
                }
                Err(e) => p.push(format!("ladder entry {i}: {e}")),
            }
            if spec.input_shape != self.ladder[0].input_shape
                || spec.class_count != self.ladder[0].class_count
            {
                p.push(format!(
                    "ladder entry {i} ({spec}) disagrees on input shape or classes"
                ));
            }
        }
        match self.rule {
            GrowthRule::Relative { factor } if !(factor > 0.0 && factor <= 1.0) => p.push(format!(
                "relative growth factor must be in (0, 1], got {factor}"
            )),
            GrowthRule::Absolute { a_standard } if !(a_standard > 0.0 && a_standard <= 1.0) => {
                p.push(format!("a_standard must be in (0, 1], got {a_standard}"))
            }
            _ => {}
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

    pub fn smallest(&self) -> &ModelSpec {
        &self.ladder[0]
    }

    pub fn largest(&self) -> &ModelSpec {
        self.ladder.last().expect("ladder is non-empty")
    }

    pub fn position(&self, spec: &ModelSpec) -> Option<usize> {
        self.ladder.iter().position(|s| s == spec)
    }

    /// Accuracy standard given the best accuracy of earlier steps.
    /// `None` when the relative rule has no history yet.
    pub fn standard(&self, best_earlier: Option<f64>) -> Option<f64> {
        match self.rule {
            GrowthRule::Relative { factor } => best_earlier.map(|b| factor * b),
            GrowthRule::Absolute { a_standard } => Some(a_standard),
        }
    }
}

/// One promotion along the ladder when `accuracy < a_standard`.
pub fn grow_if_needed(
    spec: &ModelSpec,
    accuracy: f64,
    a_standard: f64,
    policy: &GrowthPolicy,
) -> Result<GrowthDecision> {
    let pos = policy
        .position(spec)
        .ok_or_else(|| Error::InvalidArgument(format!("{spec} is not on the growth ladder")))?;
    let below = accuracy < a_standard;
    let next = policy.ladder.get(pos + 1);
    Ok(match (below, next) {
        (true, Some(next)) => GrowthDecision {
            spec: next.clone(),
            grown: true,
            ladder_exhausted: false,
        },
        (true, None) => GrowthDecision {
            spec: spec.clone(),
            grown: false,
            ladder_exhausted: true,
        },
        (false, _) => GrowthDecision {
            spec: spec.clone(),
            grown: false,
            ladder_exhausted: false,
        },
    })
}
