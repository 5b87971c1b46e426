//! Incremental-learning scenarios: class-incremental splits and a
//! rotated-MNIST domain-drift schedule.

mod datasets;

pub use datasets::{
    cache_root, load_array_import, load_cached, load_dataset, parse_cifar_batch, parse_idx_images,
    parse_idx_labels, parse_key_values, raw_dir, DatasetName, CACHE_ENV, CIFAR_RECORD,
};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::LabeledSet;
use crate::distill::{augment_pixels, AugmentOp, AugmentationDraw};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ClassIncremental,
    DomainDrift,
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioStep {
    /// 1-based step index.
    pub t: usize,
    pub train: LabeledSet<f32>,
    pub test: LabeledSet<f32>,
    pub classes_present: BTreeSet<usize>,
    /// Per-image clockwise rotation in degrees, for rotated scenarios.
    pub train_angles: Option<Vec<f64>>,
    pub test_angles: Option<Vec<f64>>,
}

/// Generation parameters, sufficient to regenerate a scenario from its source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum ScenarioParams {
    ClassIncremental {
        classes_per_step: usize,
        class_order: Vec<usize>,
    },
    RotatedMnist {
        steps: usize,
    },
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub dataset_name: String,
    pub seed: u64,
    pub params: ScenarioParams,
    pub steps: Vec<ScenarioStep>,
    /// Denominator for memory fractions.
    pub full_train_size: usize,
    pub notes: Vec<String>,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, t: usize) -> &ScenarioStep {
        &self.steps[t - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .steps
            .first()
            .ok_or_else(|| Error::InvalidArgument("scenario has no steps".into()))?;
        let (shape, classes) = (first.train.shape(), first.train.class_count());
        let mut seen = BTreeSet::new();
        for (i, s) in self.steps.iter().enumerate() {
            if s.t != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "step {} found at position {}",
                    s.t,
                    i + 1
                )));
            }
            for set in [&s.train, &s.test] {
                if set.shape() != shape || set.class_count() != classes {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{shape} with {classes} classes"),
                        actual: format!(
                            "step {}: {} with {} classes",
                            s.t,
                            set.shape(),
                            set.class_count()
                        ),
                    });
                }
            }
            if s.classes_present != s.train.classes_present() {
                return Err(Error::InvalidArgument(format!(
                    "step {} classes_present disagrees with its labels",
                    s.t
                )));
            }
            if self.kind == ScenarioKind::ClassIncremental {
                if !seen.is_disjoint(&s.classes_present) {
                    return Err(Error::InvalidArgument(format!(
                        "step {} repeats a class",
                        s.t
                    )));
                }
                seen.extend(s.classes_present.iter().copied());
            }
        }
        Ok(())
    }

    /// Test sets of steps `1..=upto_t`, concatenated (micro-averaging union).
    pub fn cumulative_test(&self, upto_t: usize) -> Result<LabeledSet<f32>> {
        if upto_t == 0 || upto_t > self.len() {
            return Err(Error::InvalidArgument(format!(
                "step {upto_t} outside 1..={}",
                self.len()
            )));
        }
        let first = &self.steps[0].test;
        LabeledSet::concat(
            first.shape(),
            first.class_count(),
            self.steps[..upto_t].iter().map(|s| &s.test),
        )
    }

    pub fn manifest(&self) -> ScenarioManifest {
        ScenarioManifest {
            schema: 1,
            kind: self.kind,
            dataset: self.dataset_name.clone(),
            seed: self.seed,
            params: self.params.clone(),
            n_steps: self.len(),
            full_train_size: self.full_train_size,
            steps: self
                .steps
                .iter()
                .map(|s| StepSummary {
                    t: s.t,
                    train_size: s.train.len(),
                    test_size: s.test.len(),
                    classes_present: s.classes_present.iter().copied().collect(),
                    train_checksum: s.train.checksum(),
                    test_checksum: s.test.checksum(),
                })
                .collect(),
            notes: self.notes.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub classes_present: Vec<usize>,
    pub train_checksum: String,
    pub test_checksum: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub schema: u32,
    pub kind: ScenarioKind,
    pub dataset: String,
    pub seed: u64,
    pub params: ScenarioParams,
    pub n_steps: usize,
    pub full_train_size: usize,
    pub steps: Vec<StepSummary>,
    pub notes: Vec<String>,
}

impl ScenarioManifest {
    /// Stable identifier of the scenario content.
    pub fn id(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Rebuild the scenario from the source data it was generated from.
    pub fn regenerate(&self, train: &LabeledSet<f32>, test: &LabeledSet<f32>) -> Result<Scenario> {
        let s = match &self.params {
            ScenarioParams::ClassIncremental {
                classes_per_step, ..
            } => class_incremental(train, test, *classes_per_step, self.seed)?,
            ScenarioParams::RotatedMnist { steps } => {
                rotated_mnist(train, test, *steps, self.seed)?
            }
            ScenarioParams::Custom => {
                return Err(Error::InvalidArgument(
                    "custom scenarios cannot be regenerated".into(),
                ))
            }
        };
        let mut s = s;
        s.dataset_name = self.dataset.clone();
        if s.manifest() != *self {
            return Err(Error::Checksum {
                what: "regenerated scenario".into(),
                expected: self.id(),
                actual: s.manifest().id(),
            });
        }
        Ok(s)
    }
}

fn restrict(set: &LabeledSet<f32>, classes: &BTreeSet<usize>) -> LabeledSet<f32> {
    let idx: Vec<usize> = (0..set.len())
        .filter(|&i| classes.contains(&set.labels()[i]))
        .collect();
    set.select(&idx)
}

/// Split into steps of `classes_per_step` disjoint classes in a seeded order.
/// When the class count is not divisible, the last step takes the remainder.
pub fn class_incremental(
    train: &LabeledSet<f32>,
    test: &LabeledSet<f32>,
    classes_per_step: usize,
    seed: u64,
) -> Result<Scenario> {
    let vocabulary: Vec<usize> = train.classes_present().into_iter().collect();
    if classes_per_step == 0 || classes_per_step > vocabulary.len() {
        return Err(Error::InvalidArgument(format!(
            "classes_per_step {classes_per_step} must be in 1..={}",
            vocabulary.len()
        )));
    }
    if test.shape() != train.shape() || test.class_count() != train.class_count() {
        return Err(Error::ShapeMismatch {
            expected: train.shape().to_string(),
            actual: test.shape().to_string(),
        });
    }
    let mut order = vocabulary.clone();
    order.shuffle(&mut seed::derived_rng(seed, "class-order", 0));
    let mut notes = Vec::new();
    if vocabulary.len() % classes_per_step != 0 {
        notes.push(format!(
            "{} classes are not divisible by {classes_per_step}; the last step holds {}",
            vocabulary.len(),
            vocabulary.len() % classes_per_step
        ));
    }
    let steps: Vec<ScenarioStep> = order
        .chunks(classes_per_step)
        .enumerate()
        .map(|(i, group)| {
            let classes: BTreeSet<usize> = group.iter().copied().collect();
            let step_train = restrict(train, &classes);
            ScenarioStep {
                t: i + 1,
                classes_present: step_train.classes_present(),
                test: restrict(test, &classes),
                train: step_train,
                train_angles: None,
                test_angles: None,
            }
        })
        .collect();
    let full_train_size = steps.iter().map(|s| s.train.len()).sum();
    let scenario = Scenario {
        kind: ScenarioKind::ClassIncremental,
        dataset_name: String::new(),
        seed,
        params: ScenarioParams::ClassIncremental {
            classes_per_step,
            class_order: order,
        },
        steps,
        full_train_size,
        notes,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Closed interval of train rotations (degrees) at 1-based step `i >= 2`.
pub fn train_angle_range(i: usize) -> (f64, f64) {
    (20.0 * (i as f64 - 2.0), 20.0 * (i as f64 - 1.0))
}

/// Closed interval of test rotations (degrees) at 1-based step `i >= 2`.
pub fn test_angle_range(i: usize) -> (f64, f64) {
    (0.0, 20.0 * (i as f64 - 1.0))
}

fn rotate_all(
    set: &LabeledSet<f32>,
    range: (f64, f64),
    rng: &mut seed::Rng,
) -> (LabeledSet<f32>, Vec<f64>) {
    let mut out = set.clone();
    let mut angles = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let degrees = rng.gen_range(range.0..=range.1);
        let rotated = augment_pixels(
            set.image(i),
            set.shape(),
            &AugmentationDraw {
                op: AugmentOp::Rotate { degrees },
            },
        );
        for (dst, v) in out.image_mut(i).iter_mut().zip(rotated) {
            *dst = v.clamp(0.0, 1.0);
        }
        angles.push(degrees);
    }
    (out, angles)
}

/// Domain drift by rotation: step 1 is the unmodified data; at step `i >= 2`
/// every train image is rotated clockwise by an independent angle from
/// `U[20(i-2), 20(i-1)]` and every test image by one from `U[0, 20(i-1)]`.
pub fn rotated_mnist(
    train: &LabeledSet<f32>,
    test: &LabeledSet<f32>,
    steps: usize,
    seed: u64,
) -> Result<Scenario> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "rotated scenario needs at least one step".into(),
        ));
    }
    let mut out = Vec::with_capacity(steps);
    for i in 1..=steps {
        let (step_train, step_test, ta, tea) = if i == 1 {
            (train.clone(), test.clone(), None, None)
        } else {
            let mut rng = seed::derived_rng(seed, "rotation", i as u64);
            let (tr, ta) = rotate_all(train, train_angle_range(i), &mut rng);
            let (te, tea) = rotate_all(test, test_angle_range(i), &mut rng);
            (tr, te, Some(ta), Some(tea))
        };
        out.push(ScenarioStep {
            t: i,
            classes_present: step_train.classes_present(),
            train: step_train,
            test: step_test,
            train_angles: ta,
            test_angles: tea,
        });
    }
    let scenario = Scenario {
        kind: ScenarioKind::DomainDrift,
        dataset_name: "mnist".into(),
        seed,
        params: ScenarioParams::RotatedMnist { steps },
        steps: out,
        full_train_size: train.len(),
        notes: Vec::new(),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Seeded class-stratified subset of about `n` samples (proportional per class).
pub fn stratified_subset(set: &LabeledSet<f32>, n: usize, seed: u64) -> LabeledSet<f32> {
    if n >= set.len() {
        return set.clone();
    }
    let mut rng = seed::derived_rng(seed, "subset", 0);
    let mut chosen = Vec::with_capacity(n);
    let classes: Vec<usize> = set.classes_present().into_iter().collect();
    let mut remaining = n;
    for (k, &c) in classes.iter().enumerate() {
        let mut idx = set.indices_of_class(c);
        let left_classes = classes.len() - k;
        let take = if left_classes == 1 {
            remaining
        } else {
            ((idx.len() as f64 * n as f64 / set.len() as f64).round() as usize).min(remaining)
        }
        .min(idx.len());
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..take]);
        remaining -= take;
    }
    chosen.sort_unstable();
    set.select(&chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageShape;

    fn toy(per_class: usize, classes: usize) -> LabeledSet<f32> {
        let shape = ImageShape::new(1, 6, 6);
        let labels: Vec<usize> = (0..per_class * classes).map(|i| i % classes).collect();
        let pixels = (0..labels.len() * 36)
            .map(|i| ((i * 7) % 11) as f32 / 10.0)
            .collect();
        LabeledSet::new(shape, classes, pixels, labels).unwrap()
    }

    #[test]
    fn class_incremental_partitions_the_train_set() {
        let (train, test) = (toy(20, 10), toy(5, 10));
        let s = class_incremental(&train, &test, 1, 3).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.full_train_size, train.len());
        let mut all = BTreeSet::new();
        for step in &s.steps {
            assert_eq!(step.classes_present.len(), 1);
            assert!(all.is_disjoint(&step.classes_present));
            all.extend(step.classes_present.iter().copied());
            assert_eq!(step.train.len(), 20);
            assert_eq!(step.test.classes_present(), step.classes_present);
        }
        let single = class_incremental(&train, &test, 10, 3).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.steps[0].train.len(), train.len());
        assert!(class_incremental(&train, &test, 11, 3).is_err());
        let uneven = class_incremental(&train, &test, 3, 3).unwrap();
        assert_eq!(uneven.len(), 4);
        assert_eq!(uneven.steps[3].classes_present.len(), 1);
        assert_eq!(uneven.notes.len(), 1);
    }

    #[test]
    fn rotated_steps_respect_angle_bounds() {
        let (train, test) = (toy(3, 10), toy(2, 10));
        let s = rotated_mnist(&train, &test, 10, 3).unwrap();
        assert_eq!(s.steps[0].train, train);
        assert_eq!(s.steps[0].test, test);
        for step in &s.steps[1..] {
            let (lo, hi) = train_angle_range(step.t);
            assert!(step
                .train_angles
                .as_ref()
                .unwrap()
                .iter()
                .all(|a| (lo..=hi).contains(a)));
            let (lo, hi) = test_angle_range(step.t);
            assert!(step
                .test_angles
                .as_ref()
                .unwrap()
                .iter()
                .all(|a| (lo..=hi).contains(a)));
            assert!(step.train.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(step.classes_present.len(), 10);
        }
        assert_eq!(train_angle_range(2), (0.0, 20.0));
        assert_eq!(train_angle_range(10), (160.0, 180.0));
        assert_eq!(test_angle_range(6), (0.0, 100.0));
        assert_eq!(s.full_train_size, train.len());
    }

    #[test]
    fn manifest_regenerates_identically() {
        let (train, test) = (toy(3, 10), toy(2, 10));
        let s = rotated_mnist(&train, &test, 6, 3).unwrap();
        let m = s.manifest();
        let again = m.regenerate(&train, &test).unwrap();
        assert_eq!(again.steps[4].train.checksum(), s.steps[4].train.checksum());
        let other = rotated_mnist(&train, &test, 6, 4).unwrap();
        assert_ne!(
            other.manifest().steps[4].train_checksum,
            m.steps[4].train_checksum
        );

        let ci = class_incremental(&train, &test, 2, 1).unwrap();
        let again = ci.manifest().regenerate(&train, &test).unwrap();
        assert_eq!(again, ci);
    }

    #[test]
    fn stratified_subset_keeps_proportions() {
        let set = toy(30, 4);
        let sub = stratified_subset(&set, 40, 1);
        assert_eq!(sub.len(), 40);
        for c in 0..4 {
            assert_eq!(sub.indices_of_class(c).len(), 10);
        }
    }
}
