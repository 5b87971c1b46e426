use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::growth::{grow_if_needed, GrowthPolicy};
use super::metrics::{Regime, RunLog, ScenarioRef, StepMetrics};
use super::optim::{train_model, OptimizerConfig};
use super::validate::{validate, Accuracy};
use crate::data::LabeledSet;
use crate::distill::{distill, DistillConfig, DistillOutcome, DistilledBuffer};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelSpec};
use crate::scenario::Scenario;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Template for every step; the seed is replaced by a per-step seed.
    pub distill: DistillConfig,
    /// Training on distilled buffers.
    pub opt_distilled: OptimizerConfig,
    /// Training on real data.
    pub opt_real: OptimizerConfig,
    pub policy: GrowthPolicy,
    pub master_seed: u64,
    /// Train on current real plus earlier distilled data, warm-starting the
    /// previous model, instead of a fresh model on the buffer.
    pub mixed: bool,
}

impl RunConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if let Err(e) = self.distill.validate() {
            p.push(format!("distill: {e}"));
        }
        p.extend(
            self.opt_distilled
                .problems()
                .into_iter()
                .map(|s| format!("train distilled: {s}")),
        );
        p.extend(
            self.opt_real
                .problems()
                .into_iter()
                .map(|s| format!("train real: {s}")),
        );
        p.extend(
            self.policy
                .problems()
                .into_iter()
                .map(|s| format!("policy: {s}")),
        );
        if let Some(last) = self.policy.ladder.last() {
            if last.input_shape != self.distill.distill_spec.input_shape
                || last.class_count != self.distill.distill_spec.class_count
            {
                p.push("distill spec and ladder disagree on input shape or classes".into());
            }
        }
        if self.policy.max_growths_per_step == 0 {
            p.push(
                "policy: max_growths_per_step of 0 disables growth; use fixed_largest instead"
                    .into(),
            );
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

    /// Distillation config for step `t`.
    pub fn distill_for(&self, t: usize) -> DistillConfig {
        DistillConfig {
            seed: seed::derive(self.master_seed, "distill", t as u64),
            ..self.distill.clone()
        }
    }

    fn init_seed(&self, t: usize, attempt: usize) -> u64 {
        seed::derive(
            seed::derive(self.master_seed, "init", t as u64),
            "attempt",
            attempt as u64,
        )
    }

    fn shuffle_seed(&self, t: usize, attempt: usize) -> u64 {
        seed::derive(
            seed::derive(self.master_seed, "shuffle", t as u64),
            "attempt",
            attempt as u64,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSplit {
    Train,
    Test,
}

/// One read of scenario data, reported to the audit hook.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataAccess {
    pub regime: Regime,
    pub at_step: usize,
    pub source_step: usize,
    pub split: DataSplit,
    pub samples: usize,
    pub purpose: &'static str,
}

/// Distillation results keyed by step, shared between regimes that distill
/// identically.
#[derive(Clone, Debug, Default)]
pub struct DistillCache {
    steps: BTreeMap<usize, DistillOutcome>,
}

impl DistillCache {
    pub fn new() -> Self {
        DistillCache::default()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn get(&self, t: usize) -> Option<&DistillOutcome> {
        self.steps.get(&t)
    }
}

#[derive(Default)]
pub struct RunContext<'a> {
    pub cache: Option<&'a mut DistillCache>,
    pub audit: Option<&'a mut dyn FnMut(&DataAccess)>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: RunLog,
    /// Distilled buffer at the end of the run, for distilling regimes.
    pub buffer: Option<DistilledBuffer>,
    pub params: ModelParams<f32>,
}

#[derive(Debug)]
pub struct RunFailure {
    pub partial: RunLog,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} run failed: {}", self.partial.regime, self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn stage<T>(step: usize, stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        step,
        stage,
        source: Box::new(e),
    })
}

struct Runner<'s, 'c, 'a> {
    scenario: &'s Scenario,
    cfg: &'c RunConfig,
    regime: Regime,
    ctx: RunContext<'a>,
}

impl Runner<'_, '_, '_> {
    fn audit(
        &mut self,
        at_step: usize,
        source_step: usize,
        split: DataSplit,
        purpose: &'static str,
    ) {
        if let Some(hook) = self.ctx.audit.as_deref_mut() {
            let s = self.scenario.step(source_step);
            let samples = match split {
                DataSplit::Train => s.train.len(),
                DataSplit::Test => s.test.len(),
            };
            hook(&DataAccess {
                regime: self.regime,
                at_step,
                source_step,
                split,
                samples,
                purpose,
            });
        }
    }

    fn real_train(
        &mut self,
        at_step: usize,
        source_step: usize,
        purpose: &'static str,
    ) -> &LabeledSet<f32> {
        self.audit(at_step, source_step, DataSplit::Train, purpose);
        &self.scenario.step(source_step).train
    }

    fn distilled(&mut self, t: usize) -> Result<DistillOutcome> {
        self.audit(t, t, DataSplit::Train, "distill");
        let real = &self.scenario.step(t).train;
        if let Some(hit) = self.ctx.cache.as_deref().and_then(|c| c.get(t)) {
            return Ok(hit.clone());
        }
        let out = distill(real, &self.cfg.distill_for(t))?;
        if let Some(cache) = self.ctx.cache.as_deref_mut() {
            cache.steps.insert(t, out.clone());
        }
        Ok(out)
    }

    fn validate(&mut self, params: &ModelParams<f32>, t: usize) -> Result<Accuracy> {
        for s in 1..=t {
            self.audit(t, s, DataSplit::Test, "validate");
        }
        validate(params, self.scenario, t)
    }

    fn run(mut self, log: &mut RunLog) -> Result<(Option<DistilledBuffer>, ModelParams<f32>)> {
        let cfg = self.cfg;
        let first = &self.scenario.steps[0].train;
        let (shape, classes) = (first.shape(), first.class_count());
        let largest = cfg.policy.largest().clone();
        let mut spec: ModelSpec = match self.regime {
            Regime::Adaptive => cfg.policy.smallest().clone(),
            _ => largest.clone(),
        };
        let mut buffer = self
            .regime
            .distills()
            .then(|| DistilledBuffer::new(shape, classes));
        let mut params: Option<ModelParams<f32>> = None;
        let mut best: Option<f64> = None;
        let (mut cum_train, mut cum_all) = (0u64, 0u64);

        for t in 1..=self.scenario.len() {
            let clock = Instant::now();
            let mut distill_flops = 0;
            let mut losses = (None, None);
            if let Some(buf) = buffer.as_mut() {
                let out = stage(t, "distill", self.distilled(t))?;
                distill_flops = out.flops;
                losses = (out.losses.first().copied(), out.losses.last().copied());
                stage(t, "distill", buf.append_step(t, &out.synthetic))?;
            }

            let (train_set, opt, held_bytes) = match self.regime {
                Regime::Adaptive | Regime::FixedLargest => {
                    let buf = buffer.as_ref().unwrap();
                    let set = if cfg.mixed {
                        let mut set = buf.training_set_before(t);
                        stage(t, "train", set.extend_from(self.real_train(t, t, "train")))?;
                        set
                    } else {
                        buf.training_set()
                    };
                    (set, &cfg.opt_distilled, buf.byte_size())
                }
                Regime::CumulativeBaseline => {
                    let mut set = LabeledSet::empty(shape, classes);
                    for s in 1..=t {
                        let part = self.real_train(t, s, "train").clone();
                        stage(t, "train", set.extend_from(&part))?;
                    }
                    let bytes = set.byte_size();
                    (set, &cfg.opt_real, bytes)
                }
                Regime::NaiveForgetting => {
                    let set = self.real_train(t, t, "train").clone();
                    let bytes = set.byte_size();
                    (set, &cfg.opt_real, bytes)
                }
            };

            let warm = match self.regime {
                Regime::NaiveForgetting => true,
                Regime::Adaptive | Regime::FixedLargest => cfg.mixed,
                Regime::CumulativeBaseline => false,
            };
            let start = match params.take() {
                Some(p) if warm && p.spec() == &spec => p,
                _ => stage(t, "train", ModelParams::init(&spec, cfg.init_seed(t, 0)))?,
            };
            let (mut current, report) = stage(
                t,
                "train",
                train_model(start, &train_set, opt, cfg.shuffle_seed(t, 0)),
            )?;
            let mut train_flops = report.flops;
            let mut acc = stage(t, "validate", self.validate(&current, t))?;

            let (mut grown, mut exhausted) = (0, false);
            if self.regime == Regime::Adaptive {
                if let Some(standard) = cfg.policy.standard(best) {
                    while grown < cfg.policy.max_growths_per_step {
                        let d = stage(
                            t,
                            "grow",
                            grow_if_needed(&spec, acc.micro, standard, &cfg.policy),
                        )?;
                        exhausted |= d.ladder_exhausted;
                        if !d.grown {
                            break;
                        }
                        grown += 1;
                        spec = d.spec;
                        let fresh =
                            stage(t, "grow", ModelParams::init(&spec, cfg.init_seed(t, grown)))?;
                        let (p, r) = stage(
                            t,
                            "grow",
                            train_model(fresh, &train_set, opt, cfg.shuffle_seed(t, grown)),
                        )?;
                        train_flops += r.flops;
                        current = p;
                        acc = stage(t, "validate", self.validate(&current, t))?;
                    }
                }
                best = Some(best.map_or(acc.micro, |b: f64| b.max(acc.micro)));
            }

            cum_train += train_flops;
            cum_all += train_flops + distill_flops;
            log.steps.push(StepMetrics {
                t,
                model_spec: spec.to_string(),
                model_depth: spec.depth(),
                grown,
                ladder_exhausted: exhausted,
                accuracy: acc.micro,
                macro_accuracy: acc.macro_avg,
                test_samples: acc.total,
                train_samples: train_set.len(),
                distill_flops,
                train_flops,
                cumulative_train_flops: cum_train,
                cumulative_flops: cum_all,
                buffer_images: held_bytes as usize / (shape.len() * 4),
                buffer_bytes: held_bytes,
                distill_loss_start: losses.0,
                distill_loss_end: losses.1,
                wall_time: clock.elapsed(),
            });
            params = Some(current);
        }
        Ok((buffer, params.expect("scenario has at least one step")))
    }
}

/// Run one regime over every step of `scenario`.
pub fn run_incremental(
    scenario: &Scenario,
    cfg: &RunConfig,
    regime: Regime,
) -> Result<RunOutput, RunFailure> {
    run_incremental_with(scenario, cfg, regime, RunContext::default())
}

pub fn run_incremental_with(
    scenario: &Scenario,
    cfg: &RunConfig,
    regime: Regime,
    ctx: RunContext<'_>,
) -> Result<RunOutput, RunFailure> {
    let shape = scenario
        .steps
        .first()
        .map(|s| s.train.shape())
        .unwrap_or(cfg.distill.distill_spec.input_shape);
    let mut log = RunLog::new(
        ScenarioRef::new(&scenario.manifest(), shape),
        regime,
        cfg.master_seed,
    );
    let fail = |mut log: RunLog, error: Error| {
        log.failure = Some(error.to_string());
        Err(RunFailure {
            partial: log,
            error,
        })
    };
    if let Err(e) = scenario.validate().and_then(|_| cfg.validate()) {
        return fail(log, e);
    }
    if cfg.policy.smallest().input_shape != shape {
        let e = Error::ShapeMismatch {
            expected: format!("{shape} (scenario)"),
            actual: format!("{} (ladder)", cfg.policy.smallest().input_shape),
        };
        return fail(log, e);
    }
    let runner = Runner {
        scenario,
        cfg,
        regime,
        ctx,
    };
    match runner.run(&mut log) {
        Ok((buffer, params)) => {
            log.finish();
            Ok(RunOutput {
                log,
                buffer,
                params,
            })
        }
        Err(e) => fail(log, e),
    }
}

/// Run several regimes in order, distilling each step once for all of them.
pub fn run_regimes(
    scenario: &Scenario,
    cfg: &RunConfig,
    regimes: &[Regime],
) -> Result<Vec<RunOutput>, RunFailure> {
    let mut cache = DistillCache::new();
    regimes
        .iter()
        .map(|&r| {
            run_incremental_with(
                scenario,
                cfg,
                r,
                RunContext {
                    cache: Some(&mut cache),
                    audit: None,
                },
            )
        })
        .collect()
}
