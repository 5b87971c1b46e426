//! Experiment configuration files (`schema=1`).

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use distill_cl_core::distill::{AugmentKind, InitMode};
use distill_cl_core::model::NormGroups;
use distill_cl_core::scenario::DatasetName;
use distill_cl_core::trainer::{
    GrowthPolicy, GrowthRule, LrSchedule, OptimizerConfig, OptimizerKind, Regime, RunConfig,
};
use distill_cl_core::{DistillConfig, ImageShape, ModelSpec};
use serde::Serialize;

use crate::ini::Ini;

pub const SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioChoice {
    ClassIncremental { classes_per_step: usize },
    RotatedMnist { steps: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioSection {
    pub choice: ScenarioChoice,
    pub dataset: DatasetName,
    /// Dataset cache root; the environment variable takes precedence.
    pub cache: Option<PathBuf>,
    /// Stratified subsets, drawn before the scenario is built.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistillSection {
    pub ipc: usize,
    pub outer_steps: usize,
    pub synth_lr: f64,
    pub synth_lr_final: f64,
    pub real_batch_per_class: usize,
    pub init: InitMode,
    pub dsa: Vec<AugmentKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSection {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub epochs_distilled: usize,
    pub epochs_real: usize,
    pub mixed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicySection {
    /// `(depth, width)` per ladder entry, smallest first.
    pub ladder: Vec<(usize, usize)>,
    pub rule: GrowthRule,
    pub max_growths_per_step: usize,
    pub norm: NormGroups,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub regimes: Vec<Regime>,
    pub scenario: ScenarioSection,
    pub distill: DistillSection,
    pub train: TrainSection,
    pub policy: PolicySection,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

const ROOT_KEYS: &[&str] = &["schema", "seed", "output", "regimes"];
const SCENARIO_KEYS: &[&str] = &[
    "kind",
    "dataset",
    "cache",
    "classes_per_step",
    "steps",
    "train_limit",
    "test_limit",
];
const DISTILL_KEYS: &[&str] = &[
    "ipc",
    "outer_steps",
    "synth_lr",
    "synth_lr_final",
    "real_batch_per_class",
    "init",
    "dsa",
];
const TRAIN_KEYS: &[&str] = &[
    "optimizer",
    "lr",
    "momentum",
    "weight_decay",
    "batch_size",
    "schedule",
    "epochs_distilled",
    "epochs_real",
    "mixed",
];
const POLICY_KEYS: &[&str] = &[
    "ladder",
    "rule",
    "factor",
    "a_standard",
    "max_growths_per_step",
    "norm",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output: PathBuf::from("runs/default"),
            regimes: Regime::ALL.to_vec(),
            scenario: ScenarioSection {
                choice: ScenarioChoice::ClassIncremental {
                    classes_per_step: 2,
                },
                dataset: DatasetName::Mnist,
                cache: None,
                train_limit: None,
                test_limit: None,
            },
            distill: DistillSection {
                ipc: 10,
                outer_steps: 1000,
                synth_lr: 1.0,
                synth_lr_final: 0.1,
                real_batch_per_class: 256,
                init: InitMode::RealSample,
                dsa: AugmentKind::ALL.to_vec(),
            },
            train: TrainSection {
                optimizer: OptimizerKind::Adam,
                lr: 0.01,
                momentum: 0.9,
                weight_decay: 5e-4,
                batch_size: 256,
                schedule: LrSchedule::Constant,
                epochs_distilled: 300,
                epochs_real: 30,
                mixed: false,
            },
            policy: PolicySection {
                ladder: vec![(2, 8), (3, 64), (4, 128)],
                rule: GrowthRule::default(),
                max_growths_per_step: 1,
                norm: NormGroups::PerChannel,
            },
        }
    }
}

/// Collects typed values and every problem encountered.
struct Reader<'a> {
    ini: &'a Ini,
    errors: Vec<FieldError>,
}

impl Reader<'_> {
    fn field(section: &str, key: &str) -> String {
        if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        }
    }

    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.get(section, key).map(|v| v.text.as_str())
    }

    fn bad(&mut self, section: &str, key: &str, message: String) {
        let line = self
            .ini
            .get(section, key)
            .map(|v| format!(" (line {})", v.line))
            .unwrap_or_default();
        self.errors.push(FieldError {
            field: Reader::field(section, key),
            message: format!("{message}{line}"),
        });
    }

    fn parse_with<T>(
        &mut self,
        section: &str,
        key: &str,
        default: T,
        f: impl Fn(&str) -> Option<T>,
        expect: &str,
    ) -> T {
        match self.raw(section, key).map(str::to_string) {
            None => default,
            Some(s) => match f(&s) {
                Some(v) => v,
                None => {
                    self.bad(section, key, format!("expected {expect}, got '{s}'"));
                    default
                }
            },
        }
    }

    fn num<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> T {
        let expect = std::any::type_name::<T>()
            .rsplit("::")
            .next()
            .unwrap_or("number")
            .to_string();
        self.parse_with(section, key, default, |s| s.parse().ok(), &expect)
    }

    fn opt_num(&mut self, section: &str, key: &str) -> Option<usize> {
        self.parse_with(
            section,
            key,
            None,
            |s| {
                if s == "none" || s.is_empty() {
                    Some(None)
                } else {
                    s.parse().ok().map(Some)
                }
            },
            "integer or none",
        )
    }

    fn unknown_keys(&mut self) {
        let known = [
            ("", ROOT_KEYS),
            ("scenario", SCENARIO_KEYS),
            ("distill", DISTILL_KEYS),
            ("train", TRAIN_KEYS),
            ("policy", POLICY_KEYS),
        ];
        let mut found = Vec::new();
        for (section, entries) in &self.ini.sections {
            match known.iter().find(|(s, _)| s == section) {
                None => found.push((
                    section.clone(),
                    "*".to_string(),
                    entries.values().next().map_or(0, |v| v.line),
                )),
                Some((_, keys)) => {
                    for (k, v) in entries {
                        if !keys.contains(&k.as_str()) {
                            found.push((section.clone(), k.clone(), v.line));
                        }
                    }
                }
            }
        }
        for (section, key, line) in found {
            let message = if key == "*" {
                format!("unknown section [{section}]")
            } else {
                format!("unknown key (line {line})")
            };
            self.errors.push(FieldError {
                field: if key == "*" {
                    section
                } else {
                    Reader::field(&section, &key)
                },
                message,
            });
        }
    }
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    if s.trim() == "none" {
        return Some(Vec::new());
    }
    s.split(',').map(|p| f(p.trim())).collect()
}

fn parse_ladder_entry(s: &str) -> Option<(usize, usize)> {
    let s = s.strip_prefix('D').or_else(|| s.strip_prefix('d'))?;
    let (d, w) = s.split_once(['w', 'W'])?;
    Some((d.parse().ok()?, w.parse().ok()?))
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_init(s: &str) -> Option<InitMode> {
    match s {
        "real_sample" | "real" => Some(InitMode::RealSample),
        "noise" => Some(InitMode::Noise),
        _ => None,
    }
}

fn init_name(m: InitMode) -> &'static str {
    match m {
        InitMode::RealSample => "real_sample",
        InitMode::Noise => "noise",
    }
}

fn parse_norm(s: &str) -> Option<NormGroups> {
    match s {
        "per_channel" => Some(NormGroups::PerChannel),
        _ => s
            .strip_prefix("groups:")
            .and_then(|g| g.parse().ok())
            .map(NormGroups::Groups),
    }
}

impl ExperimentConfig {
    /// Parse and validate, reporting every invalid field at once.
    pub fn parse(text: &str) -> Result<Self, Vec<FieldError>> {
        let ini = Ini::parse(text).map_err(|errs| {
            errs.into_iter()
                .map(|e| FieldError {
                    field: format!("line {}", e.line),
                    message: e.message,
                })
                .collect::<Vec<_>>()
        })?;
        let d = ExperimentConfig::default();
        let mut r = Reader {
            ini: &ini,
            errors: Vec::new(),
        };
        match r.raw("", "schema") {
            None => r.errors.push(FieldError {
                field: "schema".into(),
                message: format!("missing; expected schema = {SCHEMA}"),
            }),
            Some(s) if s != SCHEMA.to_string() => r.bad(
                "",
                "schema",
                format!("unsupported schema '{s}', expected {SCHEMA}"),
            ),
            Some(_) => {}
        }
        let seed = r.num("", "seed", d.seed);
        let output = PathBuf::from(r.raw("", "output").unwrap_or(d.output.to_str().unwrap()));
        let regimes = r.parse_with(
            "",
            "regimes",
            d.regimes.clone(),
            |s| parse_list(s, Regime::parse),
            "comma-separated regimes",
        );

        let kind = r
            .raw("scenario", "kind")
            .unwrap_or("class_incremental")
            .to_string();
        let classes_per_step = r.num("scenario", "classes_per_step", 2usize);
        let steps = r.num("scenario", "steps", 10usize);
        let choice = match kind.as_str() {
            "class_incremental" => ScenarioChoice::ClassIncremental { classes_per_step },
            "rotated_mnist" | "domain_drift" => ScenarioChoice::RotatedMnist { steps },
            other => {
                r.bad(
                    "scenario",
                    "kind",
                    format!("expected class_incremental or rotated_mnist, got '{other}'"),
                );
                d.scenario.choice
            }
        };
        let scenario = ScenarioSection {
            choice,
            dataset: r.parse_with(
                "scenario",
                "dataset",
                d.scenario.dataset,
                DatasetName::parse,
                "mnist, cifar10 or array_import",
            ),
            cache: r
                .raw("scenario", "cache")
                .filter(|s| !s.is_empty())
                .map(PathBuf::from),
            train_limit: r.opt_num("scenario", "train_limit"),
            test_limit: r.opt_num("scenario", "test_limit"),
        };

        let dd = &d.distill;
        let distill = DistillSection {
            ipc: r.num("distill", "ipc", dd.ipc),
            outer_steps: r.num("distill", "outer_steps", dd.outer_steps),
            synth_lr: r.num("distill", "synth_lr", dd.synth_lr),
            synth_lr_final: r.num("distill", "synth_lr_final", dd.synth_lr_final),
            real_batch_per_class: r.num("distill", "real_batch_per_class", dd.real_batch_per_class),
            init: r.parse_with(
                "distill",
                "init",
                dd.init,
                parse_init,
                "real_sample or noise",
            ),
            dsa: r.parse_with(
                "distill",
                "dsa",
                dd.dsa.clone(),
                |s| parse_list(s, AugmentKind::parse),
                "augmentation list or none",
            ),
        };

        let dt = &d.train;
        let train = TrainSection {
            optimizer: r.parse_with(
                "train",
                "optimizer",
                dt.optimizer,
                OptimizerKind::parse,
                "adam or sgd_momentum",
            ),
            lr: r.num("train", "lr", dt.lr),
            momentum: r.num("train", "momentum", dt.momentum),
            weight_decay: r.num("train", "weight_decay", dt.weight_decay),
            batch_size: r.num("train", "batch_size", dt.batch_size),
            schedule: r.parse_with(
                "train",
                "schedule",
                dt.schedule,
                LrSchedule::parse,
                "constant or cosine",
            ),
            epochs_distilled: r.num("train", "epochs_distilled", dt.epochs_distilled),
            epochs_real: r.num("train", "epochs_real", dt.epochs_real),
            mixed: r.parse_with("train", "mixed", dt.mixed, parse_bool, "true or false"),
        };

        let rule_name = r.raw("policy", "rule").unwrap_or("relative").to_string();
        let rule = match rule_name.as_str() {
            "relative" => GrowthRule::Relative {
                factor: r.num("policy", "factor", 0.95),
            },
            "absolute" => match r.raw("policy", "a_standard") {
                Some(_) => GrowthRule::Absolute {
                    a_standard: r.num("policy", "a_standard", 0.9),
                },
                None => {
                    r.errors.push(FieldError {
                        field: "policy.a_standard".into(),
                        message: "required when rule = absolute".into(),
                    });
                    GrowthRule::default()
                }
            },
            other => {
                r.bad(
                    "policy",
                    "rule",
                    format!("expected relative or absolute, got '{other}'"),
                );
                GrowthRule::default()
            }
        };
        let policy = PolicySection {
            ladder: r.parse_with(
                "policy",
                "ladder",
                d.policy.ladder.clone(),
                |s| parse_list(s, parse_ladder_entry),
                "comma-separated DdWw entries such as D2w128",
            ),
            rule,
            max_growths_per_step: r.num(
                "policy",
                "max_growths_per_step",
                d.policy.max_growths_per_step,
            ),
            norm: r.parse_with(
                "policy",
                "norm",
                d.policy.norm,
                parse_norm,
                "per_channel or groups:N",
            ),
        };
        r.unknown_keys();
        let cfg = ExperimentConfig {
            seed,
            output,
            regimes,
            scenario,
            distill,
            train,
            policy,
        };
        let mut errors = r.errors;
        errors.extend(cfg.problems());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    /// Semantic checks that do not need the dataset.
    pub fn problems(&self) -> Vec<FieldError> {
        let mut p = Vec::new();
        let mut bad = |field: &str, message: String| {
            p.push(FieldError {
                field: field.into(),
                message,
            })
        };
        if self.regimes.is_empty() {
            bad("regimes", "at least one regime is required".into());
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if self.regimes[..i].contains(r) {
                bad("regimes", format!("{r} listed twice"));
            }
        }
        match self.scenario.choice {
            ScenarioChoice::ClassIncremental {
                classes_per_step: 0,
            } => bad("scenario.classes_per_step", "must be at least 1".into()),
            ScenarioChoice::RotatedMnist { steps: 0 } => {
                bad("scenario.steps", "must be at least 1".into())
            }
            _ => {}
        }
        for (k, v) in [
            ("train_limit", self.scenario.train_limit),
            ("test_limit", self.scenario.test_limit),
        ] {
            if v == Some(0) {
                bad(&format!("scenario.{k}"), "must be positive".into());
            }
        }
        let ds = &self.distill;
        if ds.ipc == 0 {
            bad("distill.ipc", "must be at least 1".into());
        }
        if ds.outer_steps == 0 {
            bad("distill.outer_steps", "must be at least 1".into());
        }
        for (k, v) in [
            ("synth_lr", ds.synth_lr),
            ("synth_lr_final", ds.synth_lr_final),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                bad(
                    &format!("distill.{k}"),
                    format!("must be finite and non-negative, got {v}"),
                );
            }
        }
        if ds.real_batch_per_class == 0 {
            bad("distill.real_batch_per_class", "must be at least 1".into());
        }
        for (name, opt) in [
            ("epochs_distilled", self.opt_distilled()),
            ("epochs_real", self.opt_real()),
        ] {
            for msg in opt.problems() {
                let field = match msg.split_whitespace().next() {
                    Some("epochs") => format!("train.{name}"),
                    Some(k) => format!("train.{k}"),
                    None => "train".into(),
                };
                if !p.iter().any(|e: &FieldError| e.field == field) {
                    p.push(FieldError {
                        field,
                        message: msg,
                    });
                }
            }
        }
        if self.policy.ladder.is_empty() {
            p.push(FieldError {
                field: "policy.ladder".into(),
                message: "must hold at least one entry".into(),
            });
        }
        for &(dpt, w) in &self.policy.ladder {
            if dpt == 0 || w == 0 {
                p.push(FieldError {
                    field: "policy.ladder".into(),
                    message: format!("D{dpt}w{w} needs positive depth and width"),
                });
            }
        }
        let cost = |&(d, w): &(usize, usize)| (d, w);
        if self
            .policy
            .ladder
            .windows(2)
            .any(|pair| cost(&pair[1]) <= cost(&pair[0]) || pair[1].1 < pair[0].1)
        {
            p.push(FieldError {
                field: "policy.ladder".into(),
                message: "entries must grow in depth and width, smallest first".into(),
            });
        }
        match self.policy.rule {
            GrowthRule::Relative { factor } if !(factor > 0.0 && factor <= 1.0) => {
                p.push(FieldError {
                    field: "policy.factor".into(),
                    message: format!("must be in (0, 1], got {factor}"),
                })
            }
            GrowthRule::Absolute { a_standard } if !(a_standard > 0.0 && a_standard <= 1.0) => p
                .push(FieldError {
                    field: "policy.a_standard".into(),
                    message: format!("must be in (0, 1], got {a_standard}"),
                }),
            _ => {}
        }
        if self.policy.max_growths_per_step == 0 {
            p.push(FieldError {
                field: "policy.max_growths_per_step".into(),
                message: "must be at least 1".into(),
            });
        }
        if let NormGroups::Groups(g) = self.policy.norm {
            if g == 0 || self.policy.ladder.iter().any(|&(_, w)| w % g != 0) {
                p.push(FieldError {
                    field: "policy.norm".into(),
                    message: format!("{g} groups must divide every ladder width"),
                });
            }
        }
        p
    }

    /// The reduced parameter set used for desk-scale runs.
    pub fn apply_desk_scale(&mut self) {
        self.policy.ladder = vec![(2, 8), (3, 16), (4, 32)];
        self.distill.outer_steps = DESK_OUTER_STEPS;
        self.distill.synth_lr = DESK_SYNTH_LR;
        self.distill.synth_lr_final = DESK_SYNTH_LR_FINAL;
        self.distill.real_batch_per_class = 256;
        self.distill.ipc = 10;
        self.train.epochs_distilled = 300;
        self.train.epochs_real = DESK_EPOCHS_REAL;
        self.scenario.train_limit = Some(10_000);
    }

    fn optimizer(&self, epochs: usize) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.train.optimizer,
            lr: self.train.lr,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size,
            epochs,
            lr_schedule: self.train.schedule,
        }
    }

    pub fn opt_distilled(&self) -> OptimizerConfig {
        self.optimizer(self.train.epochs_distilled)
    }

    pub fn opt_real(&self) -> OptimizerConfig {
        self.optimizer(self.train.epochs_real)
    }

    pub fn ladder_specs(
        &self,
        shape: ImageShape,
        classes: usize,
    ) -> distill_cl_core::Result<Vec<ModelSpec>> {
        self.policy
            .ladder
            .iter()
            .map(|&(d, w)| {
                let mut spec = ModelSpec::convnet(d, w, shape, classes)?;
                spec.norm = self.policy.norm;
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    /// Core run configuration for data of `shape` with `classes` classes.
    /// Distillation always uses the largest ladder entry.
    pub fn run_config(
        &self,
        shape: ImageShape,
        classes: usize,
    ) -> distill_cl_core::Result<RunConfig> {
        let ladder = self.ladder_specs(shape, classes)?;
        let mut distill = DistillConfig::new(ladder.last().expect("validated ladder").clone());
        distill.ipc = self.distill.ipc;
        distill.outer_steps = self.distill.outer_steps;
        distill.synth_lr = self.distill.synth_lr;
        distill.synth_lr_final = self.distill.synth_lr_final;
        distill.real_batch_per_class = self.distill.real_batch_per_class;
        distill.init_mode = self.distill.init;
        distill.dsa_ops = self.distill.dsa.clone();
        if matches!(self.scenario.choice, ScenarioChoice::RotatedMnist { .. }) {
            distill.dsa_ops.retain(|k| *k != AugmentKind::Rotate);
        }
        let policy = GrowthPolicy {
            ladder,
            rule: self.policy.rule,
            max_growths_per_step: self.policy.max_growths_per_step,
        };
        let cfg = RunConfig {
            distill,
            opt_distilled: self.opt_distilled(),
            opt_real: self.opt_real(),
            policy,
            master_seed: self.seed,
            mixed: self.train.mixed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse(to_ini(c)) == c`.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let list = |items: Vec<String>| {
            if items.is_empty() {
                "none".to_string()
            } else {
                items.join(",")
            }
        };
        let _ = writeln!(s, "schema = {SCHEMA}");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output = {}", self.output.display());
        let _ = writeln!(
            s,
            "regimes = {}",
            list(
                self.regimes
                    .iter()
                    .map(|r| r.as_str().to_string())
                    .collect()
            )
        );
        let sc = &self.scenario;
        let _ = writeln!(s, "\n[scenario]");
        match sc.choice {
            ScenarioChoice::ClassIncremental { classes_per_step } => {
                let _ = writeln!(
                    s,
                    "kind = class_incremental\nclasses_per_step = {classes_per_step}"
                );
            }
            ScenarioChoice::RotatedMnist { steps } => {
                let _ = writeln!(s, "kind = rotated_mnist\nsteps = {steps}");
            }
        }
        let _ = writeln!(s, "dataset = {}", sc.dataset.as_str());
        if let Some(c) = &sc.cache {
            let _ = writeln!(s, "cache = {}", c.display());
        }
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |n| n.to_string());
        let _ = writeln!(
            s,
            "train_limit = {}\ntest_limit = {}",
            opt(sc.train_limit),
            opt(sc.test_limit)
        );
        let d = &self.distill;
        let _ = writeln!(
            s,
            "\n[distill]\nipc = {}\nouter_steps = {}\nsynth_lr = {}\nsynth_lr_final = {}\nreal_batch_per_class = {}\ninit = {}\ndsa = {}",
            d.ipc,
            d.outer_steps,
            d.synth_lr,
            d.synth_lr_final,
            d.real_batch_per_class,
            init_name(d.init),
            list(d.dsa.iter().map(|k| k.name().to_string()).collect())
        );
        let t = &self.train;
        let _ = writeln!(
            s,
            "\n[train]\noptimizer = {}\nlr = {}\nmomentum = {}\nweight_decay = {}\nbatch_size = {}\nschedule = {}\nepochs_distilled = {}\nepochs_real = {}\nmixed = {}",
            t.optimizer.as_str(),
            t.lr,
            t.momentum,
            t.weight_decay,
            t.batch_size,
            t.schedule.as_str(),
            t.epochs_distilled,
            t.epochs_real,
            t.mixed
        );
        let p = &self.policy;
        let _ = writeln!(
            s,
            "\n[policy]\nladder = {}",
            list(p.ladder.iter().map(|(d, w)| format!("D{d}w{w}")).collect())
        );
        match p.rule {
            GrowthRule::Relative { factor } => {
                let _ = writeln!(s, "rule = relative\nfactor = {factor}");
            }
            GrowthRule::Absolute { a_standard } => {
                let _ = writeln!(s, "rule = absolute\na_standard = {a_standard}");
            }
        }
        let norm = match p.norm {
            NormGroups::PerChannel => "per_channel".to_string(),
            NormGroups::Groups(g) => format!("groups:{g}"),
        };
        let _ = writeln!(
            s,
            "max_growths_per_step = {}\nnorm = {norm}",
            p.max_growths_per_step
        );
        s
    }
}

pub const DESK_OUTER_STEPS: usize = 100;
pub const DESK_SYNTH_LR: f64 = 3.0;
pub const DESK_SYNTH_LR_FINAL: f64 = 0.3;
pub const DESK_EPOCHS_REAL: usize = 3;
