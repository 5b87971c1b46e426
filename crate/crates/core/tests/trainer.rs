use std::path::Path;

use distill_cl_core::model::NormGroups;
use distill_cl_core::scenario::{class_incremental, load_cached, DatasetName};
use distill_cl_core::trainer::{
    accuracy, grow_if_needed, run_incremental, run_incremental_with, train_model, DataAccess,
    DataSplit, GrowthPolicy, GrowthRule, LrSchedule, OptimizerConfig, OptimizerKind, Regime,
    RunConfig, RunContext,
};
use distill_cl_core::{seed, DistillConfig, ImageShape, LabeledSet, ModelParams, ModelSpec};
use rand::Rng;

fn pixel_spec(classes: usize) -> ModelSpec {
    ModelSpec {
        block_widths: vec![1],
        input_shape: ImageShape::new(1, 1, 1),
        class_count: classes,
        norm: NormGroups::PerChannel,
    }
}

/// On a 1x1 input the normalized activation is zero, so the feature is
/// relu(beta) and the classifier is a logistic regression on that constant.
#[test]
fn one_sgd_step_matches_hand_computed_update() {
    let spec = pixel_spec(2);
    let mut params = ModelParams::<f32>::init(&spec, 0).unwrap();
    let layout = params.layout().clone();
    let (beta, w, b) = (0.5f32, [0.3f32, -0.2], [0.1f32, 0.05]);
    params.values_mut()[layout.blocks[0].beta.start] = beta;
    params.values_mut()[layout.fc_weight.clone()].copy_from_slice(&w);
    params.values_mut()[layout.fc_bias.clone()].copy_from_slice(&b);
    let data = LabeledSet::new(spec.input_shape, 2, vec![0.2, 0.9, 0.4], vec![0, 1, 1]).unwrap();

    let eta = 0.1f64;
    let opt = OptimizerConfig {
        kind: OptimizerKind::SgdMomentum,
        lr: eta,
        momentum: 0.0,
        weight_decay: 0.0,
        batch_size: 3,
        epochs: 1,
        lr_schedule: LrSchedule::Constant,
    };
    let (after, report) = train_model(params.clone(), &data, &opt, 0).unwrap();
    assert_eq!(report.update_steps, 1);

    // hand computation: identical logits for every sample
    let f = beta as f64;
    let z = [w[0] as f64 * f + b[0] as f64, w[1] as f64 * f + b[1] as f64];
    let p1 = 1.0 / (1.0 + (z[0] - z[1]).exp());
    let p = [1.0 - p1, p1];
    let mut dz = [0.0f64; 2];
    for &y in data.labels() {
        for k in 0..2 {
            dz[k] += (p[k] - f64::from(u8::from(k == y))) / 3.0;
        }
    }
    let dbeta = w[0] as f64 * dz[0] + w[1] as f64 * dz[1];
    let expect_w = [w[0] as f64 - eta * dz[0] * f, w[1] as f64 - eta * dz[1] * f];
    let expect_b = [b[0] as f64 - eta * dz[0], b[1] as f64 - eta * dz[1]];
    let expect_beta = beta as f64 - eta * dbeta;

    let v = after.values();
    for k in 0..2 {
        assert!((v[layout.fc_weight.start + k] as f64 - expect_w[k]).abs() < 1e-6);
        assert!((v[layout.fc_bias.start + k] as f64 - expect_b[k]).abs() < 1e-6);
    }
    assert!((v[layout.blocks[0].beta.start] as f64 - expect_beta).abs() < 1e-6);
    // kernel and gamma see no gradient through a zero normalized activation
    assert_eq!(
        &v[layout.blocks[0].kernel.clone()],
        &params.values()[layout.blocks[0].kernel.clone()]
    );
    assert_eq!(
        &v[layout.blocks[0].gamma.clone()],
        &params.values()[layout.blocks[0].gamma.clone()]
    );
}

#[test]
fn untrained_model_is_at_chance_on_mnist() {
    let cache = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let Ok((_, test)) = load_cached(DatasetName::Mnist, &cache) else {
        eprintln!("MNIST cache missing under {}; skipped", cache.display());
        return;
    };
    let spec = ModelSpec::convnet(2, 8, test.shape(), 10).unwrap();
    let accs: Vec<f64> = (0..10)
        .map(|s| {
            accuracy(&ModelParams::<f32>::init(&spec, s).unwrap(), &test)
                .unwrap()
                .micro
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.1).abs() <= 0.03, "mean {mean} over {accs:?}");
}

fn toy_data(
    seed_value: u64,
    n_per_class: usize,
    classes: usize,
    shape: ImageShape,
) -> LabeledSet<f32> {
    let mut rng = seed::rng(seed_value);
    let mut set = LabeledSet::empty(shape, classes);
    for c in 0..classes {
        for _ in 0..n_per_class {
            let img: Vec<f32> = (0..shape.len())
                .map(|i| {
                    let on = (i * classes / shape.len()) == c;
                    (if on { 0.7 } else { 0.1 }) + rng.gen_range(0.0..0.2f32)
                })
                .collect();
            set.push(&img, c).unwrap();
        }
    }
    set
}

/// Pixels independent of labels, so no model reaches perfect accuracy.
fn noise_data(
    seed_value: u64,
    n_per_class: usize,
    classes: usize,
    shape: ImageShape,
) -> LabeledSet<f32> {
    let mut rng = seed::rng(seed_value);
    let n = n_per_class * classes;
    let pixels = (0..n * shape.len()).map(|_| rng.gen::<f32>()).collect();
    LabeledSet::new(
        shape,
        classes,
        pixels,
        (0..n).map(|i| i % classes).collect(),
    )
    .unwrap()
}

fn toy_run_config(shape: ImageShape, classes: usize) -> RunConfig {
    let ladder: Vec<ModelSpec> = [(1, 2), (1, 4), (2, 4)]
        .iter()
        .map(|&(d, w)| ModelSpec::convnet(d, w, shape, classes).unwrap())
        .collect();
    let mut distill = DistillConfig::new(ladder.last().unwrap().clone());
    distill.ipc = 2;
    distill.outer_steps = 3;
    distill.real_batch_per_class = 8;
    RunConfig {
        distill,
        opt_distilled: OptimizerConfig::adam(5),
        opt_real: OptimizerConfig::adam(2),
        policy: GrowthPolicy::new(ladder).unwrap(),
        master_seed: 11,
        mixed: false,
    }
}

#[test]
fn distilling_regimes_never_read_earlier_real_data() {
    let shape = ImageShape::new(1, 6, 6);
    let scenario =
        class_incremental(&toy_data(1, 12, 4, shape), &toy_data(2, 4, 4, shape), 1, 5).unwrap();
    let cfg = toy_run_config(shape, 4);
    for regime in Regime::ALL {
        let mut reads: Vec<DataAccess> = Vec::new();
        let mut hook = |a: &DataAccess| reads.push(a.clone());
        run_incremental_with(
            &scenario,
            &cfg,
            regime,
            RunContext {
                cache: None,
                audit: Some(&mut hook),
            },
        )
        .unwrap();
        let stale = reads
            .iter()
            .filter(|a| a.split == DataSplit::Train && a.source_step < a.at_step)
            .count();
        match regime {
            Regime::Adaptive | Regime::FixedLargest => {
                assert_eq!(stale, 0, "{regime} read earlier real training data")
            }
            Regime::CumulativeBaseline => {
                assert!(stale > 0, "audit hook did not observe baseline reads")
            }
            Regime::NaiveForgetting => assert_eq!(stale, 0),
        }
        assert!(reads.iter().any(|a| a.split == DataSplit::Test));
    }
}

fn with_threshold(cfg: &RunConfig, a_standard: f64) -> RunConfig {
    let mut cfg = cfg.clone();
    cfg.policy.rule = GrowthRule::Absolute { a_standard };
    cfg
}

#[test]
fn growth_sequence_is_monotone_up_to_exhaustion() {
    let shape = ImageShape::new(1, 6, 6);
    let scenario = class_incremental(
        &noise_data(3, 12, 4, shape),
        &noise_data(4, 12, 4, shape),
        1,
        9,
    )
    .unwrap();
    let cfg = with_threshold(&toy_run_config(shape, 4), 1.0);
    let log = run_incremental(&scenario, &cfg, Regime::Adaptive)
        .unwrap()
        .log;
    let positions: Vec<usize> = log
        .steps
        .iter()
        .map(|s| {
            cfg.policy
                .ladder
                .iter()
                .position(|l| l.to_string() == s.model_spec)
                .unwrap()
        })
        .collect();
    assert!(positions.windows(2).all(|p| p[0] <= p[1]), "{positions:?}");
    let accs: Vec<f64> = log.steps.iter().map(|s| s.accuracy).collect();
    assert_eq!(
        *positions.last().unwrap(),
        cfg.policy.ladder.len() - 1,
        "{positions:?} {accs:?}"
    );
    assert!(log.steps.last().unwrap().ladder_exhausted);
    assert!(log
        .steps
        .windows(2)
        .all(|w| w[0].cumulative_flops <= w[1].cumulative_flops));
}

#[test]
fn adaptive_below_largest_costs_strictly_less() {
    let shape = ImageShape::new(1, 6, 6);
    let scenario =
        class_incremental(&toy_data(3, 12, 4, shape), &toy_data(4, 4, 4, shape), 1, 9).unwrap();
    let cfg = with_threshold(&toy_run_config(shape, 4), 1e-9);
    let adaptive = run_incremental(&scenario, &cfg, Regime::Adaptive)
        .unwrap()
        .log;
    let largest = run_incremental(&scenario, &cfg, Regime::FixedLargest)
        .unwrap()
        .log;
    assert!(adaptive
        .steps
        .iter()
        .all(|s| s.model_spec == cfg.policy.smallest().to_string()));
    assert_eq!(
        largest.steps[0].model_spec,
        cfg.policy.largest().to_string()
    );
    let (a, l) = (
        adaptive.steps.last().unwrap(),
        largest.steps.last().unwrap(),
    );
    assert!(a.cumulative_flops < l.cumulative_flops);
    // both regimes distill identically
    let distill = |log: &distill_cl_core::trainer::RunLog| {
        log.steps
            .iter()
            .map(|s| s.distill_flops)
            .collect::<Vec<_>>()
    };
    assert_eq!(distill(&adaptive), distill(&largest));
}

#[test]
fn single_step_baseline_and_naive_see_the_same_data() {
    let shape = ImageShape::new(1, 6, 6);
    let scenario =
        class_incremental(&toy_data(5, 8, 3, shape), &toy_data(6, 4, 3, shape), 3, 1).unwrap();
    let cfg = toy_run_config(shape, 3);
    let base = run_incremental(&scenario, &cfg, Regime::CumulativeBaseline).unwrap();
    let naive = run_incremental(&scenario, &cfg, Regime::NaiveForgetting).unwrap();
    assert_eq!(base.params.values(), naive.params.values());
    assert_eq!(base.log.steps[0].accuracy, naive.log.steps[0].accuracy);
}

#[test]
fn growth_moves_one_rung_per_call() {
    let shape = ImageShape::new(1, 8, 8);
    let ladder: Vec<ModelSpec> = (2..=4)
        .map(|d| ModelSpec::convnet(d, 8, shape, 2).unwrap())
        .collect();
    let policy = GrowthPolicy::new(ladder.clone()).unwrap();
    let d = grow_if_needed(&ladder[0], 0.0, 1.0, &policy).unwrap();
    assert_eq!(d.spec, ladder[1]);
    assert!(grow_if_needed(&ladder[1], 0.5, 0.4, &policy).unwrap().spec == ladder[1]);
}
