use super::*;
use crate::scenario::ScenarioKind;
use crate::trainer::{RunLog, StepMetrics};

fn scenario_ref(id: &str) -> ScenarioRef {
    ScenarioRef {
        id: id.into(),
        kind: ScenarioKind::ClassIncremental,
        dataset: "mnist".into(),
        seed: 0,
        n_steps: 3,
        full_train_size: 1000,
        full_train_bytes: 1000 * 784 * 4,
    }
}

fn log(regime: Regime, accs: [f64; 3], flops_per_step: u64, id: &str) -> RunLog {
    let mut l = RunLog::new(scenario_ref(id), regime, 0);
    for (i, &a) in accs.iter().enumerate() {
        l.steps.push(StepMetrics {
            t: i + 1,
            model_spec: String::new(),
            model_depth: 4,
            grown: 0,
            ladder_exhausted: false,
            accuracy: a,
            macro_accuracy: a,
            test_samples: 10,
            train_samples: 10,
            distill_flops: 0,
            train_flops: flops_per_step,
            cumulative_train_flops: flops_per_step * (i as u64 + 1),
            cumulative_flops: flops_per_step * (i as u64 + 1),
            buffer_images: 10 * (i + 1),
            buffer_bytes: 10 * (i as u64 + 1) * 784 * 4,
            distill_loss_start: None,
            distill_loss_end: None,
            wall_time: Default::default(),
        });
    }
    l.finish();
    l
}

fn four() -> Vec<RunLog> {
    vec![
        log(Regime::NaiveForgetting, [0.99, 0.5, 0.33], 30, "a"),
        log(Regime::Adaptive, [0.98, 0.9, 0.85], 40, "a"),
        log(Regime::FixedLargest, [0.99, 0.92, 0.86], 100, "a"),
        log(Regime::CumulativeBaseline, [0.99, 0.97, 0.96], 120, "a"),
    ]
}

#[test]
fn table_order_and_reference_row() {
    let t = compare(&four()).unwrap();
    let order: Vec<Regime> = t.rows.iter().map(|r| r.regime).collect();
    assert_eq!(order, Regime::ALL.to_vec());
    assert_eq!(
        t.row(Regime::FixedLargest).unwrap().needed_flops_fraction,
        1.0
    );
    assert!((t.row(Regime::Adaptive).unwrap().needed_flops_fraction - 0.4).abs() < 1e-12);
    assert!(
        (t.row(Regime::NaiveForgetting).unwrap().average_accuracy - (0.99 + 0.5 + 0.33) / 3.0)
            .abs()
            < 1e-12
    );
    assert!((t.row(Regime::Adaptive).unwrap().memory_fraction - 0.03).abs() < 1e-12);
}

#[test]
fn compare_is_permutation_invariant() {
    let mut logs = four();
    let a = render_report(&compare(&logs).unwrap(), &[], ReportFormat::Csv);
    logs.reverse();
    logs.swap(0, 2);
    assert_eq!(
        a,
        render_report(&compare(&logs).unwrap(), &[], ReportFormat::Csv)
    );
}

#[test]
fn compare_rejects_bad_inputs() {
    assert!(compare(&[log(Regime::Adaptive, [0.5; 3], 1, "a")]).is_err());
    let mut mixed = four();
    mixed[0] = log(Regime::NaiveForgetting, [0.5; 3], 1, "b");
    assert!(compare(&mixed).is_err());
    let mut twice = four();
    twice.push(log(Regime::FixedLargest, [0.5; 3], 1, "a"));
    assert!(compare(&twice).is_err());
    let mut partial = four();
    partial[1].steps.pop();
    assert!(compare(&partial).is_err());
}

#[test]
fn renderings_are_stable_and_round_trip() {
    let t = compare(&four()).unwrap();
    let series: Vec<Series> = four().iter().map(accuracy_flops_series).collect();
    let csv = render_report(&t, &series, ReportFormat::Csv);
    assert_eq!(csv, render_report(&t, &series, ReportFormat::Csv));
    assert_eq!(csv.lines().count(), 5);
    let json = render_report(&t, &series, ReportFormat::Json);
    let (back, back_series) = parse_json_report(&json).unwrap();
    assert_eq!(back, t);
    assert_eq!(back_series, series);
    let text = render_report(&t, &series, ReportFormat::TextTable);
    assert!(text.contains("40.0%"), "{text}");
    assert!("xml".parse::<ReportFormat>().is_err());
}

#[test]
fn series_has_one_increasing_point_per_step() {
    let s = accuracy_flops_series(&four()[1]);
    assert_eq!(s.points.len(), 3);
    assert!(s
        .points
        .windows(2)
        .all(|w| w[0].cumulative_flops < w[1].cumulative_flops));
    let csv = series_csv(&[s]);
    assert_eq!(csv.lines().next().unwrap(), SERIES_CSV_HEADER);
    assert_eq!(csv.lines().count(), 4);
}
