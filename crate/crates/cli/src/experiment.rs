//! Config-driven execution and artifact layout.
//!
//! ```text
//! <out>/config.ini            canonical copy of the configuration
//! <out>/scenario.json         scenario manifest
//! <out>/runlogs/<regime>.json
//! <out>/buffers/<regime>.dcb  distilled buffers (distilling regimes)
//! <out>/checkpoints/<regime>.ckpt
//! <out>/table.{csv,json,txt}  comparison table (needs fixed_largest)
//! <out>/series.csv            accuracy vs cumulative FLOPs
//! <out>/repro.json            seeds, hashes and build identifiers
//! <out>/timings.json          wall-clock times (not deterministic)
//! <out>/checksums.sha256      sha256 of every other artifact
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use distill_cl_core::evaluation::{
    accuracy_flops_series, compare, render_report, series_csv, ComparisonTable, ReportFormat,
};
use distill_cl_core::scenario::{
    cache_root, class_incremental, load_cached, rotated_mnist, stratified_subset, Scenario,
    CACHE_ENV,
};
use distill_cl_core::seed;
use distill_cl_core::trainer::{
    run_incremental_with, DistillCache, Regime, RunConfig, RunContext, RunLog, RunOutput,
};
use distill_cl_core::{distill, DistilledBuffer, Error, LabeledSet};
use serde::Serialize;

use crate::config::{ExperimentConfig, ScenarioChoice};
use crate::error::{CliError, Failure};
use crate::formats::{
    checkpoint_model, deserialize_buffer, restore_model, serialize_buffer, sha256_hex, write_atomic,
};

pub const CHECKSUM_FILE: &str = "checksums.sha256";

pub struct Prepared {
    pub scenario: Scenario,
    pub run: RunConfig,
    pub dataset_checksums: (String, String),
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io("creating directory", path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(CliError::from)
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// Load the dataset from the cache and build the configured scenario.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    let sc = &cfg.scenario;
    let root = cache_root(sc.cache.as_deref());
    let (train, test) = load_cached(sc.dataset, &root).map_err(|e| match e.root() {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => CliError::new(
            Failure::Data,
            format!(
                "{e} (cache root {}; set {CACHE_ENV} or scenario.cache)",
                root.display()
            ),
        ),
        _ => {
            let mut err = CliError::from(e);
            if err.error == Failure::Io || err.error == Failure::Config {
                err = CliError::new(
                    Failure::Data,
                    format!(
                        "loading {} from {}: {}",
                        sc.dataset.as_str(),
                        root.display(),
                        err.message
                    ),
                );
            }
            err
        }
    })?;
    let limit = |set: LabeledSet<f32>, n: Option<usize>, label: &str| match n {
        Some(n) => stratified_subset(&set, n, seed::derive(cfg.seed, label, 0)),
        None => set,
    };
    let train = limit(train, sc.train_limit, "train-limit");
    let test = limit(test, sc.test_limit, "test-limit");
    let dataset_checksums = (train.checksum(), test.checksum());
    let scenario_seed = seed::derive(cfg.seed, "scenario", 0);
    let mut scenario = match sc.choice {
        ScenarioChoice::ClassIncremental { classes_per_step } => {
            class_incremental(&train, &test, classes_per_step, scenario_seed)?
        }
        ScenarioChoice::RotatedMnist { steps } => {
            rotated_mnist(&train, &test, steps, scenario_seed)?
        }
    };
    scenario.dataset_name = sc.dataset.as_str().to_string();
    let run = cfg.run_config(train.shape(), train.class_count())?;
    Ok(Prepared {
        scenario,
        run,
        dataset_checksums,
    })
}

#[derive(Serialize)]
struct Repro<'a> {
    schema_version: u32,
    config_sha256: String,
    master_seed: u64,
    scenario_seed: u64,
    scenario_id: String,
    distill_seeds: Vec<u64>,
    dataset: &'a str,
    train_checksum: &'a str,
    test_checksum: &'a str,
    regimes: Vec<&'static str>,
    package: &'static str,
    version: &'static str,
    target_arch: &'static str,
    target_os: &'static str,
    debug_assertions: bool,
}

fn write_repro(
    out: &Path,
    cfg: &ExperimentConfig,
    p: &Prepared,
    regimes: &[Regime],
) -> Result<(), CliError> {
    let repro = Repro {
        schema_version: 1,
        config_sha256: config_hash(cfg),
        master_seed: cfg.seed,
        scenario_seed: p.scenario.seed,
        scenario_id: p.scenario.manifest().id(),
        distill_seeds: (1..=p.scenario.len())
            .map(|t| p.run.distill_for(t).seed)
            .collect(),
        dataset: &p.scenario.dataset_name,
        train_checksum: &p.dataset_checksums.0,
        test_checksum: &p.dataset_checksums.1,
        regimes: regimes.iter().map(Regime::as_str).collect(),
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        target_arch: std::env::consts::ARCH,
        target_os: std::env::consts::OS,
        debug_assertions: cfg!(debug_assertions),
    };
    write(&out.join("repro.json"), &json(&repro))
}

/// Hash of the canonical configuration, ignoring the output directory.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output = PathBuf::new();
    sha256_hex(c.to_ini().as_bytes())
}

pub struct ExperimentOutcome {
    pub out: PathBuf,
    pub logs: Vec<RunLog>,
    pub buffers: BTreeMap<Regime, DistilledBuffer>,
    pub table: Option<ComparisonTable>,
}

fn regime_outputs(out: &Path, o: &RunOutput) -> Result<(), CliError> {
    let name = o.log.regime.as_str();
    write(
        &out.join("runlogs").join(format!("{name}.json")),
        &json(&o.log),
    )?;
    if let Some(b) = &o.buffer {
        serialize_buffer(b, &out.join("buffers").join(format!("{name}.dcb")))?;
    }
    checkpoint_model(
        &o.params,
        &out.join("checkpoints").join(format!("{name}.ckpt")),
    )?;
    Ok(())
}

/// Run every configured regime in order, sharing distillation between the
/// distilling regimes, and write all artifacts under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome, CliError> {
    let prepared = prepare(cfg)?;
    for sub in ["runlogs", "buffers", "checkpoints"] {
        mkdir(&out.join(sub))?;
    }
    write(&out.join("config.ini"), &cfg.to_ini())?;
    write(
        &out.join("scenario.json"),
        &json(&prepared.scenario.manifest()),
    )?;
    write_repro(out, cfg, &prepared, &cfg.regimes)?;

    let mut cache = DistillCache::new();
    let mut logs = Vec::new();
    let mut buffers = BTreeMap::new();
    let mut timings: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &regime in &cfg.regimes {
        let ctx = RunContext {
            cache: Some(&mut cache),
            audit: None,
        };
        match run_incremental_with(&prepared.scenario, &prepared.run, regime, ctx) {
            Ok(o) => {
                regime_outputs(out, &o)?;
                timings.insert(
                    regime.as_str(),
                    o.log
                        .steps
                        .iter()
                        .map(|s| s.wall_time.as_secs_f64())
                        .collect(),
                );
                if let Some(b) = o.buffer {
                    buffers.insert(regime, b);
                }
                logs.push(o.log);
            }
            Err(f) => {
                write(
                    &out.join("runlogs")
                        .join(format!("{}.json", regime.as_str())),
                    &json(&f.partial),
                )?;
                write_checksums(out)?;
                return Err(CliError::from(f.error));
            }
        }
    }
    write(&out.join("timings.json"), &json(&timings))?;
    let table = write_report(out, &logs)?;
    write_checksums(out)?;
    Ok(ExperimentOutcome {
        out: out.to_path_buf(),
        logs,
        buffers,
        table,
    })
}

/// Table and series files. The table is skipped when no fixed_largest log
/// is available to serve as reference.
pub fn write_report(out: &Path, logs: &[RunLog]) -> Result<Option<ComparisonTable>, CliError> {
    let mut ordered: Vec<&RunLog> = logs.iter().collect();
    ordered.sort_by_key(|l| Regime::ALL.iter().position(|r| *r == l.regime));
    let series: Vec<_> = ordered.iter().map(|l| accuracy_flops_series(l)).collect();
    write(&out.join("series.csv"), &series_csv(&series))?;
    if !logs.iter().any(|l| l.regime == Regime::FixedLargest) {
        return Ok(None);
    }
    let table = compare(logs)?;
    for (format, ext) in [
        (ReportFormat::Csv, "csv"),
        (ReportFormat::Json, "json"),
        (ReportFormat::TextTable, "txt"),
    ] {
        write(
            &out.join(format!("table.{ext}")),
            &render_report(&table, &series, format),
        )?;
    }
    Ok(Some(table))
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io("listing", dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io("listing", dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, base, out)?;
        } else {
            let rel = path.strip_prefix(base).expect("under base").to_path_buf();
            let name = rel.to_string_lossy();
            if name != CHECKSUM_FILE && name != "error.json" && !name.ends_with(".tmp") {
                out.push(rel);
            }
        }
    }
    Ok(())
}

fn rel_name(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn write_checksums(out: &Path) -> Result<(), CliError> {
    let mut files = Vec::new();
    collect_files(out, out, &mut files)?;
    let mut lines: Vec<String> = files
        .iter()
        .map(|rel| {
            let path = out.join(rel);
            fs::read(&path)
                .map(|b| format!("{}  {}", sha256_hex(&b), rel_name(rel)))
                .map_err(|e| CliError::io("reading", &path, e))
        })
        .collect::<Result<_, _>>()?;
    lines.sort_by(|a, b| a[66..].cmp(&b[66..]));
    write(&out.join(CHECKSUM_FILE), &(lines.join("\n") + "\n"))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub files_checked: usize,
    pub problems: Vec<String>,
}

/// Check every listed checksum and decode buffers, checkpoints and logs.
pub fn verify(dir: &Path) -> Result<VerifyReport, CliError> {
    let list_path = dir.join(CHECKSUM_FILE);
    let list =
        fs::read_to_string(&list_path).map_err(|e| CliError::io("reading", &list_path, e))?;
    let mut report = VerifyReport::default();
    for line in list.lines().filter(|l| !l.trim().is_empty()) {
        let Some((want, name)) = line.split_once("  ") else {
            report
                .problems
                .push(format!("malformed checksum line '{line}'"));
            continue;
        };
        let path = dir.join(name);
        report.files_checked += 1;
        match fs::read(&path) {
            Err(e) => report.problems.push(format!("{name}: {e}")),
            Ok(bytes) => {
                let got = sha256_hex(&bytes);
                if got != want {
                    report.problems.push(format!(
                        "{name}: checksum mismatch (expected {want}, got {got})"
                    ));
                    continue;
                }
                let decoded = if name.ends_with(".dcb") {
                    deserialize_buffer(&path).map(|_| ())
                } else if name.ends_with(".ckpt") {
                    restore_model(&path, None).map(|_| ())
                } else if name.starts_with("runlogs/") {
                    serde_json::from_slice::<RunLog>(&bytes)
                        .map(|_| ())
                        .map_err(|e| Error::Format(e.to_string()))
                } else {
                    Ok(())
                };
                if let Err(e) = decoded {
                    report.problems.push(format!("{name}: {e}"));
                }
            }
        }
    }
    let mut present = Vec::new();
    collect_files(dir, dir, &mut present)?;
    for rel in present {
        let name = rel_name(&rel);
        if !list.lines().any(|l| l.ends_with(&format!("  {name}"))) {
            report
                .problems
                .push(format!("{name}: not covered by {CHECKSUM_FILE}"));
        }
    }
    Ok(report)
}

pub fn read_logs(dir: &Path) -> Result<Vec<RunLog>, CliError> {
    let logs_dir = dir.join("runlogs");
    let mut paths: Vec<PathBuf> = fs::read_dir(&logs_dir)
        .map_err(|e| CliError::io("listing", &logs_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| CliError::io("reading", p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new(Failure::Data, format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Rebuild tables and series from the run logs in `dir`.
pub fn report(dir: &Path) -> Result<Option<ComparisonTable>, CliError> {
    let logs = read_logs(dir)?;
    if logs.is_empty() {
        return Err(CliError::new(
            Failure::Data,
            format!("no run logs under {}", dir.join("runlogs").display()),
        ));
    }
    let table = write_report(dir, &logs)?;
    write_checksums(dir)?;
    Ok(table)
}

#[derive(Serialize)]
struct DistillStep {
    t: usize,
    seed: u64,
    images: usize,
    flops: u64,
    loss_start: f64,
    loss_end: f64,
    fallback_classes: Vec<usize>,
}

/// Distill every scenario step and write the buffer; no training.
pub fn distill_only(cfg: &ExperimentConfig, out: &Path) -> Result<DistilledBuffer, CliError> {
    let p = prepare(cfg)?;
    mkdir(&out.join("buffers"))?;
    write(&out.join("config.ini"), &cfg.to_ini())?;
    write(&out.join("scenario.json"), &json(&p.scenario.manifest()))?;
    write_repro(out, cfg, &p, &[])?;
    let first = &p.scenario.steps[0].train;
    let mut buffer = DistilledBuffer::new(first.shape(), first.class_count());
    let mut steps = Vec::new();
    for step in &p.scenario.steps {
        let dc = p.run.distill_for(step.t);
        let o = distill(&step.train, &dc).map_err(|e| Error::Stage {
            step: step.t,
            stage: "distill",
            source: Box::new(e),
        })?;
        buffer.append_step(step.t, &o.synthetic)?;
        steps.push(DistillStep {
            t: step.t,
            seed: dc.seed,
            images: o.synthetic.len(),
            flops: o.flops,
            loss_start: o.losses.first().copied().unwrap_or(0.0),
            loss_end: o.losses.last().copied().unwrap_or(0.0),
            fallback_classes: o.fallback_classes,
        });
    }
    serialize_buffer(&buffer, &out.join("buffers").join("distilled.dcb"))?;
    write(&out.join("distill.json"), &json(&steps))?;
    write_checksums(out)?;
    Ok(buffer)
}

/// Merge worker directories produced by parallel regime runs into `out`.
pub fn assemble(
    out: &Path,
    workers: &[(Regime, PathBuf)],
) -> Result<Option<ComparisonTable>, CliError> {
    let mut logs = Vec::new();
    let mut timings = serde_json::Map::new();
    for (regime, dir) in workers {
        let name = regime.as_str();
        for (sub, ext) in [
            ("runlogs", "json"),
            ("buffers", "dcb"),
            ("checkpoints", "ckpt"),
        ] {
            let src = dir.join(sub).join(format!("{name}.{ext}"));
            if src.exists() {
                mkdir(&out.join(sub))?;
                let dst = out.join(sub).join(format!("{name}.{ext}"));
                fs::copy(&src, &dst).map_err(|e| CliError::io("copying", &src, e))?;
            }
        }
        for shared in ["config.ini", "scenario.json"] {
            let src = dir.join(shared);
            if src.exists() && !out.join(shared).exists() {
                fs::copy(&src, out.join(shared)).map_err(|e| CliError::io("copying", &src, e))?;
            }
        }
        if let Ok(text) = fs::read_to_string(dir.join("timings.json")) {
            if let Ok(serde_json::Value::Object(m)) = serde_json::from_str(&text) {
                timings.extend(m);
            }
        }
        logs.extend(read_logs(dir)?);
    }
    write(&out.join("timings.json"), &json(&timings))?;
    let table = write_report(out, &logs)?;
    write_checksums(out)?;
    Ok(table)
}
