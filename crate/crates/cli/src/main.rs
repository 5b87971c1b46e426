use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand};
use distill_cl_cli::experiment::{assemble, distill_only, report, run_experiment, verify};
use distill_cl_cli::{CliError, ExperimentConfig, Failure};
use distill_cl_core::trainer::Regime;

#[derive(Parser)]
#[command(
    name = "distill-cl",
    version,
    about = "Incremental learning with distilled replay buffers"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to the given regime(s); repeatable.
    #[arg(long = "regime")]
    regimes: Vec<String>,
    /// Apply the reduced desk-scale parameter set.
    #[arg(long)]
    desk_scale: bool,
    /// Run each regime in its own worker process.
    #[arg(long)]
    parallel_regimes: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured regimes and write all artifacts.
    Run(RunArgs),
    /// Distill every scenario step without training.
    Distill(RunArgs),
    /// Recompute tables and series from the run logs in a directory.
    Report { dir: PathBuf },
    /// Audit the checksums and formats of a run directory.
    Verify { dir: PathBuf },
}

fn load_config(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        let kind = if e.kind() == std::io::ErrorKind::NotFound {
            Failure::Config
        } else {
            Failure::Io
        };
        CliError::new(
            kind,
            format!("reading config {}: {e}", args.config.display()),
        )
    })?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(CliError::config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.desk_scale {
        cfg.apply_desk_scale();
    }
    if !args.regimes.is_empty() {
        let mut bad = Vec::new();
        cfg.regimes = args
            .regimes
            .iter()
            .flat_map(|r| r.split(','))
            .filter_map(|r| {
                let parsed = Regime::parse(r.trim());
                if parsed.is_none() {
                    bad.push(distill_cl_cli::FieldError {
                        field: "--regime".into(),
                        message: format!("unknown regime '{r}'"),
                    });
                }
                parsed
            })
            .collect();
        if !bad.is_empty() {
            return Err(CliError::config(bad));
        }
    }
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(CliError::config(problems));
    }
    let out = cfg.output.clone();
    Ok((cfg, out))
}

fn run_parallel(args: &RunArgs, cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let exe = std::env::current_exe()
        .map_err(|e| CliError::new(Failure::Io, format!("locating executable: {e}")))?;
    let workers: Vec<(Regime, PathBuf)> = cfg
        .regimes
        .iter()
        .map(|&r| (r, out.join("workers").join(r.as_str())))
        .collect();
    let mut children = Vec::new();
    for (regime, dir) in &workers {
        let mut cmd = Command::new(&exe);
        cmd.arg("run")
            .arg(&args.config)
            .arg("--seed")
            .arg(cfg.seed.to_string());
        cmd.arg("--out")
            .arg(dir)
            .arg("--regime")
            .arg(regime.as_str());
        if args.desk_scale {
            cmd.arg("--desk-scale");
        }
        let child = cmd.spawn().map_err(|e| {
            CliError::new(Failure::Io, format!("spawning worker for {regime}: {e}"))
        })?;
        children.push((*regime, child));
    }
    let mut failed = None;
    for (regime, mut child) in children {
        let status = child
            .wait()
            .map_err(|e| CliError::new(Failure::Io, format!("waiting for {regime} worker: {e}")))?;
        if !status.success() && failed.is_none() {
            failed = Some((regime, status.code().unwrap_or(1)));
        }
    }
    if let Some((regime, code)) = failed {
        let kind = match code {
            2 => Failure::Config,
            3 => Failure::Data,
            4 => Failure::Numeric,
            _ => Failure::Io,
        };
        return Err(CliError::new(
            kind,
            format!("{regime} worker exited with status {code}"),
        ));
    }
    if let Some(table) = assemble(out, &workers)? {
        print!(
            "{}",
            distill_cl_core::evaluation::render_report(
                &table,
                &[],
                distill_cl_core::evaluation::ReportFormat::TextTable
            )
        );
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), (CliError, Option<PathBuf>)> {
    match cli.command {
        Cmd::Run(args) => {
            let (cfg, out) = load_config(&args).map_err(|e| (e, None))?;
            let fail = |e| (e, Some(out.clone()));
            if args.parallel_regimes && cfg.regimes.len() > 1 {
                return run_parallel(&args, &cfg, &out).map_err(fail);
            }
            let outcome = run_experiment(&cfg, &out).map_err(fail)?;
            match &outcome.table {
                Some(t) => print!(
                    "{}",
                    distill_cl_core::evaluation::render_report(
                        t,
                        &[],
                        distill_cl_core::evaluation::ReportFormat::TextTable
                    )
                ),
                None => {
                    for log in &outcome.logs {
                        if let Some(s) = &log.summary {
                            println!(
                                "{}: end {:.1}% avg {:.1}%",
                                log.regime,
                                100.0 * s.end_accuracy,
                                100.0 * s.average_accuracy
                            );
                        }
                    }
                }
            }
            Ok(())
        }
        Cmd::Distill(args) => {
            let (cfg, out) = load_config(&args).map_err(|e| (e, None))?;
            let buffer = distill_only(&cfg, &out).map_err(|e| (e, Some(out.clone())))?;
            println!(
                "distilled {} images ({} bytes) into {}",
                buffer.image_count(),
                buffer.byte_size(),
                out.display()
            );
            Ok(())
        }
        Cmd::Report { dir } => {
            let table = report(&dir).map_err(|e| (e, None))?;
            match table {
                Some(t) => print!(
                    "{}",
                    distill_cl_core::evaluation::render_report(
                        &t,
                        &[],
                        distill_cl_core::evaluation::ReportFormat::TextTable
                    )
                ),
                None => println!("no fixed_largest log; wrote series.csv only"),
            }
            Ok(())
        }
        Cmd::Verify { dir } => {
            let r = verify(&dir).map_err(|e| (e, None))?;
            if r.problems.is_empty() {
                println!("ok: {} files verified", r.files_checked);
                Ok(())
            } else {
                let mut e = CliError::new(
                    Failure::Data,
                    format!("{} problem(s) in {}", r.problems.len(), dir.display()),
                );
                e.fields = r
                    .problems
                    .into_iter()
                    .map(|p| distill_cl_cli::FieldError {
                        field: "artifact".into(),
                        message: p,
                    })
                    .collect();
                Err((e, None))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, out)) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.to_json());
            if let Some(dir) = out.filter(|d| d.is_dir()) {
                let _ = std::fs::write(dir.join("error.json"), e.to_json() + "\n");
            }
            ExitCode::from(e.exit_code as u8)
        }
    }
}
