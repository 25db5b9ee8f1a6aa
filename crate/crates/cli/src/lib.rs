//! `vps` command line: run the verification pipeline over case directories.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use vps_core::config::PipelineConfig;
use vps_core::pipeline::{run_case_with, CaseStatus, Clients, RunMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_REVIEW: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vps", version, about = "Multimedia news verification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Every stage, ending with report.json and report.md.
    Run(CommonArgs),
    /// Media processing only: keyframes and transcripts.
    Keyframes(CommonArgs),
    /// Evidence retrieval only.
    Evidence(CommonArgs),
    /// Assemble the report from cached stage outputs.
    Report(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Case directory (metadata.json plus media files). Repeatable.
    #[arg(long = "case", required = true)]
    cases: Vec<PathBuf>,
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use stub clients from the case's stubs/ directory; no network.
    #[arg(long)]
    offline: bool,
    /// Ignore cached stage outputs.
    #[arg(long)]
    refresh: bool,
    /// Write caches and reports under <output>/<case_id> instead of the case directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Stub fixture directory for --offline (default: <case>/stubs).
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Cases processed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn load_config(args: &CommonArgs) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_process_env();
    cfg.offline |= args.offline;
    cfg.refresh |= args.refresh;
    if let Some(out) = &args.output {
        cfg.output_dir = out.clone();
    }
    if let Some(f) = &args.fixtures {
        cfg.fixtures_dir = Some(f.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_one(case_dir: &Path, cfg: &PipelineConfig, mode: RunMode) -> anyhow::Result<CaseStatus> {
    if !case_dir.is_dir() {
        anyhow::bail!("case directory {} does not exist", case_dir.display());
    }
    let clients = Clients::from_config(cfg, case_dir);
    run_case_with(case_dir, cfg, &clients, mode)
        .with_context(|| format!("case {}", case_dir.display()))
}

fn report_status(status: &CaseStatus) {
    println!(
        "{}: stage={} human_review={} dir={}",
        status.case_id,
        status.stage.as_str(),
        status.human_review_required,
        status.work_dir.display()
    );
    for r in &status.reasons {
        println!("  review: {r}");
    }
}

fn run(cmd: Command) -> i32 {
    let (args, mode) = match cmd {
        Command::Run(a) => (a, RunMode::Full),
        Command::Keyframes(a) => (a, RunMode::MediaOnly),
        Command::Evidence(a) => (a, RunMode::EvidenceOnly),
        Command::Report(a) => (a, RunMode::ReportOnly),
    };
    let cfg = match load_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_FATAL;
        }
    };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<anyhow::Result<CaseStatus>>>> =
        Mutex::new((0..args.cases.len()).map(|_| None).collect());
    let workers = args.jobs.clamp(1, args.cases.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(dir) = args.cases.get(i) else { break };
                let r = run_one(dir, &cfg, mode);
                results.lock().expect("results")[i] = Some(r);
            });
        }
    });
    let mut code = EXIT_OK;
    for r in results.into_inner().expect("results").into_iter().flatten() {
        match r {
            Ok(status) => {
                report_status(&status);
                if status.human_review_required && code == EXIT_OK {
                    code = EXIT_REVIEW;
                }
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                code = EXIT_FATAL;
            }
        }
    }
    code
}

/// Parses `argv` (program name first) and runs; returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn,symphonia=error")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    match Cli::try_parse_from(argv) {
        Ok(cli) => run(cli.command),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
