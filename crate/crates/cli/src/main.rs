//! Single entry-point binary: `degrade`, `genqa`, `eval`, `report` and
//! `selftest` subcommands over a shared config file.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O or data error, 3 invariant failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use duskbench_core::config::Config;
use duskbench_core::error::Error;
use duskbench_core::eval::{
    load_journal, parse_conditions, run_eval, score, EvalOptions, ModelConfig,
};
use duskbench_core::pipeline::{parse_levels, process_dataset, DatasetManifest, SynthesisOptions};
use duskbench_core::qa::{generate_dataset, load_qa_jsonl, write_qa_jsonl, write_review_markdown};
use duskbench_core::selftest::run_selftest;
use duskbench_core::unprocess::SensorProfile;

#[derive(Parser)]
#[command(
    name = "duskbench",
    version,
    about = "Physics-based low-light image synthesis, embodied QA generation and model evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize paired low-light variants across the degradation ladder.
    Degrade(DegradeArgs),
    /// Generate multiple-choice QA pairs from annotated frames.
    Genqa(GenqaArgs),
    /// Drive a model endpoint over a QA set and journal the responses.
    Eval(EvalArgs),
    /// Aggregate a journal into the accuracy ladder report.
    Report(ReportArgs),
    /// Run the statistical invariant suite.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Global config file (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker pool size; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct DegradeArgs {
    /// JSONL manifest, one frame per line.
    #[arg(long)]
    manifest: PathBuf,
    /// Levels to synthesize, e.g. "L1,L5" or "L0..L5".
    #[arg(long, default_value = "L0..L5")]
    levels: String,
    /// Output directory root.
    #[arg(long)]
    out: PathBuf,
    /// Global seed; every output is a pure function of it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Couple noise severity to the ladder rung via fixed quantiles.
    #[arg(long)]
    ladder_coupled: bool,
    /// Sensor profile file overriding the built-in one.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct GenqaArgs {
    /// JSONL manifest with rgb/depth/semantic/overseg paths per frame.
    #[arg(long)]
    manifest: PathBuf,
    /// Output QA JSONL path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for cached per-frame statistics (stage 1).
    #[arg(long)]
    stats_cache: Option<PathBuf>,
    /// Also write a human-review markdown export.
    #[arg(long)]
    review_export: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// QA JSONL produced by genqa.
    #[arg(long)]
    qa: PathBuf,
    /// Root of the degraded image tree (or an enhanced copy of it).
    #[arg(long)]
    images: PathBuf,
    /// Model endpoint config file (TOML or JSON).
    #[arg(long)]
    model: PathBuf,
    /// Condition spec, e.g. "L0,L1..L5+noise".
    #[arg(long)]
    conditions: String,
    /// Append-only journal; already-answered keys are skipped on resume.
    #[arg(long)]
    out: PathBuf,
    /// Force text-only mode regardless of the model config.
    #[arg(long)]
    blind: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Journal written by eval.
    #[arg(long)]
    journal: PathBuf,
    /// Output format.
    #[arg(long, value_parser = ["csv", "json", "md"], default_value = "md")]
    format: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, Error> {
    match path {
        Some(path) => Config::load(path),
        None => Ok(Config::default()),
    }
}

fn effective_jobs(requested: usize) -> usize {
    if requested == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        requested
    }
}

fn cmd_degrade(args: DegradeArgs) -> Result<(), Error> {
    let config = load_config(&args.common.config)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let levels = parse_levels(&args.levels)?;
    let profile = match &args.profile {
        Some(path) => SensorProfile::load(path)?,
        None => config.sensor_profile()?,
    };
    let opts = SynthesisOptions {
        global_seed: args.seed,
        sampling: config.sampling.clone(),
        profile,
        bank: config.ccm_bank()?,
        ladder_coupled: args.ladder_coupled,
    };
    let report = process_dataset(
        &manifest,
        &levels,
        &args.out,
        &opts,
        effective_jobs(args.common.jobs),
    )?;
    println!(
        "degrade: {} images written, {} failures, {} ms",
        report.images_written,
        report.failures.len(),
        report.wall_ms
    );
    for failure in &report.failures {
        eprintln!(
            "degrade: {}/{} {}: {}",
            failure.scene, failure.frame, failure.level, failure.message
        );
    }
    if report.images_written == 0 && !report.failures.is_empty() {
        return Err(Error::Structural("every frame failed".into()));
    }
    Ok(())
}

fn cmd_genqa(args: GenqaArgs) -> Result<(), Error> {
    let config = load_config(&args.common.config)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let tables = config.qa_tables()?;
    let (pairs, report) = generate_dataset(
        &manifest,
        &tables,
        &config.qa,
        args.seed,
        args.stats_cache.as_deref(),
        effective_jobs(args.common.jobs),
    )?;
    write_qa_jsonl(&pairs, &args.out)?;
    if let Some(path) = &args.review_export {
        write_review_markdown(&pairs, path)?;
    }
    println!(
        "genqa: {} pairs from {} frames ({} failures) -> {}",
        report.pairs_generated,
        report.frames_processed,
        report.failures.len(),
        args.out.display()
    );
    for failure in &report.failures {
        eprintln!(
            "genqa: {}/{}: {}",
            failure.scene, failure.frame, failure.message
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let qa_set = load_qa_jsonl(&args.qa)?;
    let model = ModelConfig::load(&args.model)?;
    let conditions = parse_conditions(&args.conditions)?;
    let opts = EvalOptions {
        jobs: effective_jobs(args.common.jobs),
        blind: if args.blind { Some(true) } else { None },
    };
    let records = run_eval(&model, &qa_set, &args.images, &conditions, &args.out, &opts)?;
    let mine = records.iter().filter(|r| r.model == model.id).count();
    let correct = records
        .iter()
        .filter(|r| r.model == model.id && r.correct)
        .count();
    println!(
        "eval: {} records for model {} in {} ({} correct)",
        mine,
        model.id,
        args.out.display(),
        correct
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Error> {
    if !args.journal.exists() {
        return Err(Error::Io {
            path: args.journal.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "journal not found"),
        });
    }
    let records = load_journal(&args.journal)?;
    let report = score(&records)?;
    let rendered = match args.format.as_str() {
        "csv" => report.to_csv(),
        "json" => report.to_json()?,
        _ => report.to_markdown(),
    };
    match &args.out {
        Some(path) => std::fs::write(path, rendered).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_selftest(args: SelftestArgs) -> ExitCode {
    let checks = run_selftest(args.seed);
    let mut failed = 0;
    for check in &checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<40} {}", check.name, check.detail);
        if !check.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("selftest: {failed}/{} checks failed", checks.len());
        ExitCode::from(3)
    } else {
        println!("selftest: all {} checks passed", checks.len());
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    let result = match cli.command {
        Command::Degrade(args) => cmd_degrade(args),
        Command::Genqa(args) => cmd_genqa(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
        Command::Selftest(args) => return cmd_selftest(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
