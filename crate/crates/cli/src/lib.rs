//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a runtime failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hopper_core::bench::{
    build_clients, evaluate, load_dataset, sample_groups, sample_training_mixture,
    HarnessConfig, QASample, SourceDataset, Workload,
};
use hopper_core::grpo::toy::{toy_policy_train, write_curve_csv, ToyTask};
use hopper_core::grpo::{export_batch, HashTokenizer};
use hopper_core::rollout::{RolloutEngine, RunMode};
use hopper_core::Terminal;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hopper", version, about = "Planner/tool-agent rollouts, evaluation and GRPO utilities")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Forbid live endpoints; only fixtures and cache replay are used.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one question and print its trajectory.
    Rollout(RolloutArgs),
    /// Evaluate a dataset and write a report.
    Eval(EvalArgs),
    /// Sample rollout groups and write a training batch.
    ExportBatch(ExportArgs),
    /// Train the toy policy and write its learning curve.
    TrainToy(ToyArgs),
    /// Build the seeded two-source training mixture.
    Mixture(MixtureArgs),
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    s.parse::<RunMode>().map_err(|_| {
        let names: Vec<&str> = RunMode::ALL.iter().map(|m| m.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

#[derive(Debug, Args)]
struct ModeArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<RunMode>,
    #[arg(long)]
    max_rounds: Option<usize>,
}

#[derive(Debug, Args)]
struct RolloutArgs {
    #[arg(long)]
    question: String,
    #[arg(long, default_value = "cli-0")]
    prompt_id: String,
    #[command(flatten)]
    mode: ModeArgs,
    /// Print the JSON dump instead of the tagged text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset identity; guessed from the file name when absent.
    #[arg(long)]
    source: Option<SourceDataset>,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// JSON-lines prompts with golds.
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    mode: ModeArgs,
}

#[derive(Debug, Args)]
struct ToyArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    kl_beta: Option<f64>,
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MixtureArgs {
    #[arg(long)]
    hotpot: PathBuf,
    #[arg(long)]
    twowiki: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    total: Option<usize>,
    /// Share drawn from the HotpotQA pool; falls back to `[mixture] ratio`.
    #[arg(long)]
    ratio: Option<f64>,
}

type Failure = String;

fn fail(e: impl std::fmt::Display) -> Failure {
    e.to_string()
}

fn load_config(cli: &Cli) -> Result<HarnessConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => HarnessConfig::load(p).map_err(fail)?,
        None => HarnessConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.toy.seed = seed;
    }
    Ok(cfg)
}

fn apply_mode(cfg: &mut HarnessConfig, m: &ModeArgs) {
    if let Some(mode) = m.mode {
        cfg.rollout.mode = mode;
    }
    if let Some(r) = m.max_rounds {
        cfg.rollout.max_rounds = r;
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| format!("{}: {e}", tmp.display()))?;
    fs::rename(&tmp, path).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_rollout(cli: &Cli, args: &RolloutArgs) -> Result<(), Failure> {
    let mut cfg = load_config(cli)?;
    apply_mode(&mut cfg, &args.mode);
    cfg.validate().map_err(fail)?;
    let clients = build_clients(&cfg, cli.offline, Workload::Evaluation).map_err(fail)?;
    let engine = RolloutEngine::new(&*clients.planner, &*clients.toolcaller, &*clients.search, cfg.rollout);
    let t = engine
        .run_rollout(&args.question, &args.prompt_id, cfg.seed)
        .map_err(fail)?;
    let mut out = std::io::stdout().lock();
    if args.json {
        let text = serde_json::to_string_pretty(&t.to_dump()).map_err(fail)?;
        writeln!(out, "{text}").map_err(fail)?;
    } else {
        writeln!(out, "{t}").map_err(fail)?;
    }
    if t.terminal != Terminal::Answered {
        eprintln!("terminal: {:?} after {} round(s)", t.terminal, t.rounds_used());
        if let Some(r) = &t.rejected_emission {
            eprintln!("rejected emission: {r}");
        }
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), Failure> {
    let mut cfg = load_config(cli)?;
    apply_mode(&mut cfg, &args.mode);
    cfg.validate().map_err(fail)?;
    let samples = load_dataset(&args.dataset, args.source.clone())
        .map_err(|e| format!("{}: {e}", args.dataset.display()))?;
    let name = args
        .source
        .clone()
        .unwrap_or_else(|| SourceDataset::from_path(&args.dataset));
    let name = match name {
        SourceDataset::Custom => args
            .dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into()),
        known => known.to_string(),
    };
    let clients = build_clients(&cfg, cli.offline, Workload::Evaluation).map_err(fail)?;
    let engine = RolloutEngine::new(&*clients.planner, &*clients.toolcaller, &*clients.search, cfg.rollout);
    let report = evaluate(&name, &samples, &engine, &cfg).map_err(fail)?;

    if let Some(p) = &args.report_out {
        report.write_json(p).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    if let Some(p) = &args.csv_out {
        let mut buf = Vec::new();
        report.write_csv(&mut buf).map_err(fail)?;
        write_atomic(p, &buf)?;
    }
    println!(
        "{} {} n={} em={:.1} cem={:.1} fingerprint={}",
        report.meta.dataset,
        report.meta.mode,
        report.meta.n,
        report.em_pct(),
        report.cem_pct(),
        &report.meta.config_fingerprint[..12]
    );
    Ok(())
}

fn cmd_export(cli: &Cli, args: &ExportArgs) -> Result<(), Failure> {
    let mut cfg = load_config(cli)?;
    apply_mode(&mut cfg, &args.mode);
    if let Some(g) = args.group_size {
        cfg.grpo.group_size = g;
    }
    cfg.validate().map_err(fail)?;
    let prompts = load_dataset(&args.prompts, None)
        .map_err(|e| format!("{}: {e}", args.prompts.display()))?;
    let clients = build_clients(&cfg, cli.offline, Workload::Training).map_err(fail)?;
    let engine = RolloutEngine::new(&*clients.planner, &*clients.toolcaller, &*clients.search, cfg.rollout);
    let groups = sample_groups(&prompts, &engine, &HashTokenizer::default(), &cfg).map_err(fail)?;
    export_batch(&groups, &cfg.grpo, &args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    let records: usize = groups.iter().map(|g| g.group.size()).sum();
    println!("wrote {} groups, {records} records to {}", groups.len(), args.out.display());
    Ok(())
}

fn cmd_train_toy(cli: &Cli, args: &ToyArgs) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let mut toy = cfg.toy.clone();
    if let Some(s) = args.steps {
        toy.steps = s;
    }
    if let Some(lr) = args.learning_rate {
        toy.learning_rate = lr;
    }
    if let Some(b) = args.kl_beta {
        toy.grpo.kl_beta = b;
    }
    let run = toy_policy_train(&ToyTask::default(), &toy).map_err(fail)?;
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &run.curve).map_err(fail)?;
    match &args.curve_out {
        Some(p) => write_atomic(p, &buf)?,
        None => std::io::stdout().write_all(&buf).map_err(fail)?,
    }
    if let (Some(first), Some(last)) = (run.curve.first(), run.curve.last()) {
        eprintln!(
            "steps={} mean_reward {:.3} -> {:.3}",
            run.curve.len(),
            first.mean_reward,
            last.mean_reward
        );
    }
    Ok(())
}

fn mixture_line(s: &QASample) -> serde_json::Value {
    serde_json::json!({
        "id": s.id,
        "question": s.question,
        "golden_answers": s.golds.aliases(),
        "source": s.source_dataset.as_str(),
    })
}

fn cmd_mixture(cli: &Cli, args: &MixtureArgs) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let ratio = args
        .ratio
        .or(cfg.mixture.as_ref().map(|m| m.ratio))
        .ok_or("the mixture ratio is required: pass --ratio or set [mixture] ratio")?;
    let total = args
        .total
        .or(cfg.mixture.as_ref().map(|m| m.total))
        .unwrap_or(180);
    let load = |p: &PathBuf, s| load_dataset(p, Some(s)).map_err(|e| format!("{}: {e}", p.display()));
    let hotpot = load(&args.hotpot, SourceDataset::HotpotQA)?;
    let twowiki = load(&args.twowiki, SourceDataset::TwoWikiMultiHopQA)?;
    let mixed = sample_training_mixture(&hotpot, &twowiki, total, ratio, cfg.seed).map_err(fail)?;
    let mut buf = Vec::new();
    for s in &mixed {
        writeln!(buf, "{}", mixture_line(s)).map_err(fail)?;
    }
    write_atomic(&args.out, &buf)?;
    println!("wrote {} samples to {}", mixed.len(), args.out.display());
    Ok(())
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Rollout(a) => cmd_rollout(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::ExportBatch(a) => cmd_export(&cli, a),
        Command::TrainToy(a) => cmd_train_toy(&cli, a),
        Command::Mixture(a) => cmd_mixture(&cli, a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            log::debug!("command failed: {msg}");
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}
