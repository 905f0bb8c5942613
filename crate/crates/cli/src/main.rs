use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use smlab_core::harness::{emit_report, run_configured, Algorithm, ExperimentConfig, OutcomeReport, Precision};
use smlab_core::instance::{generate_instance, Instance, PrefType, Variant};
use smlab_core::matching::Matching;
use smlab_core::metrics::score;

#[derive(Parser)]
#[command(name = "smlab", version, about = "Decentralized stable matching laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate instance files.
    Gen(GenArgs),
    /// Run an experiment and write its report.
    Run(RunArgs),
    /// Score a matching against an instance.
    Score(ScoreArgs),
    /// Recompute aggregates of an existing report.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "sm")]
    variant: Variant,
    #[arg(long, default_value = "sym")]
    pref: PrefType,
    /// Total number of agents over both sides.
    #[arg(long, default_value_t = 8)]
    agents: usize,
    /// Seed of the first instance; later ones use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    pref: Option<PrefType>,
    /// Grid size as ROWSxCOLS.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Total number of agents over both sides.
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Number of instances, seeded consecutively from --seed.
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    precision: Option<Precision>,
    /// Dump each run's evaluation episode as JSON lines.
    #[arg(long)]
    trajectory: bool,
    /// Save every trained learner.
    #[arg(long)]
    checkpoints: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    matching: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json or the directory holding it.
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let r = r.trim().parse::<usize>().map_err(|e| format!("rows: {e}"))?;
    let c = c.trim().parse::<usize>().map_err(|e| format!("cols: {e}"))?;
    if r == 0 || c == 0 {
        return Err("grid needs at least one cell".into());
    }
    Ok((r, c))
}

fn n_side_of(agents: usize) -> Result<usize> {
    if agents == 0 || !agents.is_multiple_of(2) {
        bail!("--agents must be a positive even number, got {agents}");
    }
    Ok(agents / 2)
}

fn gen(args: GenArgs) -> Result<()> {
    let n_side = n_side_of(args.agents)?;
    fs::create_dir_all(&args.out)?;
    for k in 0..args.count as u64 {
        let seed = args.seed + k;
        let x = generate_instance::<f64>(args.variant, args.pref, n_side, seed)?;
        let path = args.out.join(format!("instance_{seed}.json"));
        x.write_json(BufWriter::new(File::create(&path)?))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut c = match &args.config {
        Some(p) => serde_json::from_reader(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(a) = args.algo {
        c.algorithm = a;
    }
    if let Some(v) = args.variant {
        c.variant = v;
    }
    if let Some(p) = args.pref {
        c.pref_type = p;
    }
    if let Some((r, k)) = args.grid {
        c.rows = r;
        c.cols = k;
    }
    if let Some(a) = args.agents {
        c.n_side = n_side_of(a)?;
    }
    if let Some(e) = args.episodes {
        c.episodes = e;
    }
    if let Some(s) = args.steps {
        c.steps_per_episode = s;
    }
    if let Some(r) = args.repeats {
        c.repeats = r;
    }
    if let Some(s) = args.seed {
        c.seed = s;
        c.start_seed = s;
    }
    if args.seed.is_some() || args.instances.is_some() {
        let count = args.instances.unwrap_or(c.instance_seeds.len());
        c.instance_seeds = (c.seed..c.seed + count as u64).collect();
    }
    if let Some(w) = args.workers {
        c.workers = w;
    }
    if let Some(p) = args.precision {
        c.precision = p;
    }
    c.trajectory |= args.trajectory;
    c.checkpoints |= args.checkpoints;
    c.validate()?;
    Ok(c)
}

fn summarize(report: &OutcomeReport) {
    let a = &report.aggregates;
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
    eprintln!(
        "{} runs ({} failed): stability {}%, MSM {}%, MM {}%",
        a.runs,
        a.failed,
        fmt(a.stability_pct),
        fmt(a.msm_pct),
        fmt(a.mm_pct)
    );
    for r in report.runs.iter().filter(|r| r.error.is_some()) {
        eprintln!("run instance={} repeat={} failed: {}", r.instance_seed, r.repeat, r.error.as_deref().unwrap_or(""));
    }
}

fn run(args: RunArgs) -> Result<bool> {
    let config = build_config(&args)?;
    let report = run_configured(&config, Some(&args.out))?;
    emit_report(&report, &args.out)?;
    summarize(&report);
    eprintln!("wrote {}", args.out.display());
    Ok(report.all_succeeded())
}

fn score_cmd(args: ScoreArgs) -> Result<()> {
    let x = Instance::<f64>::read_json(BufReader::new(File::open(&args.instance)?))
        .with_context(|| format!("loading {}", args.instance.display()))?;
    let m: Matching = serde_json::from_reader(BufReader::new(File::open(&args.matching)?))
        .with_context(|| format!("loading {}", args.matching.display()))?;
    let metrics = score(&x, &m)?;
    match args.out {
        Some(p) => serde_json::to_writer_pretty(BufWriter::new(File::create(p)?), &metrics)?,
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &metrics)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<bool> {
    let path = if args.input.is_dir() { args.input.join("report.json") } else { args.input.clone() };
    let mut report = OutcomeReport::read_json(BufReader::new(File::open(&path)?))
        .with_context(|| format!("loading {}", path.display()))?;
    report.reaggregate();
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    emit_report(&report, &dir)?;
    summarize(&report);
    Ok(report.all_succeeded())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a).map(|_| true),
        Command::Run(a) => run(a),
        Command::Score(a) => score_cmd(a).map(|_| true),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
