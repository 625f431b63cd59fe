use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ordibench::data::{self, SynthSpec};
use ordibench::harness::{self, ExperimentConfig, LeakageConfig};
use ordibench::methods::{Family, MethodConfig};
use ordibench::par::{self, Parallelism};
use ordibench::split::{self, SplitMode};
use ordibench::stats::{self, ResultMatrix};

type CmdResult = Result<ExitCode, Box<dyn Error>>;

/// Subject-exclusive benchmarking for ordinal age estimation.
#[derive(Parser)]
#[command(name = "ordibench", version)]
struct Cli {
    /// Worker bound for parallel work; 0 uses every core.
    #[arg(long, global = true, env = "ORDIBENCH_JOBS", default_value_t = 0)]
    jobs: usize,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset manifest.
    Synth(SynthArgs),
    /// Generate split files for a dataset.
    Split(SplitArgs),
    /// Check a split file against its dataset.
    Audit(AuditArgs),
    /// Run the method x dataset x split grid from a config file.
    Run(RunArgs),
    /// Friedman and Nemenyi analysis of an MAE matrix.
    Compare(CompareArgs),
    /// Compare random and subject-exclusive splits on identity-correlated data.
    LeakageDemo(LeakageArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with synthetic spec fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    per_identity: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    age_min: Option<i64>,
    #[arg(long)]
    age_max: Option<i64>,
    #[arg(long)]
    identity_noise: Option<f64>,
    #[arg(long)]
    observation_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: PathBuf,
}

impl SynthArgs {
    fn spec(&self) -> Result<SynthSpec, Box<dyn Error>> {
        let mut spec = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
            None => SynthSpec::default(),
        };
        apply(&mut spec.n_identities, self.identities);
        apply(&mut spec.samples_per_identity, self.per_identity);
        apply(&mut spec.dimension, self.dim);
        apply(&mut spec.age_range[0], self.age_min);
        apply(&mut spec.age_range[1], self.age_max);
        apply(&mut spec.identity_noise, self.identity_noise);
        apply(&mut spec.observation_noise, self.observation_noise);
        apply(&mut spec.seed, self.seed);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct SplitArgs {
    /// Dataset manifest.
    #[arg(long)]
    dataset: PathBuf,
    /// `se` (subject-exclusive) or `rs` (random).
    #[arg(long, default_value = "se")]
    mode: SplitMode,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
    fractions: Vec<f64>,
    /// Number of splits; split i uses seed base_seed + i.
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Output directory for split{i}.json files.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    mode: Option<SplitMode>,
    #[arg(long)]
    n_splits: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Record measured wall time per cell (makes run records non-reproducible).
    #[arg(long)]
    wall_time: bool,
    /// Significance level for the rank report.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct CompareArgs {
    /// MAE matrix (dataset,<method>... header).
    matrix: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Write the text report here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the JSON report.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct LeakageArgs {
    /// JSON file with leakage demo settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    identity_noise: Option<f64>,
    #[arg(long)]
    observation_noise: Option<f64>,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    per_identity: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    family: Option<Family>,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn apply<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => fs::write(p, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let table = data::generate_synthetic(&args.spec()?)?;
    data::save_dataset(&table, &args.output)?;
    eprintln!("wrote {} samples to {}", table.len(), args.output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_split(args: &SplitArgs) -> CmdResult {
    let table = data::load_dataset(&args.dataset)?;
    let fractions: [f64; 3] = args.fractions.as_slice().try_into().map_err(|_| "--fractions needs exactly three values")?;
    let series = split::make_split_series(&table, args.mode, fractions, args.base_seed, args.n)?;
    fs::create_dir_all(&args.output)?;
    for (i, s) in series.iter().enumerate() {
        split::save_split(s, args.output.join(format!("split{i}.json")))?;
    }
    eprintln!("wrote {} splits to {}", series.len(), args.output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_audit(args: &AuditArgs) -> CmdResult {
    let table = data::load_dataset(&args.dataset)?;
    let spec = split::load_split(&args.split)?;
    let report = split::audit_split(&table, &spec)?;
    println!("{report}");
    if let Some(p) = &args.json {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(if report.is_identity_disjoint() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_run(args: &RunArgs, jobs: usize, par: Parallelism) -> CmdResult {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    apply(&mut cfg.split.mode, args.mode);
    apply(&mut cfg.split.n_splits, args.n_splits);
    apply(&mut cfg.split.base_seed, args.base_seed);
    apply(&mut cfg.train.epochs, args.epochs);
    cfg.record_wall_time |= args.wall_time;
    if jobs != 0 {
        cfg.jobs = jobs;
    }
    let base_dir = args.config.parent().unwrap_or(Path::new("."));
    // a flag is relative to the working directory, a config value to the config file
    let out_dir = match &args.output_dir {
        Some(dir) => dir.clone(),
        None if cfg.output_dir.is_relative() => base_dir.join(&cfg.output_dir),
        None => cfg.output_dir.clone(),
    };

    let outcome = harness::run_grid(&cfg, base_dir, par)?;
    let summary = harness::write_outputs(&outcome, &out_dir, args.alpha)?;
    eprintln!("wrote {} run records to {}", outcome.records.len(), out_dir.display());
    if let Some(s) = summary {
        println!("{s}");
    }
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &outcome.failures {
            eprintln!("failed cell {}/{}/{}: {}", f.dataset, f.method, f.split, f.error);
        }
        Ok(ExitCode::from(1))
    }
}

fn cmd_compare(args: &CompareArgs) -> CmdResult {
    let matrix = ResultMatrix::parse_csv(&fs::read_to_string(&args.matrix)?)?;
    let summary = stats::friedman_test(&matrix, args.alpha)?;
    write_or_print(args.output.as_deref(), &summary.to_string())?;
    if let Some(p) = &args.json {
        fs::write(p, serde_json::to_string_pretty(&harness::rank_report_json(None, &summary))? + "\n")?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_leakage(args: &LeakageArgs, jobs: usize, par: Parallelism) -> CmdResult {
    let mut cfg: LeakageConfig = match &args.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => LeakageConfig::default(),
    };
    apply(&mut cfg.n_seeds, args.seeds);
    apply(&mut cfg.base_seed, args.base_seed);
    apply(&mut cfg.synth.identity_noise, args.identity_noise);
    apply(&mut cfg.synth.observation_noise, args.observation_noise);
    apply(&mut cfg.synth.n_identities, args.identities);
    apply(&mut cfg.synth.samples_per_identity, args.per_identity);
    apply(&mut cfg.train.epochs, args.epochs);
    if let Some(f) = args.family {
        cfg.method = MethodConfig::new(f);
    }
    cfg.synth.validate()?;
    cfg.train.validate()?;
    let report = par::with_jobs(jobs, || harness::leakage_demo(&cfg, par))?;
    println!("{report}");
    if let Some(p) = &args.json {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let par = if cli.sequential { Parallelism::Sequential } else { Parallelism::default() };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Run(a) => cmd_run(a, cli.jobs, par),
        Command::Compare(a) => cmd_compare(a),
        Command::LeakageDemo(a) => cmd_leakage(a, cli.jobs, par),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
