use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use osal::alloop::{self, parse_override, run_seeds, Experiment, ExperimentConfig, OracleSpec, RUN_FILE};
use osal::datapool::{write_blobs, SyntheticConfig};
use osal::oracle::{serve, AnnotationQueue};
use osal::report::{self, time_strategies, write_timing_csv};
use osal::sampling::{Batch, Strategy};
use osal::Error;

const ORACLE_URL_ENV: &str = "OSAL_ORACLE_URL";
const RUN_ROOT_ENV: &str = "OSAL_RUN_ROOT";
/// `OSAL_SET_TRAIN__LEARNING_RATE=0.01` acts like `--set train.learning_rate=0.01`.
const SET_ENV_PREFIX: &str = "OSAL_SET_";

#[derive(Parser)]
#[command(name = "osal", version, about = "Open-set active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment for every configured seed, then aggregate.
    Run(RunArgs),
    /// Continue an interrupted run (or every seed under an experiment directory).
    Resume {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Time one selection pass per strategy on a fixed pool.
    BenchSampling(BenchArgs),
    /// Aggregate run directories into curve CSVs and plots.
    Report(ReportArgs),
    /// Serve the annotation queue for a human oracle.
    ServeOracle {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Label range for batches that do not state their own.
        #[arg(long, default_value_t = 10)]
        num_classes: usize,
    },
    /// Generate a Gaussian-blob dataset.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Seeds to run; replaces the configured list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// KEY=VALUE override of a config key, dotted for nested tables.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, value_enum)]
    oracle: Option<OracleArg>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Experiment directory; one `seed-N` directory per seed goes inside.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 10_000)]
    pool_size: usize,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Samples selected per pass; defaults to the first stage budget.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_enum)]
    strategies: Vec<StrategyArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory searched recursively for runs.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "accuracy")]
    figure: String,
}

#[derive(Args)]
struct SyntheticArgs {
    /// Generator config; the flags below are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 250)]
    n_per_class: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    stddev: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Clean,
    Noisy,
    Ood,
    Human,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Uncertainty,
    Weibull,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    M1,
    M2,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

impl StrategyArg {
    fn strategy(self) -> Strategy {
        match self {
            StrategyArg::Uncertainty => Strategy::Uncertainty,
            StrategyArg::Weibull => Strategy::Weibull,
            StrategyArg::Random => Strategy::Random,
        }
    }
}

fn value_name(v: impl ValueEnum) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn env_overrides() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::env::vars()
        .filter_map(|(k, v)| k.strip_prefix(SET_ENV_PREFIX).map(|key| (key.to_lowercase().replace("__", "."), v)))
        .collect();
    out.sort();
    out
}

/// File, then `OSAL_SET_*` variables, then command-line flags.
fn load_config(args: &ConfigArgs) -> osal::Result<ExperimentConfig> {
    let mut overrides = env_overrides();
    for s in &args.sets {
        overrides.push(parse_override(s)?);
    }
    let typed = [
        ("oracle.kind", args.oracle.map(value_name)),
        ("strategy", args.strategy.map(value_name)),
        ("variant", args.variant.map(value_name)),
        ("train.optimizer", args.optimizer.map(value_name)),
    ];
    for (key, value) in typed {
        if let Some(v) = value {
            overrides.push((key.to_string(), format!("{v:?}")));
        }
    }
    let explicit_url = overrides.iter().any(|(k, _)| k == "oracle.url");
    let mut config = ExperimentConfig::load(&args.config, &overrides)?;
    if !args.seeds.is_empty() {
        config.seeds = args.seeds.clone();
    }
    if let OracleSpec::Human { url, .. } = &mut config.oracle {
        if let (false, Ok(env_url)) = (explicit_url, std::env::var(ORACLE_URL_ENV)) {
            *url = Some(env_url);
        }
    }
    config.validate()?;
    Ok(config)
}

fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn write_file(path: &Path, bytes: &[u8]) -> osal::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn cmd_run(args: &RunArgs) -> osal::Result<()> {
    let config = load_config(&args.config)?;
    let dir = args.run_dir.clone().unwrap_or_else(|| run_root().join(&config.name));
    let outcomes = run_seeds(&config, &dir)?;
    for o in &outcomes {
        let last = o.result.stages.last().expect("runs have at least one stage");
        let note = if o.already_complete { " (already complete)" } else { "" };
        println!("seed {}: {} stages, final accuracy {:.4} at {} labeled{note}", o.result.seed, o.result.stages.len(), last.accuracy, last.labeled);
    }
    let results: Vec<_> = outcomes.into_iter().map(|o| o.result).collect();
    let agg = alloop::aggregate_runs(&results)?;
    let path = dir.join("aggregate.csv");
    write_file(&path, &report::curve_csv(&[&agg])?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_resume(run_dir: &Path) -> osal::Result<()> {
    let dirs: Vec<PathBuf> = if run_dir.join(RUN_FILE).exists() || run_dir.join(alloop::CONFIG_FILE).exists() {
        vec![run_dir.to_path_buf()]
    } else {
        let entries = std::fs::read_dir(run_dir).map_err(|e| Error::Io { path: run_dir.into(), source: e })?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(alloop::CONFIG_FILE).exists())
            .collect();
        dirs.sort();
        dirs
    };
    if dirs.is_empty() {
        return Err(Error::Config(format!("{} holds no run", run_dir.display())));
    }
    for d in dirs {
        let o = alloop::resume_run(&d)?;
        if o.already_complete {
            println!("{}: already complete", d.display());
        } else {
            println!("{}: resumed after stage {:?}, now {} stages", d.display(), o.resumed_from, o.result.stages.len());
        }
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> osal::Result<()> {
    let config = load_config(&args.config)?;
    let seed = config.seeds[0];
    let exp = Experiment::prepare(&config, seed)?;
    let mut state = exp.initial_state()?;
    let (labeled, _) = exp.train_and_evaluate(&mut state, 0)?;
    let pool: Batch = exp.timing_pool(&state, args.pool_size)?;
    let budget = args.budget.unwrap_or_else(|| exp.schedule.get(1).map_or(exp.schedule[0], |n| n - exp.schedule[0]));
    let strategies: Vec<Strategy> = if args.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        args.strategies.iter().map(|s| s.strategy()).collect()
    };
    let timings = time_strategies(&strategies, &state.model, &pool, &labeled, budget, &config.sampling, args.repetitions)?;
    for t in &timings {
        println!("{:<12} pool {:>6}  mean {:.6}s  std {:.6}s  ({} reps)", t.strategy, t.pool_size, t.mean_seconds, t.std_seconds, t.repetitions);
    }
    let out = args.out.clone().unwrap_or_else(|| run_root().join(&config.name).join("timing.csv"));
    let mut buf = Vec::new();
    write_timing_csv(&mut buf, &timings)?;
    write_file(&out, &buf)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> osal::Result<()> {
    let runs = report::collect_runs(&args.run_dir)?;
    if runs.is_empty() {
        return Err(Error::Aggregation(format!("no runs under {}", args.run_dir.display())));
    }
    let aggregates = report::aggregate_groups(&runs)?;
    let out = args.out.clone().unwrap_or_else(|| args.run_dir.join("report"));
    let emitted = report::emit_curves(&aggregates, &out, &args.figure)?;
    let ood = out.join("ood.csv");
    write_file(&ood, &report::ood_csv(&report::ood_summary(&runs))?)?;
    for (i, label) in emitted.legend.iter().enumerate() {
        println!("{}. {label}", i + 1);
    }
    for label in &emitted.single_run {
        println!("note: {label} has a single seed; drawn without an error band");
    }
    println!("wrote {} curves and {}", emitted.csv_paths.len(), emitted.plot_path.display());
    Ok(())
}

fn cmd_serve(addr: SocketAddr, num_classes: usize) -> osal::Result<()> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Service(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::Service(format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| Error::Service(e.to_string()))?;
        println!("listening on http://{local}");
        let queue = Arc::new(AnnotationQueue::new(num_classes));
        serve(listener, queue, async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
        .map_err(|e| Error::Service(e.to_string()))
    })
}

fn cmd_synthetic(args: &SyntheticArgs) -> osal::Result<()> {
    let config = match &args.config {
        Some(p) => SyntheticConfig::from_path(p)?,
        None => SyntheticConfig::new(args.classes, args.n_per_class, args.dim, args.stddev, args.seed),
    };
    let d = write_blobs(&config, &args.out)?;
    println!("wrote {} train and {} eval records to {}", d.train_records.len(), d.eval_records.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Resume { run_dir } => cmd_resume(run_dir),
        Command::BenchSampling(a) => cmd_bench(a),
        Command::Report(a) => cmd_report(a),
        Command::ServeOracle { addr, num_classes } => cmd_serve(*addr, *num_classes),
        Command::MakeSynthetic(a) => cmd_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
