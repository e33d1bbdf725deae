//! `spitband` — experiment harness for the SPIT-filter bandit simulation.
//!
//! Subcommands: `generate-corpus`, `scenario-gen`, `run`, `sweep`,
//! `report`, `snapshot-inspect`. Configuration comes from TOML files with
//! flag overrides (flags win); `SPITBAND_OUT_DIR` overrides the configured
//! output directory (flags still win over the environment).
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spitband_core::runner::{
    resume_experiment, ExperimentOutcome, RunCheckpoint, EXPERIMENT_FORMAT, OUTPUT_DIR_ENV,
};
use spitband_core::{
    run_experiment, sweep, Cmabfas, Corpus, CorpusSpec, Error, ExperimentConfig, LearnerSpec,
    Scenario, SweepConfig,
};

#[derive(Parser)]
#[command(
    name = "spitband",
    version,
    about = "Contextual-bandit SPIT filter simulation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate a synthetic labeled corpus (TSV).
    GenerateCorpus {
        /// Corpus spec TOML; defaults to the built-in composition.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a scenario file (action set + success probabilities).
    ScenarioGen {
        /// Number of actions (>= 2). 3 emits the hand-set default table.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override for the spitter class's second-test success probability
        /// (3-action table only; 0.1 gives the spitter a unique optimum).
        #[arg(long)]
        spitter_a3: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment (replicated, seeded, checkpointed).
    Run(RunArgs),
    /// Run several learner configurations and emit a comparison table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretty-print the aggregate (or sweep) table of a finished run.
    Report {
        #[arg(long = "run")]
        run_dir: PathBuf,
    },
    /// Describe a learner snapshot or run checkpoint file.
    SnapshotInspect { file: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment TOML; optional when everything is given by flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Learner kind: cmabfas or naive-baseline.
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    corpus_spec: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Base seed; replicate i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Confidence scale constant (cmabfas).
    #[arg(long)]
    c: Option<f64>,
    /// Smoothness modulus (cmabfas).
    #[arg(long)]
    lambda: Option<f64>,
    /// Confidence horizon T (cmabfas); defaults to the run length.
    #[arg(long)]
    horizon: Option<u64>,
    /// Clustering radius (naive-baseline).
    #[arg(long)]
    max_radius: Option<u32>,
    /// Cluster budget (naive-baseline).
    #[arg(long)]
    max_clusters: Option<usize>,
    /// Comma-separated checkpoint steps.
    #[arg(long)]
    checkpoints: Option<String>,
    /// Write a per-step trace CSV.
    #[arg(long)]
    trace: bool,
    /// Report regret in raw reward units instead of scaled.
    #[arg(long)]
    raw_units: bool,
    /// Write a resumable checkpoint after this step of each replicate.
    #[arg(long)]
    checkpoint_at: Option<u64>,
    /// Resume a single replicate from a run checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::GenerateCorpus { spec, seed, out } => generate_corpus(spec, seed, &out),
        Command::ScenarioGen {
            k,
            seed,
            spitter_a3,
            out,
        } => scenario_gen(k, seed, spitter_a3, &out),
        Command::Run(args) => run(args),
        Command::Sweep { config, out } => run_sweep(&config, out),
        Command::Report { run_dir } => report(&run_dir),
        Command::SnapshotInspect { file } => snapshot_inspect(&file),
    }
}

fn generate_corpus(spec: Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<(), Error> {
    let mut spec = match spec {
        Some(path) => CorpusSpec::load(&path)?,
        None => CorpusSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let corpus = Corpus::generate(&spec)?;
    corpus.save(out)?;
    println!(
        "wrote {} calls ({} distinct headers) to {}",
        corpus.len(),
        corpus.space().len(),
        out.display()
    );
    for (class, count) in corpus.class_counts() {
        println!("  {class}: {count}");
    }
    Ok(())
}

fn scenario_gen(k: usize, seed: u64, spitter_a3: Option<f64>, out: &Path) -> Result<(), Error> {
    let scenario = match spitter_a3 {
        Some(p) => {
            if k != 3 {
                return Err(Error::config(
                    "--spitter-a3 applies to the 3-action table only",
                ));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("--spitter-a3 must lie in [0, 1]"));
            }
            Scenario::three_action_default(Some(p))
        }
        None => Scenario::generate(k, seed)?,
    };
    scenario.save(out)?;
    println!(
        "wrote {}-action scenario to {} (unique optima: {})",
        scenario.k,
        out.display(),
        scenario.has_unique_optima()
    );
    Ok(())
}

fn parse_checkpoints(text: &str) -> Result<Vec<u64>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|e| Error::config(format!("bad checkpoint '{s}': {e}")))
        })
        .collect()
}

fn run(args: RunArgs) -> Result<(), Error> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig {
            format: EXPERIMENT_FORMAT.to_string(),
            learner: LearnerSpec::cmabfas_default(),
            scenario: args
                .scenario
                .clone()
                .ok_or_else(|| Error::config("--scenario is required without --config"))?,
            corpus: None,
            corpus_spec: None,
            steps: args
                .steps
                .ok_or_else(|| Error::config("--steps is required without --config"))?,
            replicates: 1,
            base_seed: 0,
            checkpoints: None,
            out_dir: PathBuf::new(),
            trace: false,
            raw_units: false,
            checkpoint_at: None,
        },
    };

    // Environment override first, explicit flags last.
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            config.out_dir = PathBuf::from(dir);
        }
    }
    if let Some(kind) = &args.learner {
        config.learner = match kind.as_str() {
            "cmabfas" => LearnerSpec::cmabfas_default(),
            "naive-baseline" => LearnerSpec::baseline(6, 500),
            other => {
                return Err(Error::config(format!(
                    "unknown learner '{other}' (expected cmabfas or naive-baseline)"
                )))
            }
        };
    }
    match &mut config.learner {
        LearnerSpec::Cmabfas { c, lambda, horizon } => {
            if args.max_radius.is_some() || args.max_clusters.is_some() {
                return Err(Error::config(
                    "--max-radius/--max-clusters apply to the naive-baseline learner",
                ));
            }
            if let Some(v) = args.c {
                *c = v;
            }
            if let Some(v) = args.lambda {
                *lambda = v;
            }
            if let Some(v) = args.horizon {
                *horizon = Some(v);
            }
        }
        LearnerSpec::NaiveBaseline {
            max_radius,
            max_clusters,
        } => {
            if args.c.is_some() || args.lambda.is_some() || args.horizon.is_some() {
                return Err(Error::config(
                    "--c/--lambda/--horizon apply to the cmabfas learner",
                ));
            }
            if let Some(v) = args.max_radius {
                *max_radius = v;
            }
            if let Some(v) = args.max_clusters {
                *max_clusters = v;
            }
        }
    }
    if let Some(path) = args.scenario {
        config.scenario = path;
    }
    // A corpus flag replaces the configured corpus source entirely; passing
    // both flags is rejected by validation like in the file.
    match (args.corpus, args.corpus_spec) {
        (Some(corpus), Some(spec)) => {
            config.corpus = Some(corpus);
            config.corpus_spec = Some(spec);
        }
        (Some(corpus), None) => {
            config.corpus = Some(corpus);
            config.corpus_spec = None;
        }
        (None, Some(spec)) => {
            config.corpus_spec = Some(spec);
            config.corpus = None;
        }
        (None, None) => {}
    }
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    if let Some(replicates) = args.replicates {
        config.replicates = replicates;
    }
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    if let Some(text) = &args.checkpoints {
        config.checkpoints = Some(parse_checkpoints(text)?);
    }
    if args.trace {
        config.trace = true;
    }
    if args.raw_units {
        config.raw_units = true;
    }
    if let Some(at) = args.checkpoint_at {
        config.checkpoint_at = Some(at);
    }
    if config.out_dir.as_os_str().is_empty() {
        return Err(Error::config("--out is required without --config"));
    }

    let outcome = match &args.resume {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let checkpoint = RunCheckpoint::from_bytes(&bytes)?;
            config.replicates = 1;
            config.checkpoint_at = None;
            resume_experiment(&config, &checkpoint)?
        }
        None => run_experiment(&config)?,
    };
    print_outcome(&outcome);
    Ok(())
}

fn print_outcome(outcome: &ExperimentOutcome) {
    println!("wrote {}", outcome.out_dir.display());
    if let Some(row) = outcome.report.rows.last() {
        println!(
            "final (t={}): regret/t mean {:.6}, nmistakes1 mean {:.1}, nmistakes2 mean {:.1} \
             over {} replicate(s)",
            row.t,
            row.regret_per_t.mean,
            row.nmistakes1.mean,
            row.nmistakes2.mean,
            outcome.report.replicates
        );
    }
}

fn run_sweep(config_path: &Path, out: Option<PathBuf>) -> Result<(), Error> {
    let mut config = SweepConfig::load(config_path)?;
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            config.out_dir = PathBuf::from(dir);
        }
    }
    if let Some(out) = out {
        config.out_dir = out;
    }
    let outcome = sweep(&config)?;
    println!("wrote {}", outcome.out_dir.display());
    let mut header = vec!["label".to_string(), "params".to_string()];
    for t in &outcome.report_at {
        header.push(format!("regret/t@{t}"));
    }
    let mut table = vec![header];
    for row in &outcome.rows {
        let mut line = vec![row.label.clone(), row.params.clone()];
        for (_, regret, _, _) in &row.cells {
            line.push(format!("{regret:.6}"));
        }
        table.push(line);
    }
    print_aligned(&table);
    Ok(())
}

fn report(run_dir: &Path) -> Result<(), Error> {
    for name in ["aggregate.csv", "sweep.csv"] {
        let path = run_dir.join(name);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            println!("{name}:");
            print_csv_table(&text);
            return Ok(());
        }
    }
    Err(Error::config(format!(
        "{} holds neither aggregate.csv nor sweep.csv",
        run_dir.display()
    )))
}

fn print_csv_table(text: &str) {
    let rows: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            line.split(',')
                .map(|cell| match cell.parse::<f64>() {
                    // Shorten long float reprs for the console.
                    Ok(v) if cell.contains(['.', 'e']) => format!("{v:.6}"),
                    _ => cell.to_string(),
                })
                .collect()
        })
        .collect();
    print_aligned(&rows);
}

fn print_aligned(rows: &[Vec<String>]) {
    if rows.is_empty() {
        return;
    }
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| format!("{cell:>width$}", width = widths[i]))
            .collect();
        println!("{}", line.join("  "));
    }
}

fn snapshot_inspect(path: &Path) -> Result<(), Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"SBCM") {
        describe_learner_snapshot(&bytes)
    } else {
        let checkpoint = RunCheckpoint::from_bytes(&bytes)?;
        println!(
            "run checkpoint: step {} of {}, seed {}",
            checkpoint.step, checkpoint.steps_total, checkpoint.seed
        );
        describe_learner_snapshot(&checkpoint.learner_snapshot()?)
    }
}

fn describe_learner_snapshot(bytes: &[u8]) -> Result<(), Error> {
    let learner = Cmabfas::restore(bytes)?;
    let config = learner.config();
    println!(
        "cmabfas snapshot: k={} c={} horizon={} lambda={} seed={} t={}",
        config.k, config.c, config.horizon, config.lambda, config.seed, learner.t()
    );
    let stats = learner.cover_stats();
    let total: u64 = stats.iter().map(|s| s.count).sum();
    println!("balls: {total} total");
    for (action, stat) in stats.iter().enumerate() {
        let levels: Vec<String> = stat
            .levels
            .iter()
            .map(|(level, count)| format!("L{level}:{count}"))
            .collect();
        println!(
            "  action {}: {} balls, min radius {}, {}",
            action + 1,
            stat.count,
            stat.min_radius,
            levels.join(" ")
        );
    }
    Ok(())
}
