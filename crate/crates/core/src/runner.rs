//! Experiment orchestration: seeded replicate execution of a
//! (learner, scenario, corpus) triple, checkpointed metrics, atomic output
//! directories with a digest manifest, parameter sweeps, and run-level
//! checkpoint/resume for the ball-cover learner.
//!
//! Every replicate owns its learner state, metrics and generators, so
//! replicates can run concurrently and still produce bit-identical
//! per-replicate artifacts in any order. Replicate `i` uses seed
//! `base_seed + i`; the environment stream (corpus draws and reward noise)
//! and the learner's tie-break stream are separate ChaCha streams of that
//! seed.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{BaselineConfig, NaiveBaseline};
use crate::cmabfas::{Cmabfas, LearnerConfig};
use crate::corpus::{Corpus, CorpusSpec};
use crate::env::Scenario;
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, checkpoint_grid, format_float, AggregateReport, RegretOracle, RunMetrics,
};
use crate::{Learner, StructureStats};

pub const EXPERIMENT_FORMAT: &str = "spitband-experiment-v1";
pub const SWEEP_FORMAT: &str = "spitband-sweep-v1";
pub const MANIFEST_FORMAT: &str = "spitband-manifest-v1";
pub const RUN_CHECKPOINT_FORMAT: &str = "spitband-run-checkpoint-v1";

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "SPITBAND_OUT_DIR";

/// ChaCha stream id of the environment generator (corpus draws + rewards),
/// distinct from the learner's tie-break stream.
const ENV_RNG_STREAM: u64 = 0x656e76;

fn default_format() -> String {
    EXPERIMENT_FORMAT.to_string()
}

fn default_sweep_format() -> String {
    SWEEP_FORMAT.to_string()
}

fn default_one() -> usize {
    1
}

fn default_c() -> f64 {
    1.0
}

fn default_lambda() -> f64 {
    1.0
}

fn default_max_radius() -> u32 {
    6
}

fn default_max_clusters() -> usize {
    500
}

/// Which learner to run, with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearnerSpec {
    Cmabfas {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
        /// Confidence horizon `T`; defaults to the run length.
        #[serde(default)]
        horizon: Option<u64>,
    },
    NaiveBaseline {
        #[serde(default = "default_max_radius")]
        max_radius: u32,
        #[serde(default = "default_max_clusters")]
        max_clusters: usize,
    },
}

impl LearnerSpec {
    pub fn cmabfas_default() -> LearnerSpec {
        LearnerSpec::Cmabfas {
            c: default_c(),
            lambda: default_lambda(),
            horizon: None,
        }
    }

    pub fn baseline(max_radius: u32, max_clusters: usize) -> LearnerSpec {
        LearnerSpec::NaiveBaseline {
            max_radius,
            max_clusters,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LearnerSpec::Cmabfas { .. } => "cmabfas",
            LearnerSpec::NaiveBaseline { .. } => "naive-baseline",
        }
    }

    pub fn params_string(&self) -> String {
        match self {
            LearnerSpec::Cmabfas { c, lambda, horizon } => match horizon {
                Some(h) => format!("c={c} lambda={lambda} horizon={h}"),
                None => format!("c={c} lambda={lambda}"),
            },
            LearnerSpec::NaiveBaseline {
                max_radius,
                max_clusters,
            } => format!("max_radius={max_radius} max_clusters={max_clusters}"),
        }
    }

    fn build(&self, k: usize, steps: u64, seed: u64) -> Result<LearnerImpl> {
        match *self {
            LearnerSpec::Cmabfas { c, lambda, horizon } => {
                let horizon = horizon.unwrap_or(steps);
                if steps > horizon {
                    log::warn!(
                        "run length {steps} exceeds confidence horizon {horizon}; \
                         bound guarantees are void past the horizon"
                    );
                }
                Ok(LearnerImpl::Cmabfas(Cmabfas::new(LearnerConfig {
                    k,
                    c,
                    horizon,
                    lambda,
                    seed,
                })?))
            }
            LearnerSpec::NaiveBaseline {
                max_radius,
                max_clusters,
            } => Ok(LearnerImpl::Baseline(NaiveBaseline::new(
                BaselineConfig::new(max_radius, max_clusters, k, seed),
            )?)),
        }
    }
}

enum LearnerImpl {
    Cmabfas(Cmabfas),
    Baseline(NaiveBaseline),
}

impl LearnerImpl {
    fn as_learner(&mut self) -> &mut dyn Learner {
        match self {
            LearnerImpl::Cmabfas(l) => l,
            LearnerImpl::Baseline(l) => l,
        }
    }

    fn structure(&self) -> StructureStats {
        match self {
            LearnerImpl::Cmabfas(l) => l.structure(),
            LearnerImpl::Baseline(l) => l.structure(),
        }
    }

    fn snapshot(&self) -> Option<Vec<u8>> {
        match self {
            LearnerImpl::Cmabfas(l) => Some(l.snapshot()),
            LearnerImpl::Baseline(_) => None,
        }
    }
}

/// Experiment definition, loadable from TOML. Relative paths are resolved
/// against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_format")]
    pub format: String,
    pub learner: LearnerSpec,
    pub scenario: PathBuf,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub corpus_spec: Option<PathBuf>,
    pub steps: u64,
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Explicit checkpoint grid; defaults to a log-spaced 1-2-5 ladder.
    /// `10^4`, `10^5` and the final step are always included.
    #[serde(default)]
    pub checkpoints: Option<Vec<u64>>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub raw_units: bool,
    /// Write a resumable run checkpoint after this step of every replicate.
    #[serde(default)]
    pub checkpoint_at: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if config.format != EXPERIMENT_FORMAT {
            return Err(Error::parse(
                path,
                format!("unsupported experiment format '{}'", config.format),
            ));
        }
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        anchor(&mut self.scenario);
        if let Some(p) = &mut self.corpus {
            anchor(p);
        }
        if let Some(p) = &mut self.corpus_spec {
            anchor(p);
        }
        anchor(&mut self.out_dir);
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::config("steps must be at least 1"));
        }
        if self.replicates < 1 {
            return Err(Error::config("replicates must be at least 1"));
        }
        match (&self.corpus, &self.corpus_spec) {
            (Some(_), Some(_)) => {
                return Err(Error::config("give either corpus or corpus_spec, not both"))
            }
            (None, None) => {
                return Err(Error::config("one of corpus or corpus_spec is required"))
            }
            _ => {}
        }
        if let Some(grid) = &self.checkpoints {
            if grid.is_empty() {
                return Err(Error::config("checkpoint list must not be empty"));
            }
            if grid.contains(&0) {
                return Err(Error::config("checkpoints start at step 1"));
            }
        }
        if let Some(at) = self.checkpoint_at {
            if at < 1 || at > self.steps {
                return Err(Error::config("checkpoint_at must lie within the run"));
            }
            if !matches!(self.learner, LearnerSpec::Cmabfas { .. }) {
                return Err(Error::config(
                    "checkpoint_at requires the cmabfas learner",
                ));
            }
        }
        Ok(())
    }

    fn load_corpus(&self) -> Result<Corpus> {
        let corpus = match (&self.corpus, &self.corpus_spec) {
            (Some(path), None) => Corpus::load(path)?,
            (None, Some(path)) => Corpus::generate(&CorpusSpec::load(path)?)?,
            _ => unreachable!("validated"),
        };
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(corpus)
    }
}

/// Checkpoint grid for a run: explicit points (clamped to the run) or the
/// default ladder, always including `10^4`, `10^5` and the final step.
pub fn resolve_grid(steps: u64, explicit: Option<&[u64]>) -> Vec<u64> {
    let mut grid: Vec<u64> = match explicit {
        Some(points) => points.iter().copied().filter(|&t| t >= 1 && t <= steps).collect(),
        None => checkpoint_grid(steps),
    };
    for fixed in [10_000, 100_000, steps] {
        if fixed <= steps {
            grid.push(fixed);
        }
    }
    grid.sort_unstable();
    grid.dedup();
    grid
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReplicateOptions {
    pub trace: bool,
    pub checkpoint_at: Option<u64>,
}

/// Everything one replicate produces.
pub struct ReplicateResult {
    pub metrics: RunMetrics,
    pub final_structure: StructureStats,
    /// Final learner snapshot (ball-cover learner only).
    pub learner_snapshot: Option<Vec<u8>>,
    /// Serialized [`RunCheckpoint`] captured at `checkpoint_at`.
    pub run_checkpoint: Option<Vec<u8>>,
    /// Learner snapshot captured at `checkpoint_at`.
    pub snapshot_at: Option<Vec<u8>>,
    pub trace_csv: Option<Vec<u8>>,
    pub wall_ms: u128,
}

fn hex_encode(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn hex_decode(text: &str) -> Result<Vec<u8>> {
    if !text.len().is_multiple_of(2) {
        return Err(Error::config("odd-length hex string"));
    }
    (0..text.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&text[i..i + 2], 16)
                .map_err(|e| Error::config(format!("bad hex: {e}")))
        })
        .collect()
}

/// Mid-run state of one replicate: learner snapshot, environment generator
/// position and the metrics accumulated so far. Resuming from it and
/// finishing reproduces an uninterrupted run bit-exactly.
#[derive(Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub format: String,
    pub step: u64,
    pub steps_total: u64,
    pub seed: u64,
    pub learner_snapshot_hex: String,
    pub env_rng_seed_hex: String,
    pub env_rng_stream: u64,
    pub env_rng_word_pos: u128,
    pub metrics: RunMetrics,
}

impl RunCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("checkpoint serializes")
    }

    /// The embedded learner snapshot record.
    pub fn learner_snapshot(&self) -> Result<Vec<u8>> {
        hex_decode(&self.learner_snapshot_hex)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<RunCheckpoint> {
        let ckpt: RunCheckpoint = serde_json::from_slice(bytes)
            .map_err(|e| Error::config(format!("bad run checkpoint: {e}")))?;
        if ckpt.format != RUN_CHECKPOINT_FORMAT {
            return Err(Error::config(format!(
                "unsupported run checkpoint format '{}'",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}

struct TraceWriter {
    buf: Vec<u8>,
}

impl TraceWriter {
    fn new(k: usize) -> TraceWriter {
        let mut buf = Vec::new();
        let mut header = String::from("t,action");
        for a in 1..=k {
            header.push_str(&format!(",score_{a}"));
        }
        header.push_str(",chosen_ball_level,spawned\n");
        buf.extend_from_slice(header.as_bytes());
        TraceWriter { buf }
    }

    fn row(
        &mut self,
        t: u64,
        action: usize,
        scores: &[f64],
        ball_level: Option<u8>,
        spawned: bool,
    ) {
        let mut line = format!("{t},{}", action + 1);
        for s in scores {
            line.push(',');
            line.push_str(&format_float(*s));
        }
        match ball_level {
            Some(level) => line.push_str(&format!(",{level}")),
            None => line.push(','),
        }
        line.push_str(if spawned { ",1\n" } else { ",0\n" });
        self.buf.extend_from_slice(line.as_bytes());
    }
}

/// Runs one replicate from scratch.
pub fn run_replicate(
    corpus: &Corpus,
    scenario: &Scenario,
    learner_spec: &LearnerSpec,
    steps: u64,
    grid: &[u64],
    seed: u64,
    options: ReplicateOptions,
) -> Result<ReplicateResult> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    scenario.validate()?;
    let mut learner = learner_spec.build(scenario.k, steps, seed)?;
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(ENV_RNG_STREAM);
    let metrics = RunMetrics::new(grid.to_vec())?;
    drive(
        corpus,
        scenario,
        &mut learner,
        &mut env_rng,
        metrics,
        1,
        steps,
        seed,
        options,
    )
}

/// Resumes a replicate from a [`RunCheckpoint`] and finishes it.
pub fn resume_replicate(
    checkpoint: &RunCheckpoint,
    corpus: &Corpus,
    scenario: &Scenario,
    options: ReplicateOptions,
) -> Result<ReplicateResult> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    scenario.validate()?;
    let snapshot = hex_decode(&checkpoint.learner_snapshot_hex)?;
    let mut learner = LearnerImpl::Cmabfas(Cmabfas::restore(&snapshot)?);
    let seed_bytes = hex_decode(&checkpoint.env_rng_seed_hex)?;
    let seed_arr: [u8; 32] = seed_bytes
        .try_into()
        .map_err(|_| Error::config("env rng seed must be 32 bytes"))?;
    let mut env_rng = ChaCha8Rng::from_seed(seed_arr);
    env_rng.set_stream(checkpoint.env_rng_stream);
    env_rng.set_word_pos(checkpoint.env_rng_word_pos);
    drive(
        corpus,
        scenario,
        &mut learner,
        &mut env_rng,
        checkpoint.metrics.clone(),
        checkpoint.step + 1,
        checkpoint.steps_total,
        checkpoint.seed,
        options,
    )
}

#[allow(clippy::too_many_arguments)]
fn drive(
    corpus: &Corpus,
    scenario: &Scenario,
    learner: &mut LearnerImpl,
    env_rng: &mut ChaCha8Rng,
    mut metrics: RunMetrics,
    first_step: u64,
    steps: u64,
    seed: u64,
    options: ReplicateOptions,
) -> Result<ReplicateResult> {
    let started = Instant::now();
    let oracle = RegretOracle::new(scenario)?;
    let mut trace = options.trace.then(|| TraceWriter::new(scenario.k));
    let mut run_checkpoint = None;
    let mut snapshot_at = None;
    for step in first_step..=steps {
        let call = *corpus.draw(env_rng).expect("non-empty corpus");
        let ctx = corpus.context(call.header);
        let decision = learner.as_learner().select(ctx);
        let sample = scenario.sample_reward(call.class, decision.action, env_rng)?;
        let outcome = learner
            .as_learner()
            .observe(ctx, decision.action, sample.scaled)?;
        metrics.record_step(call.class, decision.action, &oracle)?;
        if metrics.checkpoint_due() {
            metrics.take_checkpoint(&learner.structure());
        }
        if let Some(trace) = &mut trace {
            trace.row(
                step,
                decision.action,
                &decision.scores,
                decision.ball_level,
                outcome.spawned,
            );
        }
        if options.checkpoint_at == Some(step) {
            let snapshot = learner.snapshot().ok_or_else(|| {
                Error::config("run checkpoints require the cmabfas learner")
            })?;
            let ckpt = RunCheckpoint {
                format: RUN_CHECKPOINT_FORMAT.to_string(),
                step,
                steps_total: steps,
                seed,
                learner_snapshot_hex: hex_encode(&snapshot),
                env_rng_seed_hex: hex_encode(&env_rng.get_seed()),
                env_rng_stream: env_rng.get_stream(),
                env_rng_word_pos: env_rng.get_word_pos(),
                metrics: metrics.clone(),
            };
            run_checkpoint = Some(ckpt.to_bytes());
            snapshot_at = Some(snapshot);
        }
    }
    Ok(ReplicateResult {
        final_structure: learner.structure(),
        learner_snapshot: learner.snapshot(),
        metrics,
        run_checkpoint,
        snapshot_at,
        trace_csv: trace.map(|t| t.buf),
        wall_ms: started.elapsed().as_millis(),
    })
}

/// Runs all replicates of one configuration concurrently (seed = base + i).
#[allow(clippy::too_many_arguments)]
pub fn execute_runs(
    corpus: &Corpus,
    scenario: &Scenario,
    learner: &LearnerSpec,
    steps: u64,
    grid: &[u64],
    base_seed: u64,
    replicates: usize,
    options: ReplicateOptions,
) -> Result<Vec<ReplicateResult>> {
    let results: Vec<Result<ReplicateResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..replicates)
            .map(|i| {
                let seed = base_seed + i as u64;
                scope.spawn(move || {
                    run_replicate(corpus, scenario, learner, steps, grid, seed, options)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replicate thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: String,
    config: &'a serde_json::Value,
    config_sha256: String,
    replicate_seeds: Vec<u64>,
    artifacts: Vec<ArtifactEntry>,
    timings: Timings,
    format_versions: BTreeMap<&'static str, &'static str>,
}

#[derive(Serialize)]
struct Timings {
    total_ms: u128,
    replicate_ms: Vec<u128>,
}

struct OutputStage {
    tmp: PathBuf,
    final_dir: PathBuf,
    artifacts: Vec<ArtifactEntry>,
}

impl OutputStage {
    fn prepare(final_dir: &Path) -> Result<OutputStage> {
        if final_dir.exists() {
            return Err(Error::config(format!(
                "output directory {} already exists",
                final_dir.display()
            )));
        }
        let name = final_dir
            .file_name()
            .ok_or_else(|| Error::config("output directory needs a name"))?;
        let tmp = final_dir.with_file_name(format!("{}.partial", name.to_string_lossy()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(OutputStage {
            tmp,
            final_dir: final_dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.tmp.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(ArtifactEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex_encode(&Sha256::digest(bytes)),
        });
        Ok(())
    }

    /// Writes the manifest and atomically renames the staging directory
    /// into place.
    fn commit(
        mut self,
        config_json: serde_json::Value,
        seeds: Vec<u64>,
        timings: Timings,
    ) -> Result<PathBuf> {
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            config_sha256: hex_encode(&Sha256::digest(
                serde_json::to_vec(&config_json).expect("config serializes"),
            )),
            config: &config_json,
            replicate_seeds: seeds,
            artifacts: std::mem::take(&mut self.artifacts),
            timings,
            format_versions: BTreeMap::from([
                ("manifest", MANIFEST_FORMAT),
                ("corpus", crate::corpus::CORPUS_FORMAT),
                ("scenario", crate::env::SCENARIO_FORMAT),
                ("run-checkpoint", RUN_CHECKPOINT_FORMAT),
            ]),
        };
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let path = self.tmp.join("manifest.json");
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        std::fs::rename(&self.tmp, &self.final_dir)
            .map_err(|e| Error::io(&self.final_dir, e))?;
        Ok(self.final_dir)
    }
}

/// Result of a full experiment.
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub report: AggregateReport,
    pub runs: Vec<RunMetrics>,
}

/// Runs an experiment end to end and writes `replicate-XXX/metrics.csv`,
/// `aggregate.csv` and `manifest.json` into a fresh output directory. All
/// data artifacts are bit-identical across reruns of the same config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let started = Instant::now();
    config.validate()?;
    let scenario = Scenario::load(&config.scenario)?;
    let corpus = config.load_corpus()?;
    let grid = resolve_grid(config.steps, config.checkpoints.as_deref());
    let mut stage = OutputStage::prepare(&config.out_dir)?;

    let options = ReplicateOptions {
        trace: config.trace,
        checkpoint_at: config.checkpoint_at,
    };
    let results = execute_runs(
        &corpus,
        &scenario,
        &config.learner,
        config.steps,
        &grid,
        config.base_seed,
        config.replicates,
        options,
    )?;

    let mut replicate_ms = Vec::with_capacity(results.len());
    let mut runs = Vec::with_capacity(results.len());
    for (i, result) in results.iter().enumerate() {
        let dir = format!("replicate-{i:03}");
        let mut csv = Vec::new();
        result
            .metrics
            .write_csv(&mut csv, config.raw_units)
            .expect("in-memory write");
        stage.write(&format!("{dir}/metrics.csv"), &csv)?;
        if let Some(trace) = &result.trace_csv {
            stage.write(&format!("{dir}/trace.csv"), trace)?;
        }
        if let Some(ckpt) = &result.run_checkpoint {
            let at = config.checkpoint_at.expect("checkpoint bytes imply a step");
            stage.write(&format!("{dir}/checkpoint-step-{at}.json"), ckpt)?;
        }
        if let Some(snap) = &result.snapshot_at {
            let at = config.checkpoint_at.expect("snapshot implies a step");
            stage.write(&format!("{dir}/learner-step-{at}.snap"), snap)?;
        }
        replicate_ms.push(result.wall_ms);
        runs.push(result.metrics.clone());
    }

    let report = aggregate(&runs, config.raw_units)?;
    let mut agg_csv = Vec::new();
    report.write_csv(&mut agg_csv).expect("in-memory write");
    stage.write("aggregate.csv", &agg_csv)?;

    let seeds = (0..config.replicates)
        .map(|i| config.base_seed + i as u64)
        .collect();
    let config_json = serde_json::to_value(config).expect("config serializes");
    let out_dir = stage.commit(
        config_json,
        seeds,
        Timings {
            total_ms: started.elapsed().as_millis(),
            replicate_ms,
        },
    )?;
    Ok(ExperimentOutcome {
        out_dir,
        report,
        runs,
    })
}

/// Finishes a single interrupted replicate from a [`RunCheckpoint`] and
/// writes the usual artifact layout (the finished replicate is
/// `replicate-000`). The config supplies scenario, corpus and output
/// directory; learner state, generator position, run length and metrics all
/// come from the checkpoint.
pub fn resume_experiment(
    config: &ExperimentConfig,
    checkpoint: &RunCheckpoint,
) -> Result<ExperimentOutcome> {
    let started = Instant::now();
    config.validate()?;
    if config.replicates != 1 {
        return Err(Error::config("resume finishes exactly one replicate"));
    }
    let scenario = Scenario::load(&config.scenario)?;
    let corpus = config.load_corpus()?;
    let mut stage = OutputStage::prepare(&config.out_dir)?;
    let options = ReplicateOptions {
        trace: config.trace,
        checkpoint_at: None,
    };
    let result = resume_replicate(checkpoint, &corpus, &scenario, options)?;
    let mut csv = Vec::new();
    result
        .metrics
        .write_csv(&mut csv, config.raw_units)
        .expect("in-memory write");
    stage.write("replicate-000/metrics.csv", &csv)?;
    if let Some(trace) = &result.trace_csv {
        stage.write("replicate-000/trace.csv", trace)?;
    }
    let runs = vec![result.metrics];
    let report = aggregate(&runs, config.raw_units)?;
    let mut agg_csv = Vec::new();
    report.write_csv(&mut agg_csv).expect("in-memory write");
    stage.write("aggregate.csv", &agg_csv)?;
    let config_json = serde_json::to_value(config).expect("config serializes");
    let out_dir = stage.commit(
        config_json,
        vec![checkpoint.seed],
        Timings {
            total_ms: started.elapsed().as_millis(),
            replicate_ms: vec![result.wall_ms],
        },
    )?;
    Ok(ExperimentOutcome {
        out_dir,
        report,
        runs,
    })
}

/// Sweep definition: one shared setup, many learner parameterizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_sweep_format")]
    pub format: String,
    pub scenario: PathBuf,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub corpus_spec: Option<PathBuf>,
    pub steps: u64,
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub checkpoints: Option<Vec<u64>>,
    /// Grid points shown as table columns; defaults to `10^4`, `10^5` and
    /// the final step (clamped to the run).
    #[serde(default)]
    pub report_at: Option<Vec<u64>>,
    pub out_dir: PathBuf,
    pub entries: Vec<SweepEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    #[serde(flatten)]
    pub learner: LearnerSpec,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<SweepConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: SweepConfig =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if config.format != SWEEP_FORMAT {
            return Err(Error::parse(
                path,
                format!("unsupported sweep format '{}'", config.format),
            ));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        anchor(&mut config.scenario);
        if let Some(p) = &mut config.corpus {
            anchor(p);
        }
        if let Some(p) = &mut config.corpus_spec {
            anchor(p);
        }
        anchor(&mut config.out_dir);
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::config("sweep needs at least one entry"));
        }
        for entry in &self.entries {
            if entry.label.is_empty() || entry.label.contains([',', '\n']) {
                return Err(Error::config(format!(
                    "sweep label '{}' must be non-empty without commas",
                    entry.label
                )));
            }
        }
        let mut labels: Vec<&str> = self.entries.iter().map(|e| e.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.entries.len() {
            return Err(Error::config("sweep labels must be unique"));
        }
        if matches!(&self.report_at, Some(points) if points.is_empty()) {
            return Err(Error::config("report_at must not be empty"));
        }
        if matches!(&self.checkpoints, Some(points) if points.is_empty()) {
            return Err(Error::config("checkpoint list must not be empty"));
        }
        if self.steps < 1 {
            return Err(Error::config("steps must be at least 1"));
        }
        if self.replicates < 1 {
            return Err(Error::config("replicates must be at least 1"));
        }
        match (&self.corpus, &self.corpus_spec) {
            (Some(_), Some(_)) => {
                Err(Error::config("give either corpus or corpus_spec, not both"))
            }
            (None, None) => Err(Error::config("one of corpus or corpus_spec is required")),
            _ => Ok(()),
        }
    }

    fn report_points(&self) -> Vec<u64> {
        let mut points: Vec<u64> = match &self.report_at {
            Some(points) => points
                .iter()
                .copied()
                .filter(|&t| t >= 1 && t <= self.steps)
                .collect(),
            None => [10_000, 100_000, self.steps]
                .into_iter()
                .filter(|&t| t <= self.steps)
                .collect(),
        };
        points.push(self.steps);
        points.sort_unstable();
        points.dedup();
        points
    }
}

/// One sweep table row: the mean metrics of a configuration at every
/// reporting point.
pub struct SweepRow {
    pub label: String,
    pub learner: String,
    pub params: String,
    /// `(t, regret/t, nmistakes1, nmistakes2)` per reporting point.
    pub cells: Vec<(u64, f64, f64, f64)>,
}

pub struct SweepOutcome {
    pub out_dir: PathBuf,
    pub report_at: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

/// Runs every sweep entry and writes per-entry outputs plus the comparison
/// table `sweep.csv`.
pub fn sweep(config: &SweepConfig) -> Result<SweepOutcome> {
    let started = Instant::now();
    config.validate()?;
    let scenario = Scenario::load(&config.scenario)?;
    let corpus = match (&config.corpus, &config.corpus_spec) {
        (Some(path), None) => Corpus::load(path)?,
        (None, Some(path)) => Corpus::generate(&CorpusSpec::load(path)?)?,
        _ => unreachable!("validated"),
    };
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let report_at = config.report_points();
    let mut grid = resolve_grid(config.steps, config.checkpoints.as_deref());
    grid.extend_from_slice(&report_at);
    grid.sort_unstable();
    grid.dedup();

    let mut stage = OutputStage::prepare(&config.out_dir)?;
    let mut rows = Vec::new();
    let mut replicate_ms = Vec::new();
    for entry in &config.entries {
        let results = execute_runs(
            &corpus,
            &scenario,
            &entry.learner,
            config.steps,
            &grid,
            config.base_seed,
            config.replicates,
            ReplicateOptions::default(),
        )?;
        let runs: Vec<RunMetrics> = results.iter().map(|r| r.metrics.clone()).collect();
        replicate_ms.extend(results.iter().map(|r| r.wall_ms));
        for (i, run) in runs.iter().enumerate() {
            let mut csv = Vec::new();
            run.write_csv(&mut csv, false).expect("in-memory write");
            stage.write(&format!("{}/replicate-{i:03}/metrics.csv", entry.label), &csv)?;
        }
        let report = aggregate(&runs, false)?;
        let mut agg_csv = Vec::new();
        report.write_csv(&mut agg_csv).expect("in-memory write");
        stage.write(&format!("{}/aggregate.csv", entry.label), &agg_csv)?;
        let cells = report_at
            .iter()
            .map(|&t| {
                let row = report.row_at(t).expect("report grid includes table points");
                (
                    t,
                    row.regret_per_t.mean,
                    row.nmistakes1.mean,
                    row.nmistakes2.mean,
                )
            })
            .collect();
        rows.push(SweepRow {
            label: entry.label.clone(),
            learner: entry.learner.kind().to_string(),
            params: entry.learner.params_string(),
            cells,
        });
    }

    let mut table = Vec::new();
    write!(table, "label,learner,params").expect("in-memory write");
    for t in &report_at {
        write!(
            table,
            ",regret_per_t@{t},nmistakes1@{t},nmistakes2@{t}"
        )
        .expect("in-memory write");
    }
    writeln!(table).expect("in-memory write");
    for row in &rows {
        write!(table, "{},{},{}", row.label, row.learner, row.params)
            .expect("in-memory write");
        for (_, regret, nm1, nm2) in &row.cells {
            write!(
                table,
                ",{},{},{}",
                format_float(*regret),
                format_float(*nm1),
                format_float(*nm2)
            )
            .expect("in-memory write");
        }
        writeln!(table).expect("in-memory write");
    }
    stage.write("sweep.csv", &table)?;

    let seeds = (0..config.replicates)
        .map(|i| config.base_seed + i as u64)
        .collect();
    let config_json = serde_json::to_value(config).expect("config serializes");
    let out_dir = stage.commit(
        config_json,
        seeds,
        Timings {
            total_ms: started.elapsed().as_millis(),
            replicate_ms,
        },
    )?;
    Ok(SweepOutcome {
        out_dir,
        report_at,
        rows,
    })
}
