//! Self-learning SPIT filter simulation: a contextual multi-armed bandit
//! over a metric space of SIP headers, a naive clustering+UCB1 baseline,
//! a synthetic call environment with class-conditional security-test
//! rewards, and a seeded experiment runner that tracks cumulative regret
//! and mistake counts.
//!
//! The pieces fit together like this:
//!
//! - [`context`] defines the header space, the `2^-agreement` distance and
//!   the interner that makes distance computations cheap.
//! - [`corpus`] generates and (de)serializes labeled synthetic corpora.
//! - [`env`] holds scenario tables (success probabilities, costs, duration
//!   means) plus reward sampling and the exact expected-reward oracle.
//! - [`cmabfas`] is the adaptive ball-cover learner.
//! - [`baseline`] is the non-adaptive clustering + UCB1 comparison learner.
//! - [`metrics`] accounts regret and mistakes at checkpoints and aggregates
//!   replicates.
//! - [`runner`] wires everything into seeded, reproducible experiments.

pub mod baseline;
pub mod cmabfas;
pub mod context;
pub mod corpus;
pub mod env;
mod error;
pub mod metrics;
pub mod runner;

pub use baseline::{cluster_distance, ucb1_select, BaselineConfig, Cluster, NaiveBaseline};
pub use cmabfas::{
    avg, conf, is_full, size, Ball, Cmabfas, CoverStats, LearnerConfig, Score,
};
pub use context::{
    distance, hamming_agreement, CallClass, Context, HeaderId, HeaderKey, HeaderSpace, SipHeader,
    ATTRIBUTE_COUNT,
};
pub use corpus::{Corpus, CorpusSpec, LabeledCall};
pub use env::{
    ActionKind, ActionSpec, RewardModelConfig, RewardSample, Scenario, FORWARD_ACTION,
};
pub use error::{Error, Result};
pub use metrics::{
    aggregate, AggregateReport, Checkpoint, RegretOracle, RunMetrics, StepOutcome,
};
pub use runner::{
    run_experiment, run_replicate, sweep, ExperimentConfig, LearnerSpec, SweepConfig,
};

/// What a learner reports each round: the chosen action, the per-action
/// optimistic scores (`f64::INFINITY` for untried regions) and, for the
/// ball-cover learner, the level of the ball that produced the chosen score.
#[derive(Clone, Debug)]
pub struct Decision {
    pub action: usize,
    pub scores: Vec<f64>,
    pub ball_level: Option<u8>,
}

/// Result of feeding a reward back: whether the update spawned a new cover
/// element.
#[derive(Clone, Copy, Debug, Default)]
pub struct ObserveOutcome {
    pub spawned: bool,
}

/// Size of a learner's internal partition, for instrumentation. `min_radius`
/// is `None` for learners without a radius hierarchy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureStats {
    pub regions: u64,
    pub min_radius: Option<f64>,
}

/// Common learner-facing interface: select an action for a context, then
/// feed back the observed scaled reward for exactly that (context, action)
/// pair. The harness treats all learners uniformly through this trait.
pub trait Learner {
    fn select(&mut self, x: Context) -> Decision;

    fn observe(&mut self, x: Context, action: usize, reward: f64) -> Result<ObserveOutcome>;

    fn structure(&self) -> StructureStats;

    fn action_count(&self) -> usize;
}
