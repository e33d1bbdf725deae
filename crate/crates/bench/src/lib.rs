//! Shared setup for the simulation benchmarks: default corpus, scenario
//! and pre-warmed learner states so the measured loop reflects steady-state
//! cover sizes rather than cold starts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spitband_core::{
    BaselineConfig, Cmabfas, Corpus, CorpusSpec, Learner, LearnerConfig, NaiveBaseline, Scenario,
};

pub struct SimSetup {
    pub corpus: Corpus,
    pub scenario: Scenario,
}

impl SimSetup {
    pub fn new(k: usize) -> SimSetup {
        let scenario = if k == 3 {
            Scenario::three_action_default(Some(0.1))
        } else {
            Scenario::generate(k, 7).expect("scenario generates")
        };
        SimSetup {
            corpus: Corpus::generate(&CorpusSpec::default()).expect("corpus generates"),
            scenario,
        }
    }

    pub fn env_rng(&self, seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn cmabfas(&self, horizon: u64) -> Cmabfas {
        Cmabfas::new(LearnerConfig {
            k: self.scenario.k,
            c: 1.0,
            horizon,
            lambda: 1.0,
            seed: 1,
        })
        .expect("valid config")
    }

    pub fn baseline(&self) -> NaiveBaseline {
        NaiveBaseline::new(BaselineConfig::new(6, 500, self.scenario.k, 1))
            .expect("valid config")
    }

    /// Drives `steps` rounds of the simulation loop.
    pub fn run_steps(&self, learner: &mut impl Learner, rng: &mut ChaCha8Rng, steps: u64) {
        for _ in 0..steps {
            let call = *self.corpus.draw(rng).expect("non-empty corpus");
            let ctx = self.corpus.context(call.header);
            let decision = learner.select(ctx);
            let reward = self
                .scenario
                .sample_reward(call.class, decision.action, rng)
                .expect("valid action");
            learner
                .observe(ctx, decision.action, reward.scaled)
                .expect("valid observe");
        }
    }
}
