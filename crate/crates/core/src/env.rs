//! Simulated call environment: actions, class-conditional security-test
//! success probabilities, duration-based rewards, cost accounting, reward
//! scaling, and the closed-form expected-reward oracle used for regret.
//!
//! Action 0 always forwards the call unchallenged; actions `1..k` apply a
//! security test. A call that passes its test is forwarded and the reward is
//! the observed call duration minus the test cost; a call that fails is
//! flagged and earns a flat reward. Durations are exponential (mean 30 s for
//! every SPIT-type class, 120 s for normal calls) truncated at
//! `duration_cap` so that raw rewards stay bounded; the affine `scale` map
//! sends them into `[0, 1]` for the learners. The cap can be set to
//! `f64::INFINITY` to evaluate the untruncated closed-form table.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::context::CallClass;
use crate::error::{Error, Result};

/// Index of the pass-through action.
pub const FORWARD_ACTION: usize = 0;

/// First line... format marker stored inside scenario files.
pub const SCENARIO_FORMAT: &str = "spitband-scenario-v1";

/// Retry budget for scenario generation when a tie in per-class optima
/// forces a redraw.
const GENERATION_RETRIES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Forward,
    SecurityTest,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub kind: ActionKind,
    pub cost: f64,
}

/// Reward-model parameters shared by the sampler and the oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardModelConfig {
    /// Mean call duration in seconds for every SPIT-type class.
    pub mean_spit: f64,
    /// Mean call duration in seconds for normal calls.
    pub mean_normal: f64,
    /// Flat reward for flagging a call that failed its test.
    pub flag_reward: f64,
    /// Default cost of a security test.
    pub test_cost: f64,
    /// Durations are clipped at this many seconds; `inf` disables clipping
    /// (then `scale` is unusable and only the closed-form oracle applies).
    pub duration_cap: f64,
    /// When true, the test cost is also charged on a failed test. The
    /// default charges it only on passes, which is what the published
    /// expected-reward table works out to.
    pub fail_cost_applied: bool,
    /// Affine scaling bounds for raw rewards.
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for RewardModelConfig {
    fn default() -> Self {
        RewardModelConfig {
            mean_spit: 30.0,
            mean_normal: 120.0,
            flag_reward: 100.0,
            test_cost: 100.0,
            duration_cap: 900.0,
            fail_cost_applied: false,
            scale_min: -100.0,
            scale_max: 900.0,
        }
    }
}

impl RewardModelConfig {
    pub fn validate(&self) -> Result<()> {
        for mean in [self.mean_spit, self.mean_normal] {
            if !mean.is_finite() || mean <= 0.0 {
                return Err(Error::config("duration means must be positive and finite"));
            }
        }
        if self.duration_cap.is_nan() || self.duration_cap <= self.mean_normal {
            return Err(Error::config(
                "duration_cap must exceed the normal-class mean",
            ));
        }
        if self.scale_min.is_nan()
            || self.scale_max.is_nan()
            || self.scale_min >= self.scale_max
        {
            return Err(Error::config("scale_min must be below scale_max"));
        }
        if self.test_cost < 0.0 {
            return Err(Error::config("test_cost must be non-negative"));
        }
        Ok(())
    }

    pub fn mean_duration(&self, class: CallClass) -> f64 {
        if class.is_spit() {
            self.mean_spit
        } else {
            self.mean_normal
        }
    }

    /// Mean of the clipped duration `min(Exp(mean), cap)`:
    /// `mean * (1 - exp(-cap / mean))`. Equals the plain mean for an
    /// infinite cap.
    pub fn truncated_mean_duration(&self, class: CallClass) -> f64 {
        let mean = self.mean_duration(class);
        mean * (1.0 - (-self.duration_cap / mean).exp())
    }

    /// One clipped duration sample.
    pub fn sample_duration(&self, class: CallClass, rng: &mut impl Rng) -> f64 {
        let mean = self.mean_duration(class);
        let exp = Exp::new(1.0 / mean).expect("validated mean");
        exp.sample(rng).min(self.duration_cap)
    }

    /// Affine map from raw reward units onto `[0, 1]`. Strictly increasing,
    /// so argmax over actions is preserved.
    pub fn scale(&self, raw: f64) -> Result<f64> {
        if !(raw >= self.scale_min && raw <= self.scale_max) {
            return Err(Error::RawRewardOutOfBounds {
                raw,
                min: self.scale_min,
                max: self.scale_max,
            });
        }
        Ok((raw - self.scale_min) / (self.scale_max - self.scale_min))
    }

    pub fn unscale(&self, scaled: f64) -> f64 {
        self.scale_min + scaled * (self.scale_max - self.scale_min)
    }

    pub fn scale_width(&self) -> f64 {
        self.scale_max - self.scale_min
    }
}

/// Outcome of sampling one reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardSample {
    pub raw: f64,
    pub scaled: f64,
    /// `None` for the forward action.
    pub passed_test: Option<bool>,
    /// Observed duration; `None` when the call was flagged.
    pub duration: Option<f64>,
}

/// A full scenario: action set, per-class success probabilities for the
/// test actions, and the reward model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub k: usize,
    pub actions: Vec<ActionSpec>,
    /// Per class, one success probability per test action (`actions[1..]`).
    pub success_probs: BTreeMap<CallClass, Vec<f64>>,
    pub reward: RewardModelConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    format: String,
    #[serde(flatten)]
    scenario: Scenario,
}

impl Scenario {
    /// The hand-set three-action table: forward plus two security tests with
    /// class-conditional pass probabilities
    /// normal .9/.8, honeypot .5/.3, voipbot .3/.5, warvox .1/.3,
    /// spitter .3/.3. Setting `spitter_a3` (commonly to 0.1) overrides the
    /// spitter probability for the second test, which gives the spitter
    /// class a unique optimal action instead of a two-way tie.
    pub fn three_action_default(spitter_a3: Option<f64>) -> Scenario {
        let mut probs = BTreeMap::new();
        probs.insert(CallClass::Normal, vec![0.9, 0.8]);
        probs.insert(CallClass::Honeypot, vec![0.5, 0.3]);
        probs.insert(CallClass::Voipbot, vec![0.3, 0.5]);
        probs.insert(CallClass::Warvox, vec![0.1, 0.3]);
        probs.insert(CallClass::Spitter, vec![0.3, spitter_a3.unwrap_or(0.3)]);
        let reward = RewardModelConfig::default();
        Scenario {
            k: 3,
            actions: Self::default_actions(3, &reward),
            success_probs: probs,
            reward,
        }
    }

    fn default_actions(k: usize, reward: &RewardModelConfig) -> Vec<ActionSpec> {
        let mut actions = vec![ActionSpec {
            kind: ActionKind::Forward,
            cost: 0.0,
        }];
        actions.extend((1..k).map(|_| ActionSpec {
            kind: ActionKind::SecurityTest,
            cost: reward.test_cost,
        }));
        actions
    }

    /// Seeded scenario generator for larger action sets. Every SPIT class
    /// gets one designated best test (success probability 0.1); its other
    /// tests draw from `[0.3, 0.5]` and normal-class pass probabilities from
    /// `[0.8, 0.95]`. Regenerates (bounded) until every class has a unique
    /// optimal action. `k == 3` returns the hand-set default table verbatim,
    /// spitter tie included.
    pub fn generate(k: usize, seed: u64) -> Result<Scenario> {
        if k < 2 {
            return Err(Error::config("scenario needs at least 2 actions"));
        }
        if k == 3 {
            return Ok(Scenario::three_action_default(None));
        }
        let reward = RewardModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tests = k - 1;
        for _ in 0..GENERATION_RETRIES {
            let mut probs = BTreeMap::new();
            for class in CallClass::ALL {
                let row: Vec<f64> = if class.is_spit() {
                    let best = rng.random_range(0..tests);
                    (0..tests)
                        .map(|j| {
                            if j == best {
                                0.1
                            } else {
                                rng.random_range(0.3..=0.5)
                            }
                        })
                        .collect()
                } else {
                    (0..tests).map(|_| rng.random_range(0.8..=0.95)).collect()
                };
                probs.insert(class, row);
            }
            let candidate = Scenario {
                k,
                actions: Self::default_actions(k, &reward),
                success_probs: probs,
                reward,
            };
            if candidate.has_unique_optima() {
                return Ok(candidate);
            }
        }
        Err(Error::ScenarioGeneration(GENERATION_RETRIES))
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if self.k < 2 {
            return Err(Error::config("scenario needs at least 2 actions"));
        }
        if self.actions.len() != self.k {
            return Err(Error::config(format!(
                "k = {} but {} actions listed",
                self.k,
                self.actions.len()
            )));
        }
        if self.actions[FORWARD_ACTION].kind != ActionKind::Forward {
            return Err(Error::config("action 1 must be the forward action"));
        }
        if self.actions[1..]
            .iter()
            .any(|a| a.kind != ActionKind::SecurityTest)
        {
            return Err(Error::config("actions beyond the first must be tests"));
        }
        if self.actions.iter().any(|a| a.cost < 0.0 || !a.cost.is_finite()) {
            return Err(Error::config("action costs must be finite and >= 0"));
        }
        for class in CallClass::ALL {
            let row = self
                .success_probs
                .get(&class)
                .ok_or_else(|| Error::config(format!("missing success probs for {class}")))?;
            if row.len() != self.k - 1 {
                return Err(Error::config(format!(
                    "{class}: expected {} success probs, found {}",
                    self.k - 1,
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::config(format!("{class}: success prob out of [0,1]")));
            }
        }
        Ok(())
    }

    pub fn success_prob(&self, class: CallClass, action: usize) -> Result<f64> {
        self.check_action(action)?;
        if action == FORWARD_ACTION {
            return Err(Error::config("forward action has no success probability"));
        }
        Ok(self.success_probs[&class][action - 1])
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.k {
            return Err(Error::UnknownAction {
                action,
                k: self.k,
            });
        }
        Ok(())
    }

    /// Closed-form expected raw reward of playing `action` on `class`:
    /// forward gives the (truncated) mean duration; a test gives
    /// `p * (mean_duration - cost) + (1 - p) * flag_reward`, with the cost
    /// also charged on failure when `fail_cost_applied` is set.
    pub fn expected_reward(&self, class: CallClass, action: usize) -> Result<f64> {
        self.check_action(action)?;
        let mu = self.reward.truncated_mean_duration(class);
        if action == FORWARD_ACTION {
            return Ok(mu);
        }
        let p = self.success_probs[&class][action - 1];
        let cost = self.actions[action].cost;
        let fail = if self.reward.fail_cost_applied {
            self.reward.flag_reward - cost
        } else {
            self.reward.flag_reward
        };
        Ok(p * (mu - cost) + (1.0 - p) * fail)
    }

    /// Best expected raw reward over all actions for this class.
    pub fn optimal_value(&self, class: CallClass) -> f64 {
        (0..self.k)
            .map(|a| self.expected_reward(class, a).expect("action in range"))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Expected-reward gap to the best action; zero iff `action` is optimal.
    pub fn regret_of(&self, class: CallClass, action: usize) -> Result<f64> {
        Ok(self.optimal_value(class) - self.expected_reward(class, action)?)
    }

    /// True when every class has a single action attaining the optimum.
    pub fn has_unique_optima(&self) -> bool {
        CallClass::ALL.into_iter().all(|class| {
            let best = self.optimal_value(class);
            let hits = (0..self.k)
                .filter(|&a| {
                    let v = self.expected_reward(class, a).expect("in range");
                    (best - v).abs() <= 1e-9
                })
                .count();
            hits == 1
        })
    }

    /// Samples one reward. The forward action draws a duration; a test first
    /// draws the Bernoulli pass/fail, then a duration only on a pass.
    pub fn sample_reward(
        &self,
        class: CallClass,
        action: usize,
        rng: &mut impl Rng,
    ) -> Result<RewardSample> {
        self.check_action(action)?;
        let (raw, passed, duration) = if action == FORWARD_ACTION {
            let d = self.reward.sample_duration(class, rng);
            (d, None, Some(d))
        } else {
            let p = self.success_probs[&class][action - 1];
            let cost = self.actions[action].cost;
            if rng.random_bool(p) {
                let d = self.reward.sample_duration(class, rng);
                (d - cost, Some(true), Some(d))
            } else {
                let fail = if self.reward.fail_cost_applied {
                    self.reward.flag_reward - cost
                } else {
                    self.reward.flag_reward
                };
                (fail, Some(false), None)
            }
        };
        Ok(RewardSample {
            raw,
            scaled: self.reward.scale(raw)?,
            passed_test: passed,
            duration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ScenarioFile {
            format: SCENARIO_FORMAT.to_string(),
            scenario: self.clone(),
        };
        let text = toml::to_string_pretty(&file)
            .map_err(|e| Error::config(format!("cannot serialize scenario: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ScenarioFile =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if file.format != SCENARIO_FORMAT {
            return Err(Error::parse(
                path,
                format!("unsupported scenario format '{}'", file.format),
            ));
        }
        file.scenario.validate()?;
        Ok(file.scenario)
    }
}
