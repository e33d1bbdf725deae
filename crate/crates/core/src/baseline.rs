//! Naive comparison learner: incremental, non-adaptive clustering of the
//! header space with an independent UCB1(1.2) bandit per cluster.
//!
//! Each incoming header joins the nearest cluster by attribute-count
//! distance (number of differing slots). When the nearest cluster is more
//! than `max_radius` away and the cluster budget is not exhausted, the
//! header founds a new cluster instead. Clusters never move, merge or
//! split. Within the assigned cluster a standard UCB1 rule picks the
//! action: untried actions first, then
//! `argmax avg(i,a) + sqrt(1.2 * ln n(i) / n(i,a))`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{Context, HeaderId, HeaderKey, ATTRIBUTE_COUNT};
use crate::error::{Error, Result};
use crate::{Decision, Learner, ObserveOutcome, StructureStats};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineConfig {
    /// Attribute-count distance threshold for founding a new cluster.
    pub max_radius: u32,
    pub max_clusters: usize,
    /// Number of actions.
    pub k: usize,
    /// UCB1 exploration constant.
    pub exploration: f64,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(max_radius: u32, max_clusters: usize, k: usize, seed: u64) -> BaselineConfig {
        BaselineConfig {
            max_radius,
            max_clusters,
            k,
            exploration: 1.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_radius as usize > ATTRIBUTE_COUNT {
            return Err(Error::config(format!(
                "max_radius {} exceeds {ATTRIBUTE_COUNT}",
                self.max_radius
            )));
        }
        if self.max_clusters < 1 {
            return Err(Error::config("max_clusters must be at least 1"));
        }
        if self.k < 1 {
            return Err(Error::config("k must be at least 1"));
        }
        if !self.exploration.is_finite() || self.exploration <= 0.0 {
            return Err(Error::config("exploration must be positive and finite"));
        }
        Ok(())
    }
}

/// One cluster: the founding header plus per-action reward statistics.
#[derive(Clone, Debug)]
pub struct Cluster {
    representative: Context,
    reward_sums: Vec<f64>,
    counts: Vec<u64>,
    total: u64,
}

impl Cluster {
    fn new(representative: Context, k: usize) -> Cluster {
        Cluster {
            representative,
            reward_sums: vec![0.0; k],
            counts: vec![0; k],
            total: 0,
        }
    }

    pub fn representative(&self) -> &Context {
        &self.representative
    }

    pub fn count(&self, action: usize) -> u64 {
        self.counts[action]
    }

    pub fn reward_sum(&self, action: usize) -> f64 {
        self.reward_sums[action]
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Number of differing attributes between a header and a cluster
/// representative (integer scale, so `max_radius = 6` is meaningful).
pub fn cluster_distance(x: &HeaderKey, representative: &HeaderKey) -> u32 {
    ATTRIBUTE_COUNT as u32 - x.agreement(representative)
}

/// UCB1 index values for every action of a cluster; infinite for untried
/// actions.
pub fn ucb1_scores(cluster: &Cluster, config: &BaselineConfig) -> Vec<f64> {
    let ln_total = (cluster.total.max(1) as f64).ln();
    (0..config.k)
        .map(|a| {
            let n = cluster.counts[a];
            if n == 0 {
                f64::INFINITY
            } else {
                cluster.reward_sums[a] / n as f64
                    + (config.exploration * ln_total / n as f64).sqrt()
            }
        })
        .collect()
}

/// UCB1 action choice: the lowest-indexed untried action while any exists,
/// otherwise the argmax of the index values with exact ties broken uniformly
/// from `rng`.
pub fn ucb1_select(cluster: &Cluster, config: &BaselineConfig, rng: &mut impl Rng) -> usize {
    if let Some(a) = cluster.counts.iter().position(|&n| n == 0) {
        return a;
    }
    let scores = ucb1_scores(cluster, config);
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..config.k).filter(|&a| scores[a] == best).collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

#[derive(Clone, Copy, Debug)]
struct CachedNearest {
    cluster: u32,
    dist: u32,
    /// Number of clusters that existed when this entry was computed.
    seen: u32,
}

#[derive(Clone, Debug)]
struct Pending {
    x: HeaderId,
    cluster: usize,
    action: usize,
}

/// The baseline learner state.
#[derive(Clone, Debug)]
pub struct NaiveBaseline {
    config: BaselineConfig,
    clusters: Vec<Cluster>,
    rng: ChaCha8Rng,
    pending: Option<Pending>,
    /// Nearest-cluster memo per header. Clusters are append-only, so an
    /// entry only needs rescanning against clusters added after `seen`.
    nearest: HashMap<HeaderId, CachedNearest>,
}

impl NaiveBaseline {
    pub fn new(config: BaselineConfig) -> Result<NaiveBaseline> {
        config.validate()?;
        Ok(NaiveBaseline {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            clusters: Vec::new(),
            pending: None,
            nearest: HashMap::new(),
            config,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    fn nearest_cluster(&mut self, x: &Context) -> (usize, u32) {
        let cached = self.nearest.get(&x.id).copied();
        let (mut best_idx, mut best_dist, start) = match cached {
            Some(c) if (c.seen as usize) <= self.clusters.len() => {
                (c.cluster as usize, c.dist, c.seen as usize)
            }
            _ => (0, cluster_distance(&x.key, &self.clusters[0].representative.key), 1),
        };
        for (i, cluster) in self.clusters.iter().enumerate().skip(start) {
            let d = cluster_distance(&x.key, &cluster.representative.key);
            if d < best_dist {
                best_dist = d;
                best_idx = i;
            }
        }
        self.nearest.insert(
            x.id,
            CachedNearest {
                cluster: best_idx as u32,
                dist: best_dist,
                seen: self.clusters.len() as u32,
            },
        );
        (best_idx, best_dist)
    }

    /// Returns the cluster for `x`, founding a new one when the nearest is
    /// farther than `max_radius` and the budget allows. The first call
    /// always founds cluster 0. Nearest ties go to the lowest index.
    pub fn assign_or_create(&mut self, x: &Context) -> usize {
        if self.clusters.is_empty() {
            self.found_cluster(*x);
            return 0;
        }
        let (nearest, dist) = self.nearest_cluster(x);
        if dist > self.config.max_radius && self.clusters.len() < self.config.max_clusters {
            let idx = self.clusters.len();
            self.found_cluster(*x);
            idx
        } else {
            nearest
        }
    }

    fn found_cluster(&mut self, x: Context) {
        debug_assert!(self.clusters.len() < self.config.max_clusters);
        self.clusters.push(Cluster::new(x, self.config.k));
        self.nearest.insert(
            x.id,
            CachedNearest {
                cluster: (self.clusters.len() - 1) as u32,
                dist: 0,
                seen: self.clusters.len() as u32,
            },
        );
    }

    /// Credits the reward to the `(cluster, action)` counters; nothing else
    /// changes.
    pub fn record(&mut self, cluster: usize, action: usize, reward: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::RewardOutOfRange(reward));
        }
        let cluster = self
            .clusters
            .get_mut(cluster)
            .ok_or_else(|| Error::config(format!("unknown cluster {cluster}")))?;
        cluster.reward_sums[action] += reward;
        cluster.counts[action] += 1;
        cluster.total += 1;
        Ok(())
    }
}

impl Learner for NaiveBaseline {
    fn select(&mut self, x: Context) -> Decision {
        let cluster_idx = self.assign_or_create(&x);
        let action = ucb1_select(&self.clusters[cluster_idx], &self.config, &mut self.rng);
        let scores = ucb1_scores(&self.clusters[cluster_idx], &self.config);
        self.pending = Some(Pending {
            x: x.id,
            cluster: cluster_idx,
            action,
        });
        Decision {
            action,
            scores,
            ball_level: None,
        }
    }

    fn observe(&mut self, x: Context, action: usize, reward: f64) -> Result<ObserveOutcome> {
        let cluster = match &self.pending {
            None => return Err(Error::NoPendingDecision),
            Some(p) => {
                if p.x != x.id || p.action != action {
                    return Err(Error::DecisionMismatch(format!(
                        "pending (header {}, action {}) vs observed (header {}, action {})",
                        p.x.0, p.action, x.id.0, action
                    )));
                }
                p.cluster
            }
        };
        self.record(cluster, action, reward)?;
        self.pending = None;
        Ok(ObserveOutcome::default())
    }

    fn structure(&self) -> StructureStats {
        StructureStats {
            regions: self.clusters.len() as u64,
            min_radius: None,
        }
    }

    fn action_count(&self) -> usize {
        self.config.k
    }
}
