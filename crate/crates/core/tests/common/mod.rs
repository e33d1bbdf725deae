//! Shared support for the integration suites: a brute-force reference
//! implementation of the ball-cover learner that stores the complete
//! history and recomputes every per-ball statistic from scratch each step,
//! plus small corpus builders.
//!
//! The reference shares no state-update code with the production learner:
//! it compares attribute strings directly, recounts samples by scanning the
//! raw history, and re-derives active/relevant sets and scores every round.
//! Only the decision rules themselves are (deliberately) the same.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spitband_core::{hamming_agreement, SipHeader};

pub struct RefConfig {
    pub k: usize,
    pub c: f64,
    pub horizon: u64,
    pub lambda: f64,
    pub seed: u64,
}

struct RefBall {
    center: Option<usize>,
    level: u8,
    /// Per-action history length when this ball was created; the ball
    /// counts only samples from that index on.
    created_at: usize,
}

impl RefBall {
    fn radius(&self) -> f64 {
        (2.0f64).powi(-(self.level as i32))
    }
}

/// History-replaying reference learner over a small fixed set of headers.
pub struct RefCmabfas {
    config: RefConfig,
    /// Pairwise agreement between the known headers, recomputed here from
    /// the raw strings.
    agreement: Vec<Vec<u32>>,
    covers: Vec<Vec<RefBall>>,
    /// Per action: the (header index, reward) samples in arrival order.
    history: Vec<Vec<(usize, f64)>>,
    rng: ChaCha8Rng,
}

impl RefCmabfas {
    pub fn new(headers: &[SipHeader], config: RefConfig) -> RefCmabfas {
        let n = headers.len();
        let agreement = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| hamming_agreement(&headers[i], &headers[j]))
                    .collect()
            })
            .collect();
        RefCmabfas {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            covers: (0..config.k)
                .map(|_| {
                    vec![RefBall {
                        center: None,
                        level: 0,
                        created_at: 0,
                    }]
                })
                .collect(),
            history: vec![Vec::new(); config.k],
            agreement,
            config,
        }
    }

    fn contains(&self, ball: &RefBall, x: usize) -> bool {
        if ball.level == 0 {
            return true;
        }
        match ball.center {
            Some(c) => self.agreement[x][c] >= ball.level as u32,
            None => false,
        }
    }

    fn stats(&self, action: usize, ball: &RefBall) -> (u64, f64) {
        let mut n = 0u64;
        let mut rho = 0.0;
        for &(header, reward) in &self.history[action][ball.created_at..] {
            if self.contains(ball, header) {
                n += 1;
                rho += reward;
            }
        }
        (n, rho)
    }

    fn score_of(&self, action: usize, n: u64, rho: f64, ball: &RefBall) -> f64 {
        let _ = action;
        let avg = if n == 0 { 0.0 } else { rho / n as f64 };
        let conf = if n == 0 {
            f64::INFINITY
        } else {
            self.config.c * ((self.config.horizon as f64).ln() / n as f64).sqrt()
        };
        avg + conf + 2.0 * self.config.lambda * ball.radius()
    }

    fn full(&self, action: usize, ball: &RefBall) -> bool {
        let (n, _) = self.stats(action, ball);
        if n == 0 {
            return false;
        }
        let conf = self.config.c * ((self.config.horizon as f64).ln() / n as f64).sqrt();
        conf < ball.radius()
    }

    /// Minimum score over the relevant balls plus the argmin ball index,
    /// recomputed from raw history.
    fn best_ball(&self, action: usize, x: usize) -> (f64, usize) {
        let cover = &self.covers[action];
        let active: Vec<usize> = (0..cover.len())
            .filter(|&i| self.contains(&cover[i], x))
            .collect();
        let mut level_mask = 0u128;
        for &i in &active {
            level_mask |= 1u128 << cover[i].level;
        }
        let mut best: Option<(f64, u8, usize)> = None;
        for &i in &active {
            let ball = &cover[i];
            let (n, rho) = self.stats(action, ball);
            let is_full = n > 0 && {
                let conf =
                    self.config.c * ((self.config.horizon as f64).ln() / n as f64).sqrt();
                conf < ball.radius()
            };
            let half_active = level_mask & (1u128 << (ball.level as u32 + 1)) != 0;
            if is_full && half_active {
                continue;
            }
            let value = self.score_of(action, n, rho, ball);
            let better = match best {
                None => true,
                Some((bv, blevel, _)) => value < bv || (value == bv && ball.level > blevel),
            };
            if better {
                best = Some((value, ball.level, i));
            }
        }
        let (value, _, idx) = best.expect("relevant set never empty");
        (value, idx)
    }

    pub fn select(&mut self, x: usize) -> usize {
        if self.covers[0][0].center.is_none() {
            for cover in &mut self.covers {
                cover[0].center = Some(x);
            }
        }
        let scores: Vec<f64> = (0..self.config.k)
            .map(|a| self.best_ball(a, x).0)
            .collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..self.config.k)
            .filter(|&a| scores[a] == best)
            .collect();
        if ties.len() == 1 {
            ties[0]
        } else {
            ties[self.rng.random_range(0..ties.len())]
        }
    }

    pub fn observe(&mut self, x: usize, action: usize, reward: f64) {
        let (_, best) = self.best_ball(action, x);
        let minimizer = &self.covers[action][best];
        if self.full(action, minimizer) {
            let level = minimizer.level + 1;
            let created_at = self.history[action].len();
            self.covers[action].push(RefBall {
                center: Some(x),
                level,
                created_at,
            });
        }
        self.history[action].push((x, reward));
    }
}
