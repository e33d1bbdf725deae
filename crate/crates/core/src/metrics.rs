//! Per-step regret and mistake accounting, checkpointing and aggregation
//! across replicate runs.
//!
//! Two mistake notions are tracked alongside the regret of the chosen
//! action: `mistake1` counts rounds whose action was not expected-reward
//! optimal for the call's class (with a tiny tie tolerance so intentionally
//! tied optima never count), and `mistake2` counts the operationally bad
//! rounds — forwarding a SPIT call or challenging a normal one. Regret is
//! reported in the same scaled units the learners see so values are
//! comparable across learners and scenarios; raw-unit reporting is a flag.

use serde::{Deserialize, Serialize};

use crate::context::CallClass;
use crate::env::{Scenario, FORWARD_ACTION};
use crate::error::{Error, Result};
use crate::StructureStats;

/// Expected-reward ties closer than this count as jointly optimal.
pub const MISTAKE1_TIE_TOLERANCE: f64 = 1e-12;

/// Floats in CSV output carry 17 significant digits; infinities are
/// spelled `inf`.
pub fn format_float(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Precomputed per-(class, action) regret tables and optimal-action sets,
/// derived from the same scenario the sampler uses.
#[derive(Clone, Debug)]
pub struct RegretOracle {
    k: usize,
    raw_regret: Vec<Vec<f64>>,
    scaled_regret: Vec<Vec<f64>>,
    optimal: Vec<Vec<bool>>,
}

impl RegretOracle {
    pub fn new(scenario: &Scenario) -> Result<RegretOracle> {
        scenario.validate()?;
        let width = scenario.reward.scale_width();
        if !width.is_finite() {
            return Err(Error::config(
                "regret accounting needs finite scale bounds",
            ));
        }
        let mut raw_regret = Vec::new();
        let mut scaled_regret = Vec::new();
        let mut optimal = Vec::new();
        for class in CallClass::ALL {
            let best = scenario.optimal_value(class);
            let mut raw_row = Vec::with_capacity(scenario.k);
            let mut scaled_row = Vec::with_capacity(scenario.k);
            let mut opt_row = Vec::with_capacity(scenario.k);
            for action in 0..scenario.k {
                let value = scenario.expected_reward(class, action)?;
                let gap = best - value;
                raw_row.push(gap);
                scaled_row.push(gap / width);
                opt_row.push(value >= best - MISTAKE1_TIE_TOLERANCE);
            }
            raw_regret.push(raw_row);
            scaled_regret.push(scaled_row);
            optimal.push(opt_row);
        }
        Ok(RegretOracle {
            k: scenario.k,
            raw_regret,
            scaled_regret,
            optimal,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn check(&self, action: usize) -> Result<()> {
        if action >= self.k {
            return Err(Error::UnknownAction {
                action,
                k: self.k,
            });
        }
        Ok(())
    }

    pub fn raw_regret(&self, class: CallClass, action: usize) -> Result<f64> {
        self.check(action)?;
        Ok(self.raw_regret[class.index()][action])
    }

    pub fn scaled_regret(&self, class: CallClass, action: usize) -> Result<f64> {
        self.check(action)?;
        Ok(self.scaled_regret[class.index()][action])
    }

    pub fn is_optimal(&self, class: CallClass, action: usize) -> Result<bool> {
        self.check(action)?;
        Ok(self.optimal[class.index()][action])
    }
}

/// Accounting outcome of one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub t: u64,
    pub class: CallClass,
    pub action: usize,
    /// Instantaneous regret in scaled units.
    pub regret: f64,
    pub mistake1: bool,
    pub mistake2: bool,
}

/// Cumulative counters sampled at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: u64,
    pub regret_cum: f64,
    pub regret_cum_raw: f64,
    pub nmistakes1: u64,
    pub nmistakes2: u64,
    pub regions: u64,
    pub min_radius: Option<f64>,
}

impl Checkpoint {
    pub fn regret_per_t(&self, raw_units: bool) -> f64 {
        let cum = if raw_units {
            self.regret_cum_raw
        } else {
            self.regret_cum
        };
        cum / self.t as f64
    }
}

/// Regret and mistake accumulation for one replicate, checkpointed on a
/// fixed grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    grid: Vec<u64>,
    next: usize,
    t: u64,
    regret_cum: f64,
    regret_cum_raw: f64,
    nmistakes1: u64,
    nmistakes2: u64,
    checkpoints: Vec<Checkpoint>,
}

/// Log-spaced 1-2-5 checkpoint ladder up to `steps`, always including
/// `10^4`, `10^5` (when reachable) and the final step.
pub fn checkpoint_grid(steps: u64) -> Vec<u64> {
    assert!(steps >= 1);
    let mut grid = Vec::new();
    let mut decade = 10u64;
    loop {
        for mult in [1u64, 2, 5] {
            let Some(value) = decade.checked_mul(mult) else {
                break;
            };
            if value <= steps {
                grid.push(value);
            }
        }
        match decade.checked_mul(10) {
            Some(next) if decade < steps => decade = next,
            _ => break,
        }
    }
    for fixed in [10_000, 100_000, steps] {
        if fixed <= steps {
            grid.push(fixed);
        }
    }
    grid.sort_unstable();
    grid.dedup();
    grid
}

impl RunMetrics {
    pub fn new(grid: Vec<u64>) -> Result<RunMetrics> {
        if grid.is_empty() {
            return Err(Error::config("checkpoint grid must not be empty"));
        }
        let mut sorted = grid;
        sorted.sort_unstable();
        sorted.dedup();
        if sorted[0] == 0 {
            return Err(Error::config("checkpoints start at step 1"));
        }
        Ok(RunMetrics {
            grid: sorted,
            next: 0,
            t: 0,
            regret_cum: 0.0,
            regret_cum_raw: 0.0,
            nmistakes1: 0,
            nmistakes2: 0,
            checkpoints: Vec::new(),
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn grid(&self) -> &[u64] {
        &self.grid
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.regret_cum
    }

    pub fn nmistakes1(&self) -> u64 {
        self.nmistakes1
    }

    pub fn nmistakes2(&self) -> u64 {
        self.nmistakes2
    }

    /// Accounts one round. The regret increment is the oracle's scaled gap
    /// (non-negative by construction); `mistake2` flags forwarding SPIT or
    /// challenging a normal call.
    pub fn record_step(
        &mut self,
        class: CallClass,
        action: usize,
        oracle: &RegretOracle,
    ) -> Result<StepOutcome> {
        let regret = oracle.scaled_regret(class, action)?;
        debug_assert!(regret >= 0.0);
        self.t += 1;
        self.regret_cum += regret;
        self.regret_cum_raw += oracle.raw_regret(class, action)?;
        let mistake1 = !oracle.is_optimal(class, action)?;
        let mistake2 = if class.is_spit() {
            action == FORWARD_ACTION
        } else {
            action != FORWARD_ACTION
        };
        self.nmistakes1 += mistake1 as u64;
        self.nmistakes2 += mistake2 as u64;
        Ok(StepOutcome {
            t: self.t,
            class,
            action,
            regret,
            mistake1,
            mistake2,
        })
    }

    pub fn checkpoint_due(&self) -> bool {
        self.next < self.grid.len() && self.t >= self.grid[self.next]
    }

    pub fn take_checkpoint(&mut self, structure: &StructureStats) {
        debug_assert!(self.checkpoint_due());
        self.checkpoints.push(Checkpoint {
            t: self.t,
            regret_cum: self.regret_cum,
            regret_cum_raw: self.regret_cum_raw,
            nmistakes1: self.nmistakes1,
            nmistakes2: self.nmistakes2,
            regions: structure.regions,
            min_radius: structure.min_radius,
        });
        self.next += 1;
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write, raw_units: bool) -> std::io::Result<()> {
        writeln!(
            w,
            "t,regret_cum,regret_per_t,nmistakes1,nmistakes2,n_balls_total,min_radius"
        )?;
        for cp in &self.checkpoints {
            let cum = if raw_units {
                cp.regret_cum_raw
            } else {
                cp.regret_cum
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                cp.t,
                format_float(cum),
                format_float(cp.regret_per_t(raw_units)),
                cp.nmistakes1,
                cp.nmistakes2,
                cp.regions,
                cp.min_radius.map(format_float).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// Mean/min/max of one metric at one grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn over(values: impl Iterator<Item = f64>) -> Spread {
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            count += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        Spread {
            mean: sum / count as f64,
            min,
            max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: u64,
    pub regret_per_t: Spread,
    pub nmistakes1: Spread,
    pub nmistakes2: Spread,
}

/// Per-checkpoint statistics over replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub replicates: usize,
    pub rows: Vec<AggregateRow>,
}

impl AggregateReport {
    pub fn row_at(&self, t: u64) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.t == t)
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            w,
            "t,replicates,regret_per_t_mean,regret_per_t_min,regret_per_t_max,\
             nmistakes1_mean,nmistakes1_min,nmistakes1_max,\
             nmistakes2_mean,nmistakes2_min,nmistakes2_max"
        )?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                row.t,
                self.replicates,
                format_float(row.regret_per_t.mean),
                format_float(row.regret_per_t.min),
                format_float(row.regret_per_t.max),
                format_float(row.nmistakes1.mean),
                row.nmistakes1.min as u64,
                row.nmistakes1.max as u64,
                format_float(row.nmistakes2.mean),
                row.nmistakes2.min as u64,
                row.nmistakes2.max as u64,
            )?;
        }
        Ok(())
    }
}

/// Aggregates replicate runs sharing one checkpoint grid.
pub fn aggregate(runs: &[RunMetrics], raw_units: bool) -> Result<AggregateReport> {
    let first = runs.first().ok_or_else(|| Error::config("no runs"))?;
    for run in runs {
        if run.grid != first.grid || run.checkpoints.len() != first.checkpoints.len() {
            return Err(Error::MismatchedCheckpoints);
        }
    }
    let rows = (0..first.checkpoints.len())
        .map(|i| {
            let t = first.checkpoints[i].t;
            AggregateRow {
                t,
                regret_per_t: Spread::over(
                    runs.iter()
                        .map(|r| r.checkpoints[i].regret_per_t(raw_units)),
                ),
                nmistakes1: Spread::over(
                    runs.iter().map(|r| r.checkpoints[i].nmistakes1 as f64),
                ),
                nmistakes2: Spread::over(
                    runs.iter().map(|r| r.checkpoints[i].nmistakes2 as f64),
                ),
            }
        })
        .collect();
    Ok(AggregateReport {
        replicates: runs.len(),
        rows,
    })
}
