//! Monte-Carlo parameter sweeps.
//!
//! Every grid point reuses the same channel draws: trial `t` draws its angles
//! of departure and its initial beam from `base_seed + t`, so differences
//! between points come from the swept parameter alone.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use trisnoma_core::optimize::{alternating_optimize, AoOutcome, Scenario};

use crate::config::{Config, ConfigError};

/// Tolerance on the rate floors of a converged iterate.
pub const RATE_FLOOR_SLACK: f64 = 1e-4;
/// Tolerance on the interference cap of every iterate, W.
pub const INTERFERENCE_SLACK: f64 = 1e-6;
/// Tolerance on the semidefinite and diagonal caps of lifted iterates.
pub const LIFT_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepVar {
    PMax,
    ITh,
    RMin,
    MElements,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::PMax => "p_max",
            SweepVar::ITh => "i_th",
            SweepVar::RMin => "r_min",
            SweepVar::MElements => "m_elements",
        }
    }

    /// Copy of `cfg` with this variable set to `value`.
    pub fn apply(self, cfg: &Config, value: f64) -> Config {
        let mut out = cfg.clone();
        match self {
            SweepVar::PMax => out.p_max = value,
            SweepVar::ITh => out.i_th = value,
            SweepVar::RMin => out.r_min = value,
            SweepVar::MElements => out.m_elements = value.round().max(0.0) as usize,
        }
        out
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVar {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p_max" => Ok(SweepVar::PMax),
            "i_th" => Ok(SweepVar::ITh),
            "r_min" => Ok(SweepVar::RMin),
            "m_elements" => Ok(SweepVar::MElements),
            other => Err(ConfigError {
                key: "sweep".into(),
                message: format!("unknown sweep variable `{other}`"),
            }),
        }
    }
}

/// `<var>:<start>:<stop>:<steps>` with evenly spaced points.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub var: SweepVar,
    pub grid: Vec<f64>,
}

impl FromStr for SweepSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |message: String| ConfigError {
            key: "sweep".into(),
            message,
        };
        let parts: Vec<&str> = s.split(':').collect();
        let [var, start, stop, steps] = parts.as_slice() else {
            return Err(err(format!("expected <var>:<start>:<stop>:<steps>, got `{s}`")));
        };
        let var: SweepVar = var.parse()?;
        let num = |x: &str| {
            x.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("`{x}` is not a finite number")))
        };
        let (start, stop) = (num(start)?, num(stop)?);
        let steps: usize = steps
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| err(format!("`{steps}` is not a positive step count")))?;
        let grid = linspace(start, stop, steps);
        let grid = if var == SweepVar::MElements {
            grid.iter().map(|v| v.round()).collect()
        } else {
            grid
        };
        validate_grid(&grid).map_err(err)?;
        Ok(Self { var, grid })
    }
}

pub fn linspace(start: f64, stop: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![start];
    }
    (0..steps)
        .map(|i| start + (stop - start) * i as f64 / (steps - 1) as f64)
        .collect()
}

pub fn validate_grid(grid: &[f64]) -> Result<(), String> {
    if grid.is_empty() {
        return Err("sweep grid is empty".into());
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err("sweep grid must be strictly increasing".into());
    }
    Ok(())
}

/// Outcome of one channel draw at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub sum_rate: f64,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    pub p_t: f64,
    /// `P_t` reached `P_max`, i.e. the interference cap was slack.
    pub at_p_max: bool,
    /// First violated iterate invariant, if any.
    pub invariant_violation: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    /// Mean exact sum rate over trials; a trial that ends infeasible or fails
    /// contributes zero.
    pub mean_sum_rate: f64,
    pub mean_iterations: f64,
    pub feasible_fraction: f64,
    pub converged_fraction: f64,
    pub failures: usize,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub var: SweepVar,
    pub grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_sum_rate).collect()
    }

    pub fn trials(&self) -> impl Iterator<Item = &TrialRecord> {
        self.points.iter().flat_map(|p| &p.trials)
    }
}

/// Seed of trial `trial`; shared by every grid point.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    base_seed.wrapping_add(trial as u64)
}

/// Scenario of one trial: random angles of departure from the trial seed.
pub fn trial_scenario(cfg: &Config, trial: usize) -> Result<Scenario, ConfigError> {
    let seed = trial_seed(cfg.seed, trial);
    let mut drawn = cfg.with_random_aods(seed);
    drawn.seed = seed;
    drawn.scenario()
}

/// Checks every recorded iterate of a run against the feasibility
/// invariants, returning the first violation.
pub fn check_invariants(s: &Scenario, out: &AoOutcome) -> Option<String> {
    let cons = &s.cons;
    for w in out.trace.windows(2) {
        if w[1].sum_rate < w[0].sum_rate {
            return Some(format!("sum rate decreased at iteration {}", w[1].iteration));
        }
    }
    for t in &out.trace {
        if t.interference > cons.i_th + INTERFERENCE_SLACK {
            return Some(format!("interference {} at iteration {}", t.interference, t.iteration));
        }
        if t.p_t > cons.p_max * (1.0 + 1e-12) {
            return Some(format!("total power {} at iteration {}", t.p_t, t.iteration));
        }
        if t.lifted_min_eigenvalue < -LIFT_SLACK {
            return Some(format!("lifted matrix not PSD at iteration {}", t.iteration));
        }
        if t.lifted_max_diagonal > 1.0 + LIFT_SLACK {
            return Some(format!("lifted diagonal above 1 at iteration {}", t.iteration));
        }
    }
    if out.beam.amplitudes().iter().any(|&a| a > 1.0 + 1e-9) {
        return Some("beam amplitude above 1".into());
    }
    if out.feasible
        && (out.state.rates.0 < cons.r_min - RATE_FLOOR_SLACK
            || out.state.rates.1 < cons.r_min - RATE_FLOOR_SLACK)
    {
        return Some("rate floor missed by a feasible result".into());
    }
    None
}

fn run_trial(cfg: &Config, trial: usize) -> TrialRecord {
    let seed = trial_seed(cfg.seed, trial);
    let failed = |e: String| TrialRecord {
        trial,
        seed,
        sum_rate: 0.0,
        iterations: 0,
        converged: false,
        feasible: false,
        p_t: f64::NAN,
        at_p_max: false,
        invariant_violation: None,
        error: Some(e),
    };
    let scenario = match trial_scenario(cfg, trial) {
        Ok(s) => s,
        Err(e) => return failed(e.to_string()),
    };
    match alternating_optimize(&scenario) {
        Ok(out) => TrialRecord {
            trial,
            seed,
            sum_rate: out.state.sum_rate,
            iterations: out.iterations,
            converged: out.converged,
            feasible: out.feasible,
            p_t: out.state.split.p_total(),
            at_p_max: out.state.split.p_total() >= scenario.cons.p_max * (1.0 - 1e-9),
            invariant_violation: check_invariants(&scenario, &out),
            error: None,
        },
        Err(e) => failed(e.to_string()),
    }
}

/// Runs `trials` channel draws at every grid value. Points and trials run in
/// parallel; the result does not depend on scheduling.
pub fn sweep(base: &Config, var: SweepVar, grid: &[f64], trials: usize) -> Result<SweepResult, ConfigError> {
    validate_grid(grid).map_err(|message| ConfigError {
        key: "sweep".into(),
        message,
    })?;
    if trials == 0 {
        return Err(ConfigError {
            key: "trials".into(),
            message: "must be at least 1".into(),
        });
    }
    let configs: Vec<Config> = grid.iter().map(|&v| var.apply(base, v)).collect();
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|p| (0..trials).map(move |t| (p, t)))
        .collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(p, t)| run_trial(&configs[p], t))
        .collect();
    let points = grid
        .iter()
        .zip(records.chunks(trials))
        .map(|(&value, chunk)| summarize(value, chunk.to_vec()))
        .collect();
    Ok(SweepResult {
        var,
        grid: grid.to_vec(),
        points,
    })
}

fn summarize(value: f64, trials: Vec<TrialRecord>) -> SweepPoint {
    let n = trials.len() as f64;
    let served: f64 = trials.iter().filter(|t| t.feasible).map(|t| t.sum_rate).sum();
    let ran: Vec<&TrialRecord> = trials.iter().filter(|t| t.error.is_none()).collect();
    SweepPoint {
        value,
        mean_sum_rate: served / n,
        mean_iterations: if ran.is_empty() {
            f64::NAN
        } else {
            ran.iter().map(|t| t.iterations as f64).sum::<f64>() / ran.len() as f64
        },
        feasible_fraction: trials.iter().filter(|t| t.feasible).count() as f64 / n,
        converged_fraction: trials.iter().filter(|t| t.converged).count() as f64 / n,
        failures: trials.len() - ran.len(),
        trials,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parses_into_an_even_grid() {
        let s: SweepSpec = "p_max:0.1:10:20".parse().unwrap();
        assert_eq!(s.var, SweepVar::PMax);
        assert_eq!(s.grid.len(), 20);
        assert_eq!(s.grid[0], 0.1);
        assert!((s.grid[19] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn bad_specs_are_rejected() {
        for bad in ["p_max:1:2", "speed:0:1:3", "p_max:a:1:3", "p_max:0:1:0", "p_max:2:1:3", "m_elements:1:2:5"] {
            assert!(bad.parse::<SweepSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn element_grid_is_rounded() {
        let s: SweepSpec = "m_elements:2:8:4".parse().unwrap();
        assert_eq!(s.grid, vec![2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn trial_seeds_are_shared_across_points() {
        let cfg = Config::default();
        let a = trial_scenario(&SweepVar::PMax.apply(&cfg, 1.0), 3).unwrap();
        let b = trial_scenario(&SweepVar::PMax.apply(&cfg, 5.0), 3).unwrap();
        assert_eq!(a.g_k, b.g_k);
        assert_eq!(a.seed, b.seed);
        assert_ne!(a.cons, b.cons);
    }

    #[test]
    fn small_sweep_is_deterministic_and_clean() {
        let mut cfg = Config::default();
        cfg.m_elements = 3;
        cfg.rand_trials = 20;
        let a = sweep(&cfg, SweepVar::PMax, &[0.5, 2.0], 3).unwrap();
        let b = sweep(&cfg, SweepVar::PMax, &[0.5, 2.0], 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 2);
        assert!(a.trials().all(|t| t.invariant_violation.is_none() && t.error.is_none()));
    }
}
