//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use trisnoma_core::optimize::alternating_optimize;

use crate::config::{Config, ConfigError, DEFAULTS_NAME};
use crate::sweep::{sweep, SweepSpec};
use crate::{output, selftest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "trisnoma", version, about = "Sum-rate optimization for a T-RIS NOMA LEO downlink")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize one scenario; writes trace.csv and summary.json.
    Solve(Common),
    /// Monte-Carlo parameter sweeps; writes sweep_<var>.csv per sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Channel draws per grid point.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// `<var>:<start>:<stop>:<steps>` with var one of p_max, i_th, r_min,
        /// m_elements. Repeatable; defaults to the P_max, I_th and R_min
        /// figure sweeps.
        #[arg(long = "sweep")]
        sweeps: Vec<String>,
    },
    /// Runs the oracle suites at reduced size.
    Selftest,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file, or `defaults` for the built-in values.
    #[arg(long, default_value = DEFAULTS_NAME)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub const DEFAULT_SWEEPS: [&str; 3] = ["p_max:0.1:10:20", "i_th:0.1:10:20", "r_min:0.1:1:3"];

impl Common {
    fn load(&self) -> Result<Config, ConfigError> {
        let mut cfg = Config::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Solve(common) => solve(&common),
        Command::Sweep {
            common,
            trials,
            sweeps,
        } => run_sweeps(&common, trials, &sweeps),
        Command::Selftest => run_selftest(),
    }
}

fn config_error(e: &ConfigError) -> i32 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn solve(common: &Common) -> i32 {
    let cfg = match common.load() {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    let scenario = match cfg.scenario() {
        Ok(s) => s,
        Err(e) => return config_error(&e),
    };
    let out = match alternating_optimize(&scenario) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    if let Err(e) = output::write_solve(&common.out, &out) {
        eprintln!("error: {e:#}");
        return EXIT_FAILURE;
    }
    println!(
        "sum rate {:.6} b/s/Hz after {} iterations (converged: {}, feasible: {})",
        out.state.sum_rate, out.iterations, out.converged, out.feasible
    );
    match out.infeasibility {
        Some(report) => {
            eprintln!(
                "infeasible: {:?} constraint misses by {:.3e}",
                report.binding, report.violation
            );
            EXIT_FAILURE
        }
        None => EXIT_OK,
    }
}

fn run_sweeps(common: &Common, trials: usize, sweeps: &[String]) -> i32 {
    let cfg = match common.load() {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    let texts: Vec<&str> = if sweeps.is_empty() {
        DEFAULT_SWEEPS.to_vec()
    } else {
        sweeps.iter().map(String::as_str).collect()
    };
    let mut specs = Vec::new();
    for t in texts {
        match t.parse::<SweepSpec>() {
            Ok(s) => specs.push(s),
            Err(e) => return config_error(&e),
        }
    }
    for spec in specs {
        let result = match sweep(&cfg, spec.var, &spec.grid, trials) {
            Ok(r) => r,
            Err(e) => return config_error(&e),
        };
        if let Err(e) = output::write_sweep(&common.out, &result) {
            eprintln!("error: {e:#}");
            return EXIT_FAILURE;
        }
        let failures: usize = result.points.iter().map(|p| p.failures).sum();
        println!(
            "sweep {}: {} points x {} trials, {} failed trials",
            spec.var,
            result.points.len(),
            trials,
            failures
        );
    }
    EXIT_OK
}

fn run_selftest() -> i32 {
    let results = selftest::run_all();
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}
