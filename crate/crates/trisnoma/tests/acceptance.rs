//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over all of them. Run with `--nocapture` to see the report.

use std::time::{Duration, Instant};

use trisnoma::oracles;
use trisnoma::selftest;
use trisnoma::sweep::{check_invariants, linspace, sweep, trial_scenario, SweepResult, SweepVar};
use trisnoma::Config;
use trisnoma_core::optimize::alternating_optimize;
use trisnoma_core::phase::{design_phase, PhaseSettings};

const TRIALS: usize = 20;
const DRAWS: usize = 100;

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, passed: bool, detail: String) {
        let line = format!("[{}] {id:>2} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((passed, line));
    }
}

/// Largest drop between consecutive means (positive when the sequence falls).
fn worst_drop(means: &[f64]) -> f64 {
    means.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max)
}

/// `(max - min) / max` over a set of means.
fn relative_spread(means: &[f64]) -> f64 {
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    (hi - lo) / hi.abs()
}

fn fmt_means(means: &[f64]) -> String {
    let parts: Vec<String> = means.iter().map(|m| format!("{m:.3}")).collect();
    parts.join(" ")
}

/// Invariant violations and hard failures over every trial of a sweep.
fn sweep_violations(result: &SweepResult) -> Vec<String> {
    result
        .trials()
        .filter_map(|t| {
            t.invariant_violation
                .clone()
                .or_else(|| t.error.clone())
                .map(|v| format!("{} trial {}: {v}", result.var, t.trial))
        })
        .collect()
}

fn p_max_grid() -> Vec<f64> {
    linspace(0.1, 10.0, 20)
}

fn convergence(report: &mut Report, violations: &mut Vec<String>) {
    let cfg = Config::default();
    let mut converged = 0;
    let mut slowest = Duration::ZERO;
    let mut iterations = Vec::new();
    for trial in 0..DRAWS {
        let scenario = trial_scenario(&cfg, trial).expect("default scenario is valid");
        let start = Instant::now();
        match alternating_optimize(&scenario) {
            Ok(out) => {
                slowest = slowest.max(start.elapsed());
                iterations.push(out.iterations);
                if out.converged && out.iterations <= 10 {
                    converged += 1;
                }
                if let Some(v) = check_invariants(&scenario, &out) {
                    violations.push(format!("draw {trial}: {v}"));
                }
            }
            Err(e) => violations.push(format!("draw {trial}: {e}")),
        }
    }
    let max_iter = iterations.iter().copied().max().unwrap_or(0);
    let passed = converged * 100 >= 95 * DRAWS && slowest < Duration::from_secs(5);
    report.record(
        1,
        "convergence at defaults",
        passed,
        format!(
            "{converged}/{DRAWS} converged within 10 iterations (max {max_iter}), slowest scenario {:.2} s",
            slowest.as_secs_f64()
        ),
    );
}

fn p_max_trend(report: &mut Report, by_m: &[(usize, SweepResult)]) {
    let mut ok = true;
    let mut details = Vec::new();
    for (m, r) in by_m {
        let means = r.means();
        let drop = worst_drop(&means);
        let tail = relative_spread(&means[means.len() - 3..]);
        ok &= drop <= 1e-3 && tail <= 0.01;
        details.push(format!(
            "M={m}: worst drop {drop:.2e}, last-three spread {:.3}% [{}]",
            100.0 * tail,
            fmt_means(&means)
        ));
    }
    let mut m_drop = f64::NEG_INFINITY;
    for pair in by_m.windows(2) {
        for (a, b) in pair[0].1.means().iter().zip(pair[1].1.means()) {
            m_drop = m_drop.max(a - b);
        }
    }
    ok &= m_drop <= 1e-3;
    details.push(format!("worst drop from smaller to larger M {m_drop:.2e}"));
    report.record(2, "P_max sweep trend", ok, details.join("; "));
}

fn i_th_trend(report: &mut Report, r: &SweepResult) {
    let means = r.means();
    let drop = worst_drop(&means);
    let capped: Vec<f64> = r
        .points
        .iter()
        .filter(|p| p.trials.iter().all(|t| t.at_p_max))
        .map(|p| p.mean_sum_rate)
        .collect();
    let spread = if capped.len() >= 2 { relative_spread(&capped) } else { 0.0 };
    let first_capped = r
        .points
        .iter()
        .find(|p| p.trials.iter().all(|t| t.at_p_max))
        .map(|p| format!("{:.3}", p.value))
        .unwrap_or_else(|| "none".into());
    report.record(
        3,
        "I_th sweep trend",
        drop <= 1e-3 && spread <= 0.01,
        format!(
            "worst drop {drop:.2e}; {} points with P_t = P_max in every trial (from I_th = {first_capped}), spread {:.3}% [{}]",
            capped.len(),
            100.0 * spread,
            fmt_means(&means)
        ),
    );
}

fn r_min_trend(report: &mut Report, by_r: &[(f64, SweepResult)]) {
    let mut rise = f64::NEG_INFINITY;
    for pair in by_r.windows(2) {
        for (a, b) in pair[0].1.means().iter().zip(pair[1].1.means()) {
            rise = rise.max(b - a);
        }
    }
    let firsts: Vec<String> = by_r
        .iter()
        .map(|(r, s)| format!("R_min={r}: {:.3}..{:.3}", s.means()[0], s.means()[s.means().len() - 1]))
        .collect();
    report.record(
        4,
        "R_min trend",
        rise <= 1e-3,
        format!("worst rise with larger R_min {rise:.2e}; {}", firsts.join(", ")),
    );
}

fn phase_equivalence(report: &mut Report) {
    let instances = 50;
    let mut counted = 0;
    let mut near = 0;
    let mut bounded = 0;
    let mut worst_ratio = f64::INFINITY;
    for seed in 0..instances {
        let inst = oracles::phase_instance(seed);
        let Some((_, best)) = oracles::enumerate_phases(&inst, 16) else {
            continue;
        };
        counted += 1;
        if let Ok(sol) = design_phase(&inst.sub, &PhaseSettings::default(), seed) {
            let ratio = sol.sum_rate / best;
            worst_ratio = worst_ratio.min(ratio);
            if ratio >= 0.95 {
                near += 1;
            }
            if sol.objective_value >= best - 1e-9 {
                bounded += 1;
            }
        }
    }
    report.record(
        6,
        "phase design vs enumeration",
        counted > 0 && near * 10 >= 9 * counted && bounded == counted,
        format!(
            "{near}/{counted} at >= 95% of the enumerated optimum (worst {:.3}), relaxation bounds {bounded}/{counted}",
            worst_ratio
        ),
    );
}

fn from_check(report: &mut Report, id: u32, check: selftest::CheckResult) {
    report.record(id, check.name, check.passed, check.detail);
}

fn determinism(report: &mut Report) {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_trisnoma"))
            .args(["solve", "--config", "defaults", "--seed", "7", "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        let trace = std::fs::read(dir.path().join("trace.csv")).unwrap_or_default();
        (status.status.code(), trace)
    };
    let (a_code, a) = run();
    let (b_code, b) = run();
    report.record(
        10,
        "solve determinism",
        a_code == Some(0) && b_code == Some(0) && !a.is_empty() && a == b,
        format!("exit codes {a_code:?}/{b_code:?}, trace.csv {} bytes, identical: {}", a.len(), a == b),
    );
}

#[test]
fn acceptance_criteria() {
    let mut report = Report { lines: Vec::new() };
    let mut violations = Vec::new();

    convergence(&mut report, &mut violations);

    let base = Config::default();
    let grid = p_max_grid();
    let by_m: Vec<(usize, SweepResult)> = [5, 10, 20]
        .into_iter()
        .map(|m| {
            let cfg = Config {
                m_elements: m,
                ..base.clone()
            };
            (m, sweep(&cfg, SweepVar::PMax, &grid, TRIALS).unwrap())
        })
        .collect();
    p_max_trend(&mut report, &by_m);

    let i_th = sweep(&base, SweepVar::ITh, &linspace(0.1, 10.0, 20), TRIALS).unwrap();
    i_th_trend(&mut report, &i_th);

    // The default floor of 0.1 is the M = 10 curve already swept above.
    let mut by_r: Vec<(f64, SweepResult)> = vec![(0.1, by_m[1].1.clone())];
    for r_min in [0.5, 1.0] {
        let cfg = Config { r_min, ..base.clone() };
        by_r.push((r_min, sweep(&cfg, SweepVar::PMax, &grid, TRIALS).unwrap()));
    }
    r_min_trend(&mut report, &by_r);

    from_check(&mut report, 5, selftest::power_oracle(100));
    phase_equivalence(&mut report);
    let conic = selftest::conic_oracle(20);
    let derivs = selftest::conic_derivatives(20);
    report.record(
        7,
        "conic solver",
        conic.passed && derivs.passed,
        format!("{}: {}; {}: {}", conic.name, conic.detail, derivs.name, derivs.detail),
    );
    from_check(&mut report, 8, selftest::sca_surrogate());

    let swept = by_m.iter().map(|(_, r)| r).chain(by_r[1..].iter().map(|(_, r)| r)).chain([&i_th]);
    for r in swept {
        violations.extend(sweep_violations(r));
    }
    let runs = DRAWS + TRIALS * grid.len() * (by_m.len() + by_r.len() - 1) + TRIALS * i_th.grid.len();
    report.record(
        9,
        "feasibility invariants",
        violations.is_empty(),
        format!(
            "{} violations over {runs} runs{}",
            violations.len(),
            violations.first().map(|v| format!(", first: {v}")).unwrap_or_default()
        ),
    );

    determinism(&mut report);

    let failed: Vec<&String> = report.lines.iter().filter(|(p, _)| !p).map(|(_, l)| l).collect();
    let listing: Vec<&str> = failed.iter().map(|s| s.as_str()).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", listing.join("\n"));
}
