//! Quick runs of the oracle suites, for `trisnoma selftest`.

use trisnoma_core::conic::{self, check_derivatives, SolveStatus};
use trisnoma_core::phase::{design_phase, PhaseSettings};
use trisnoma_core::power::{solve_power, PowerSettings};
use trisnoma_core::CMat;

use crate::oracles;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

pub fn sca_surrogate() -> CheckResult {
    let r = oracles::sca_grid(81);
    check(
        "sca surrogate tightness and minorant",
        r.max_tightness_error <= 1e-10 && r.max_minorant_excess <= 1e-10,
        format!(
            "tightness {:.2e}, minorant excess {:.2e} over {} points",
            r.max_tightness_error, r.max_minorant_excess, r.points
        ),
    )
}

pub fn power_oracle(instances: u64) -> CheckResult {
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    for seed in 0..instances {
        let inst = oracles::power_instance(seed);
        let sol = solve_power(&inst.problem, &inst.coeffs, inst.duals, &PowerSettings::default());
        let oracle = oracles::power_grid_oracle(&inst, 10_000);
        match (sol, oracle) {
            (Ok(s), Some((_, best))) if s.feasible => {
                let got = s.surrogate_rates.0 + s.surrogate_rates.1;
                worst = worst.max(best - got);
                if (got - best).abs() > 1e-3 {
                    mismatched += 1;
                }
            }
            (Ok(s), None) if !s.feasible => {}
            _ => mismatched += 1,
        }
    }
    check(
        "power split vs grid oracle",
        mismatched == 0,
        format!("{mismatched} of {instances} mismatched, worst shortfall {worst:.2e}"),
    )
}

pub fn conic_oracle(instances: u64) -> CheckResult {
    let mut worst = 0.0f64;
    let mut failed = 0;
    for seed in 0..instances {
        let p = oracles::conic_instance(seed);
        let grid = oracles::conic_grid_oracle(&p);
        match (conic::solve(&p, 1e-8, 2000), grid) {
            (Ok(r), Some(g)) if r.status == SolveStatus::Optimal => {
                // A feasible solver point near the dual bound is within the
                // gap of the true optimum.
                let violation = p.max_violation(r.solution.matrix(), r.lambda.unwrap_or(0.0));
                let gap = (r.objective_value - g.upper).abs();
                worst = worst.max(gap);
                if violation > 1e-7
                    || gap > 1e-3
                    || r.objective_value < g.value - 1e-3
                    || r.kkt_residual > 1e-6
                {
                    failed += 1;
                }
            }
            _ => failed += 1,
        }
    }
    check(
        "conic solver vs 2x2 search and dual bound",
        failed == 0,
        format!("{failed} of {instances} failed, worst gap {worst:.2e}"),
    )
}

pub fn conic_derivatives(instances: u64) -> CheckResult {
    let mut worst = 0.0f64;
    let mut failed = 0;
    for seed in 0..instances {
        let p = oracles::conic_instance(seed);
        let Ok(conic::Interior::Point { phi, lambda }) = conic::find_interior(&p) else {
            failed += 1;
            continue;
        };
        for t in [1.0, 100.0] {
            match check_derivatives(&p, &phi, lambda.unwrap_or(0.0), t, 1e-6) {
                Ok(c) => worst = worst.max(c.gradient_rel_err).max(c.hessian_rel_err),
                Err(_) => failed += 1,
            }
        }
    }
    check(
        "barrier gradient and Hessian vs central differences",
        failed == 0 && worst <= 1e-4,
        format!("worst relative error {worst:.2e}"),
    )
}

pub fn phase_oracle(instances: u64) -> CheckResult {
    let mut below = 0;
    let mut unbounded = 0;
    let mut counted = 0;
    for seed in 0..instances {
        let inst = oracles::phase_instance(seed);
        let Some((_, best)) = oracles::enumerate_phases(&inst, 16) else {
            continue;
        };
        counted += 1;
        match design_phase(&inst.sub, &PhaseSettings::default(), seed) {
            Ok(sol) => {
                if sol.sum_rate < 0.95 * best {
                    below += 1;
                }
                if sol.objective_value < best - 1e-9 {
                    unbounded += 1;
                }
            }
            Err(_) => below += 1,
        }
    }
    check(
        "phase design vs 16-level enumeration",
        counted > 0 && below == 0 && unbounded == 0,
        format!("{below} of {counted} below 95%, {unbounded} relaxations under the enumerated optimum"),
    )
}

pub fn lifted_traces() -> CheckResult {
    let inst = oracles::phase_instance(0);
    let phases = [0.3, 1.7, 4.0];
    let beam: Vec<_> = phases.iter().map(|&p| trisnoma_core::C64::from_polar(1.0, p)).collect();
    let v = trisnoma_core::CVec::from_column_slice(&beam);
    let lifted: CMat = &v * v.adjoint();
    let direct = oracles::phase_rate(&inst, &beam);
    let traced = inst.sub.exact_objective(&lifted);
    let ok = direct.is_none_or(|d| (d - traced).abs() <= 1e-9 * d.abs().max(1.0));
    check(
        "lifted objective vs vector rates",
        ok,
        format!("vector {direct:?}, lifted {traced}"),
    )
}

/// The reduced suite run by the command line.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        sca_surrogate(),
        power_oracle(40),
        conic_oracle(4),
        conic_derivatives(4),
        phase_oracle(3),
        lifted_traces(),
    ]
}
