//! NOMA power split and total transmit power for a fixed surface phase.
//!
//! The total power is pushed to the largest value both the power budget and
//! the interference cap allow. The split comes from the closed-form KKT
//! expression driven by a projected sub-gradient loop on the two rate
//! multipliers; every result is cross-checked against a dense grid search on
//! `p_k`, and the better feasible point wins.

// Float math for toolchains whose `core` has no inherent methods.
#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::{effective_gain, ChannelVector};
use crate::error::{invalid, Error, Result};
use crate::phase::BeamformingVector;
use crate::rate::{
    sinr_strong_from_gain, sinr_weak_from_gain, NoisePower, PowerSplit, ScaCoefficients,
};

/// Share clamp applied to the closed-form `p_k`.
pub const SHARE_EPS: f64 = 1e-6;

/// Slack allowed on the surrogate rate floors when declaring a split feasible.
pub const RATE_FLOOR_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerConstraints {
    /// Transmit power budget, W.
    pub p_max: f64,
    /// Interference temperature cap at the primary receiver, W.
    pub i_th: f64,
    /// Minimum rate of each secondary user, b/s/Hz.
    pub r_min: f64,
}

impl PowerConstraints {
    pub fn new(p_max: f64, i_th: f64, r_min: f64) -> Result<Self> {
        let c = Self { p_max, i_th, r_min };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.p_max.is_finite() || self.p_max <= 0.0 {
            return Err(invalid("p_max must be finite and positive"));
        }
        if !self.i_th.is_finite() || self.i_th <= 0.0 {
            return Err(invalid("i_th must be finite and positive"));
        }
        if !self.r_min.is_finite() || self.r_min < 0.0 {
            return Err(invalid("r_min must be finite and nonnegative"));
        }
        Ok(())
    }

    /// SINR that meets the rate floor exactly, `2^r_min - 1`.
    pub fn sinr_floor(&self) -> f64 {
        self.r_min.exp2() - 1.0
    }
}

/// Rate-floor multipliers and the sub-gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualState {
    pub lambda_k: f64,
    pub lambda_j: f64,
    pub step_size: f64,
}

impl Default for DualState {
    fn default() -> Self {
        Self {
            lambda_k: 0.5,
            lambda_j: 0.5,
            step_size: 0.05,
        }
    }
}

impl DualState {
    /// Projected sub-gradient step on the constraints `rate >= r_min`: a
    /// multiplier grows while its constraint is violated and decays otherwise.
    pub fn update(&mut self, rates: (f64, f64), r_min: f64) {
        self.lambda_k = (self.lambda_k - self.step_size * (rates.0 - r_min)).max(0.0);
        self.lambda_j = (self.lambda_j - self.step_size * (rates.1 - r_min)).max(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverPath {
    ClosedForm,
    OracleFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSolution {
    pub split: PowerSplit,
    pub duals: DualState,
    /// Surrogate rates `(strong, weak)` at `split`.
    pub surrogate_rates: (f64, f64),
    pub feasible: bool,
    pub solver_path: SolverPath,
    pub dual_iterations: usize,
}

impl PowerSolution {
    pub fn surrogate_sum(&self) -> f64 {
        self.surrogate_rates.0 + self.surrogate_rates.1
    }
}

/// Fixed-phase inputs of the power subproblem. Gains are effective gains
/// `|sum g_m phi_m|^2` with the strong user first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerProblem {
    pub gain_k: f64,
    pub gain_j: f64,
    /// Effective gain towards the primary receiver.
    pub h_eff: f64,
    pub noise: NoisePower,
    pub cons: PowerConstraints,
}

impl PowerProblem {
    pub fn from_channels(
        g_k: &ChannelVector,
        g_j: &ChannelVector,
        h_l: &ChannelVector,
        phi: &BeamformingVector,
        noise: NoisePower,
        cons: PowerConstraints,
    ) -> Result<Self> {
        Ok(Self {
            gain_k: effective_gain(g_k, phi)?,
            gain_j: effective_gain(g_j, phi)?,
            h_eff: effective_gain(h_l, phi)?,
            noise,
            cons,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSettings {
    pub max_dual_iters: usize,
    pub oracle_grid: usize,
    /// Stopping threshold on rate violations and complementary slackness.
    pub dual_tol: f64,
}

impl Default for PowerSettings {
    fn default() -> Self {
        Self {
            max_dual_iters: 500,
            oracle_grid: 10_000,
            dual_tol: 1e-4,
        }
    }
}

/// `min(I_th / h_eff, P_max)`, or `P_max` when the primary is not coupled.
pub fn optimal_total_power(h_eff: f64, cons: &PowerConstraints) -> f64 {
    if h_eff <= 0.0 {
        cons.p_max
    } else {
        (cons.i_th / h_eff).min(cons.p_max)
    }
}

/// Unclamped stationarity expression for `p_k` given the rate multipliers.
pub fn closed_form_pk(
    gain_k: f64,
    gain_j: f64,
    duals: &DualState,
    noise: NoisePower,
    p_t: f64,
) -> Result<f64> {
    if gain_k <= 0.0 || gain_j <= 0.0 {
        return Err(invalid("closed-form power needs positive gains"));
    }
    if p_t <= 0.0 {
        return Err(invalid("closed-form power needs positive total power"));
    }
    let spread = duals.lambda_k - duals.lambda_j;
    if spread.abs() < 1e-12 {
        return Err(Error::DegenerateDuals(duals.lambda_k));
    }
    let numerator =
        (gain_j * gain_k - gain_k * duals.lambda_k + gain_j * duals.lambda_j) * noise.sigma_sq();
    Ok(numerator / (gain_j * gain_k * spread * p_t))
}

pub fn clamp_share(p_k: f64) -> f64 {
    p_k.clamp(SHARE_EPS, 1.0 - SHARE_EPS)
}

/// Surrogate rates `(strong, weak)` of the split `p_k` at total power `p_t`.
pub fn surrogate_rates(
    gains: (f64, f64),
    p_k: f64,
    p_t: f64,
    noise: NoisePower,
    coeffs: &(ScaCoefficients, ScaCoefficients),
) -> (f64, f64) {
    let split = PowerSplit::new(p_k, p_t).expect("share and power validated by caller");
    let strong = sinr_strong_from_gain(gains.0, &split, noise);
    let weak = sinr_weak_from_gain(gains.1, &split, noise);
    (coeffs.0.surrogate(strong), coeffs.1.surrogate(weak))
}

fn floor_violation(rates: (f64, f64), r_min: f64) -> f64 {
    (r_min - rates.0).max(r_min - rates.1).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleOutcome {
    Feasible {
        split: PowerSplit,
        objective: f64,
    },
    /// No grid point met both rate floors.
    Infeasible {
        least_violating: PowerSplit,
        violation: f64,
    },
}

/// Grid search over `p_k in [0, 1]` at `grid` evenly spaced points, keeping
/// the point with the largest surrogate sum among those meeting both floors.
pub fn oracle_power_split(
    gains: (f64, f64),
    cons: &PowerConstraints,
    noise: NoisePower,
    p_t: f64,
    coeffs: &(ScaCoefficients, ScaCoefficients),
    grid: usize,
) -> Result<OracleOutcome> {
    if grid < 100 {
        return Err(invalid("oracle grid needs at least 100 points"));
    }
    if !p_t.is_finite() || p_t <= 0.0 {
        return Err(invalid("oracle needs positive total power"));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut least = (0.5, f64::INFINITY);
    for i in 0..grid {
        let p_k = i as f64 / (grid - 1) as f64;
        let rates = surrogate_rates(gains, p_k, p_t, noise, coeffs);
        let violation = floor_violation(rates, cons.r_min);
        if violation <= 0.0 {
            let objective = rates.0 + rates.1;
            if best.is_none_or(|(_, b)| objective > b) {
                best = Some((p_k, objective));
            }
        } else if violation < least.1 {
            least = (p_k, violation);
        }
    }
    Ok(match best {
        Some((p_k, objective)) => OracleOutcome::Feasible {
            split: PowerSplit::new(p_k, p_t)?,
            objective,
        },
        None => OracleOutcome::Infeasible {
            least_violating: PowerSplit::new(least.0, p_t)?,
            violation: least.1,
        },
    })
}

/// Solves the power subproblem at a fixed phase.
pub fn solve_power(
    problem: &PowerProblem,
    coeffs: &(ScaCoefficients, ScaCoefficients),
    duals_init: DualState,
    settings: &PowerSettings,
) -> Result<PowerSolution> {
    problem.cons.validate()?;
    let cons = &problem.cons;
    let p_t = optimal_total_power(problem.h_eff, cons);
    let gains = (problem.gain_k, problem.gain_j);

    let mut duals = duals_init;
    let mut p_k = 0.5;
    let mut rates = surrogate_rates(gains, p_k, p_t, problem.noise, coeffs);
    let mut iterations = 0;
    for _ in 0..settings.max_dual_iters {
        iterations += 1;
        match closed_form_pk(gains.0, gains.1, &duals, problem.noise, p_t) {
            Ok(raw) if raw.is_finite() => p_k = clamp_share(raw),
            // Equal multipliers: keep the previous split and let the
            // multiplier update separate them.
            Ok(_) | Err(Error::DegenerateDuals(_)) => {}
            Err(e) => return Err(e),
        }
        rates = surrogate_rates(gains, p_k, p_t, problem.noise, coeffs);
        let violation = floor_violation(rates, cons.r_min);
        duals.update(rates, cons.r_min);
        let slackness = (duals.lambda_k * (rates.0 - cons.r_min))
            .abs()
            .max((duals.lambda_j * (rates.1 - cons.r_min)).abs());
        if violation < settings.dual_tol && slackness < settings.dual_tol {
            break;
        }
    }

    let closed = PowerSplit::new(p_k, p_t)?;
    let closed_violation = floor_violation(rates, cons.r_min);
    let closed_ok = closed_violation <= RATE_FLOOR_TOL;
    let closed_objective = if closed_ok {
        rates.0 + rates.1
    } else {
        f64::NEG_INFINITY
    };

    let oracle = oracle_power_split(
        gains,
        cons,
        problem.noise,
        p_t,
        coeffs,
        settings.oracle_grid,
    )?;
    let (split, path, feasible) = match oracle {
        OracleOutcome::Feasible { split, objective } if objective > closed_objective => {
            (split, SolverPath::OracleFallback, true)
        }
        OracleOutcome::Feasible { .. } => (closed, SolverPath::ClosedForm, true),
        OracleOutcome::Infeasible { .. } if closed_ok => (closed, SolverPath::ClosedForm, true),
        OracleOutcome::Infeasible {
            least_violating,
            violation,
        } => {
            if violation < closed_violation {
                (least_violating, SolverPath::OracleFallback, false)
            } else {
                (closed, SolverPath::ClosedForm, false)
            }
        }
    };
    let surrogate = surrogate_rates(gains, split.p_k(), p_t, problem.noise, coeffs);
    // Complementary slackness at the returned split: a floor that is not
    // binding carries no multiplier.
    if feasible {
        if surrogate.0 > cons.r_min + settings.dual_tol {
            duals.lambda_k = 0.0;
        }
        if surrogate.1 > cons.r_min + settings.dual_tol {
            duals.lambda_j = 0.0;
        }
    }
    let feasible = feasible && problem.h_eff * p_t <= cons.i_th + 1e-9 && p_t <= cons.p_max;
    Ok(PowerSolution {
        split,
        duals,
        surrogate_rates: surrogate,
        feasible,
        solver_path: path,
        dual_iterations: iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::sca_coefficients;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(s: f64) -> NoisePower {
        NoisePower::new(s).unwrap()
    }

    fn cons(p_max: f64, i_th: f64, r_min: f64) -> PowerConstraints {
        PowerConstraints::new(p_max, i_th, r_min).unwrap()
    }

    #[test]
    fn total_power_examples() {
        assert_eq!(optimal_total_power(1.0, &cons(1.0, 2.0, 0.1)), 1.0);
        assert_eq!(optimal_total_power(4.0, &cons(1.0, 2.0, 0.1)), 0.5);
        assert_eq!(optimal_total_power(0.0, &cons(3.0, 2.0, 0.1)), 3.0);
    }

    #[test]
    fn closed_form_plug_in_and_clamp() {
        let duals = DualState {
            lambda_k: 2.0,
            lambda_j: 0.0,
            step_size: 0.05,
        };
        let raw = closed_form_pk(1.0, 1.0, &duals, noise(1.0), 1.0).unwrap();
        assert_relative_eq!(raw, -0.5);
        assert_eq!(clamp_share(raw), SHARE_EPS);
    }

    #[test]
    fn closed_form_rejects_equal_duals() {
        let duals = DualState {
            lambda_k: 0.3,
            lambda_j: 0.3,
            step_size: 0.05,
        };
        assert!(matches!(
            closed_form_pk(1.0, 2.0, &duals, noise(1.0), 1.0),
            Err(Error::DegenerateDuals(_))
        ));
    }

    #[test]
    fn closed_form_matches_formula_reevaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let gk: f64 = rng.random_range(0.01..5.0);
            let gj: f64 = rng.random_range(0.01..5.0);
            let lk: f64 = rng.random_range(0.0..3.0);
            let lj: f64 = rng.random_range(0.0..3.0);
            let s2: f64 = rng.random_range(0.1..2.0);
            let pt: f64 = rng.random_range(0.1..5.0);
            let oracle = (gj * gk - gk * lk + gj * lj) * s2 / (gj * gk * (lk - lj) * pt);
            let duals = DualState {
                lambda_k: lk,
                lambda_j: lj,
                step_size: 0.05,
            };
            let value = closed_form_pk(gk, gj, &duals, noise(s2), pt).unwrap();
            assert_relative_eq!(value, oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn oracle_reports_unreachable_floor() {
        // Even with all power on the weak user its exact rate is
        // log2(1 + 1) = 1 < 5.
        let c = cons(1.0, 10.0, 5.0);
        let coeffs = (
            sca_coefficients(1.0).unwrap(),
            sca_coefficients(1.0).unwrap(),
        );
        let out = oracle_power_split((1.0, 1.0), &c, noise(1.0), 1.0, &coeffs, 1000).unwrap();
        assert!(matches!(out, OracleOutcome::Infeasible { .. }));
    }

    #[test]
    fn oracle_grid_is_refinement_stable() {
        let c = cons(1.0, 10.0, 0.0);
        let coeffs = (
            sca_coefficients(30.0).unwrap(),
            sca_coefficients(2.0).unwrap(),
        );
        let obj = |grid| match oracle_power_split((5.0, 1.0), &c, noise(0.1), 1.0, &coeffs, grid)
            .unwrap()
        {
            OracleOutcome::Feasible { objective, .. } => objective,
            OracleOutcome::Infeasible { .. } => panic!("expected feasible"),
        };
        assert!((obj(10_000) - obj(100_000)).abs() < 1e-4);
    }

    #[test]
    fn oracle_matches_enumeration_for_symmetric_users() {
        let c = cons(1.0, 10.0, 0.1);
        let n = noise(0.5);
        let coeffs = (
            sca_coefficients(3.0).unwrap(),
            sca_coefficients(0.7).unwrap(),
        );
        let grid = 2001;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..grid {
            let pk = i as f64 / (grid - 1) as f64;
            let strong = 2.0 * pk * 1.0 / 0.5;
            let weak = 2.0 * (1.0 - pk) / (0.5 + 2.0 * pk);
            let (rk, rj) = (coeffs.0.surrogate(strong), coeffs.1.surrogate(weak));
            if rk >= 0.1 && rj >= 0.1 && rk + rj > best.0 {
                best = (rk + rj, pk);
            }
        }
        match oracle_power_split((2.0, 2.0), &c, n, 1.0, &coeffs, grid).unwrap() {
            OracleOutcome::Feasible { split, objective } => {
                assert_relative_eq!(objective, best.0, epsilon = 1e-12);
                assert_relative_eq!(split.p_k(), best.1, epsilon = 1e-12);
            }
            OracleOutcome::Infeasible { .. } => panic!("expected feasible"),
        }
    }

    #[test]
    fn slack_floors_drive_multipliers_to_zero() {
        let problem = PowerProblem {
            gain_k: 100.0,
            gain_j: 1.0,
            h_eff: 0.1,
            noise: noise(1.0),
            cons: cons(1.0, 2.0, 0.0),
        };
        let coeffs = (
            sca_coefficients(50.0).unwrap(),
            sca_coefficients(0.3).unwrap(),
        );
        let sol = solve_power(
            &problem,
            &coeffs,
            DualState::default(),
            &PowerSettings::default(),
        )
        .unwrap();
        assert!(sol.feasible);
        assert_eq!(sol.duals.lambda_k, 0.0);
        assert_eq!(sol.duals.lambda_j, 0.0);
        assert!(sol.split.p_k() > 0.5);
    }

    #[test]
    fn default_scenario_meets_rate_floor() {
        let problem = PowerProblem {
            gain_k: 4e-5,
            gain_j: 1e-5,
            h_eff: 1.5,
            noise: noise(1e-7),
            cons: cons(1.0, 2.0, 0.1),
        };
        let coeffs = (
            sca_coefficients(200.0).unwrap(),
            sca_coefficients(0.9).unwrap(),
        );
        let sol = solve_power(
            &problem,
            &coeffs,
            DualState::default(),
            &PowerSettings::default(),
        )
        .unwrap();
        assert!(sol.feasible);
        assert!(sol.surrogate_rates.0 >= 0.1 - RATE_FLOOR_TOL);
        assert!(sol.surrogate_rates.1 >= 0.1 - RATE_FLOOR_TOL);
        assert!(problem.h_eff * sol.split.p_total() <= 2.0 + 1e-9);
    }

    #[test]
    fn infeasible_floor_returns_least_violating_split() {
        let problem = PowerProblem {
            gain_k: 1.0,
            gain_j: 1.0,
            h_eff: 0.0,
            noise: noise(1.0),
            cons: cons(1.0, 2.0, 4.0),
        };
        let coeffs = (
            sca_coefficients(1.0).unwrap(),
            sca_coefficients(1.0).unwrap(),
        );
        let sol = solve_power(
            &problem,
            &coeffs,
            DualState::default(),
            &PowerSettings::default(),
        )
        .unwrap();
        assert!(!sol.feasible);
    }

    proptest! {
        #[test]
        fn total_power_is_monotone(
            h in 0.0f64..10.0, p in 0.01f64..10.0, i in 0.01f64..10.0,
            dp in 0.0f64..5.0, di in 0.0f64..5.0,
        ) {
            let base = optimal_total_power(h, &cons(p, i, 0.0));
            prop_assert!(optimal_total_power(h, &cons(p + dp, i, 0.0)) >= base);
            prop_assert!(optimal_total_power(h, &cons(p, i + di, 0.0)) >= base);
        }

        #[test]
        fn multipliers_stay_nonnegative(
            lk in 0.0f64..2.0, lj in 0.0f64..2.0, rk in -5.0f64..5.0, rj in -5.0f64..5.0,
            r_min in 0.0f64..3.0, step in 0.001f64..1.0,
        ) {
            let mut d = DualState { lambda_k: lk, lambda_j: lj, step_size: step };
            d.update((rk, rj), r_min);
            prop_assert!(d.lambda_k >= 0.0 && d.lambda_j >= 0.0);
        }

        #[test]
        fn solutions_satisfy_invariants(
            gk in 1e-6f64..1e-4, ratio in 0.01f64..1.0, h in 0.0f64..5.0,
            p_max in 0.1f64..10.0, r_min in 0.0f64..1.0, gk_hat in 0.1f64..1e3, gj_hat in 0.05f64..10.0,
        ) {
            let problem = PowerProblem {
                gain_k: gk, gain_j: gk * ratio, h_eff: h,
                noise: noise(1e-7), cons: cons(p_max, 2.0, r_min),
            };
            let coeffs = (sca_coefficients(gk_hat).unwrap(), sca_coefficients(gj_hat).unwrap());
            let settings = PowerSettings { oracle_grid: 2000, ..PowerSettings::default() };
            let sol = solve_power(&problem, &coeffs, DualState::default(), &settings).unwrap();
            prop_assert!((sol.split.p_k() + sol.split.p_j() - 1.0).abs() <= 1e-12);
            prop_assert!(sol.split.p_total() <= p_max);
            prop_assert!(h * sol.split.p_total() <= 2.0 + 1e-9);
            if sol.feasible {
                prop_assert!(sol.surrogate_rates.0 >= r_min - RATE_FLOOR_TOL);
                prop_assert!(sol.surrogate_rates.1 >= r_min - RATE_FLOOR_TOL);
            }
        }
    }
}
