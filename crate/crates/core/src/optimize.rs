//! Alternating optimization of the power split and the surface phase.
//!
//! Power shares stay attached to the physical users; which of them is the
//! strong (SIC-decoding) user is re-decided from the current beam at every
//! step. A candidate update is kept only if it does not lower the exact sum
//! rate of a feasible state.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{effective_gain, steering_vector, ChannelVector, GeometryParams, ReceiverId};
use crate::error::{invalid, Error, Result};
use crate::linalg::min_eigenvalue;
use crate::phase::{design_phase, BeamformingVector, PhaseSettings, PhaseSubproblem};
use crate::power::{
    optimal_total_power, solve_power, DualState, PowerConstraints, PowerProblem, PowerSettings,
};
use crate::rate::{exact_rate, sca_coefficients, NoisePower, PowerSplit};

/// SINR floor used when seeding the SCA expansion point.
const GAMMA_FLOOR: f64 = 1e-12;

/// Tolerance on rate floors when classifying an exact state as feasible.
pub const RATE_FEASIBILITY_TOL: f64 = 1e-9;

/// Sum-rate gain below which the power step stops re-expanding.
const POWER_ROUND_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Channel of the user labelled `k` on input; it is not necessarily the
    /// strong user for every beam.
    pub g_k: ChannelVector,
    pub g_j: ChannelVector,
    pub h_l: ChannelVector,
    pub noise: NoisePower,
    pub cons: PowerConstraints,
    pub seed: u64,
    pub sca_outer_cap: usize,
    pub convergence_tol: f64,
    pub dual_step: f64,
    /// Cap on surrogate re-expansions within one power step.
    pub power_rounds: usize,
    pub power: PowerSettings,
    pub phase: PhaseSettings,
}

impl Scenario {
    pub fn new(
        g_k: ChannelVector,
        g_j: ChannelVector,
        h_l: ChannelVector,
        noise: NoisePower,
        cons: PowerConstraints,
        seed: u64,
    ) -> Result<Self> {
        let s = Self {
            g_k,
            g_j,
            h_l,
            noise,
            cons,
            seed,
            sca_outer_cap: 30,
            convergence_tol: 1e-3,
            dual_step: DualState::default().step_size,
            power_rounds: 200,
            power: PowerSettings::default(),
            phase: PhaseSettings::default(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Steering-vector channels for the two users and the primary receiver.
    pub fn from_geometry(
        m_elements: usize,
        geometry: [&GeometryParams; 3],
        noise: NoisePower,
        cons: PowerConstraints,
        seed: u64,
    ) -> Result<Self> {
        let g_k = steering_vector(geometry[0], m_elements, ReceiverId::UserK)?;
        let g_j = steering_vector(geometry[1], m_elements, ReceiverId::UserJ)?;
        let h_l = steering_vector(geometry[2], m_elements, ReceiverId::PrimaryL)?;
        Self::new(g_k, g_j, h_l, noise, cons, seed)
    }

    pub fn m_elements(&self) -> usize {
        self.g_k.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.g_k.len();
        if m == 0 {
            return Err(invalid("scenario needs at least one element"));
        }
        for ch in [&self.g_j, &self.h_l] {
            if ch.len() != m {
                return Err(Error::LengthMismatch {
                    expected: m,
                    actual: ch.len(),
                });
            }
        }
        self.cons.validate()?;
        if self.sca_outer_cap == 0 {
            return Err(invalid("sca_outer_cap must be positive"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(invalid("convergence_tol must be positive"));
        }
        if !(self.dual_step > 0.0) || !self.dual_step.is_finite() {
            return Err(invalid("dual step must be positive"));
        }
        if self.power_rounds == 0 {
            return Err(invalid("power_rounds must be positive"));
        }
        if self.phase.trials == 0 {
            return Err(invalid("randomization trials must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Exact sum rate after this iteration, b/s/Hz.
    pub sum_rate: f64,
    /// Surrogate sum rate reported by the power step.
    pub surrogate_sum: f64,
    /// Share of the strong user.
    pub p_k: f64,
    pub p_t: f64,
    /// `h_eff * P_t` at the primary receiver, W.
    pub interference: f64,
    /// Relaxed objective of the phase step; NaN if it failed.
    pub phase_objective: f64,
    /// Smallest eigenvalue and largest diagonal entry of the relaxed lifted
    /// matrix from the phase step; NaN if it failed.
    pub lifted_min_eigenvalue: f64,
    pub lifted_max_diagonal: f64,
    pub delta: f64,
    pub strong_user: ReceiverId,
    pub power_accepted: bool,
    pub phase_accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindingConstraint {
    StrongRate,
    WeakRate,
    Interference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfeasibilityReport {
    pub binding: BindingConstraint,
    /// Shortfall of the binding constraint (b/s/Hz for rates, W for
    /// interference) at the least-violating state found.
    pub violation: f64,
}

/// Exact evaluation of one `(beam, shares)` state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEval {
    pub strong_user: ReceiverId,
    pub split: PowerSplit,
    pub sinrs: (f64, f64),
    pub rates: (f64, f64),
    pub sum_rate: f64,
    pub gains: (f64, f64),
    pub h_eff: f64,
    pub interference: f64,
}

impl StateEval {
    pub fn rate_violation(&self, r_min: f64) -> f64 {
        (r_min - self.rates.0).max(r_min - self.rates.1).max(0.0)
    }

    pub fn is_feasible(&self, cons: &PowerConstraints) -> bool {
        self.rate_violation(cons.r_min) <= RATE_FEASIBILITY_TOL
            && self.interference <= cons.i_th * (1.0 + 1e-9)
            && self.split.p_total() <= cons.p_max * (1.0 + 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoOutcome {
    pub beam: BeamformingVector,
    /// Share assigned to the scenario's `g_k` user.
    pub share_k_input: f64,
    pub state: StateEval,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    pub trace: Vec<IterationTrace>,
    pub infeasibility: Option<InfeasibilityReport>,
}

/// Evaluates a beam and the share of the scenario's `g_k` user.
pub fn evaluate_state(
    scenario: &Scenario,
    beam: &BeamformingVector,
    share_k_input: f64,
) -> Result<StateEval> {
    let gain_a = effective_gain(&scenario.g_k, beam)?;
    let gain_b = effective_gain(&scenario.g_j, beam)?;
    let h_eff = effective_gain(&scenario.h_l, beam)?;
    let p_t = optimal_total_power(h_eff, &scenario.cons);
    // Ties go to the scenario's `k` user.
    let a_strong = gain_a >= gain_b;
    let (strong_user, gains, p_k) = if a_strong {
        (scenario.g_k.receiver(), (gain_a, gain_b), share_k_input)
    } else {
        (
            scenario.g_j.receiver(),
            (gain_b, gain_a),
            1.0 - share_k_input,
        )
    };
    let split = PowerSplit::new(p_k, p_t)?;
    let s2 = scenario.noise.sigma_sq();
    let gk = gains.0 * split.p_k() * p_t / s2;
    let gj = gains.1 * split.p_j() * p_t / (s2 + gains.1 * split.p_k() * p_t);
    let rates = (exact_rate(gk)?, exact_rate(gj)?);
    Ok(StateEval {
        strong_user,
        split,
        sinrs: (gk, gj),
        rates,
        sum_rate: rates.0 + rates.1,
        gains,
        h_eff,
        interference: h_eff * p_t,
    })
}

fn strong_is_input_k(scenario: &Scenario, eval: &StateEval) -> bool {
    eval.strong_user == scenario.g_k.receiver()
}

/// Keep a candidate if it is feasible and no worse than a feasible incumbent,
/// or, while the incumbent is infeasible, if it violates less.
fn accept(cand: &StateEval, cur: &StateEval, cons: &PowerConstraints) -> bool {
    let cur_ok = cur.is_feasible(cons);
    let cand_ok = cand.is_feasible(cons);
    if cur_ok {
        cand_ok && cand.sum_rate >= cur.sum_rate
    } else {
        cand_ok || cand.rate_violation(cons.r_min) < cur.rate_violation(cons.r_min)
    }
}

fn phase_seed(seed: u64, iteration: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(iteration as u64)
        .rotate_left(17)
}

/// Runs the outer loop from a seeded unit-amplitude beam and an even split.
pub fn alternating_optimize(scenario: &Scenario) -> Result<AoOutcome> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let beam = BeamformingVector::random_unit(scenario.m_elements(), &mut rng)?;
    alternating_optimize_from(scenario, beam, 0.5)
}

pub fn alternating_optimize_from(
    scenario: &Scenario,
    beam0: BeamformingVector,
    share0: f64,
) -> Result<AoOutcome> {
    scenario.validate()?;
    let cons = scenario.cons;
    let mut beam = beam0;
    let mut share = share0;
    let mut cur = evaluate_state(scenario, &beam, share)?;
    let mut duals = DualState {
        step_size: scenario.dual_step,
        ..DualState::default()
    };
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=scenario.sca_outer_cap {
        let prev_sum = cur.sum_rate;

        // Power step: re-expand the surrogate at each accepted split until
        // the split settles.
        let mut surrogate_sum = f64::NAN;
        let mut power_accepted = false;
        for _ in 0..scenario.power_rounds {
            if !(cur.gains.0 > 0.0 && cur.gains.1 > 0.0) {
                break;
            }
            let coeffs = (
                sca_coefficients(cur.sinrs.0.max(GAMMA_FLOOR))?,
                sca_coefficients(cur.sinrs.1.max(GAMMA_FLOOR))?,
            );
            let problem = PowerProblem {
                gain_k: cur.gains.0,
                gain_j: cur.gains.1,
                h_eff: cur.h_eff,
                noise: scenario.noise,
                cons,
            };
            let sol = solve_power(&problem, &coeffs, duals, &scenario.power)?;
            duals = sol.duals;
            let cand_share = if strong_is_input_k(scenario, &cur) {
                sol.split.p_k()
            } else {
                sol.split.p_j()
            };
            let cand = evaluate_state(scenario, &beam, cand_share)?;
            if !accept(&cand, &cur, &cons) {
                break;
            }
            surrogate_sum = sol.surrogate_sum();
            let moved = (cand_share - share).abs();
            let gained = cand.sum_rate - cur.sum_rate;
            share = cand_share;
            cur = cand;
            power_accepted = true;
            if moved < 1e-9 || (cur.is_feasible(&cons) && gained < POWER_ROUND_TOL) {
                break;
            }
        }

        // Phase step with the strong user first.
        let (gs, gw) = if strong_is_input_k(scenario, &cur) {
            (&scenario.g_k, &scenario.g_j)
        } else {
            (&scenario.g_j, &scenario.g_k)
        };
        let phi_now = beam.elements() * beam.elements().adjoint();
        let mut phase_objective = f64::NAN;
        let mut lifted_min_eigenvalue = f64::NAN;
        let mut lifted_max_diagonal = f64::NAN;
        let mut phase_accepted = false;
        let sub = PhaseSubproblem::from_channels(
            gs,
            gw,
            &scenario.h_l,
            cur.split,
            scenario.noise,
            cons,
            &phi_now,
        )?;
        match design_phase(&sub, &scenario.phase, phase_seed(scenario.seed, iteration)) {
            Ok(sol) => {
                phase_objective = sol.objective_value;
                let lifted = sol.lifted.matrix();
                lifted_min_eigenvalue = min_eigenvalue(lifted);
                lifted_max_diagonal = (0..lifted.nrows())
                    .map(|i| lifted[(i, i)].re)
                    .fold(f64::NEG_INFINITY, f64::max);
                let cand = evaluate_state(scenario, &sol.beam, share)?;
                if accept(&cand, &cur, &cons) {
                    beam = sol.beam;
                    cur = cand;
                    phase_accepted = true;
                }
            }
            Err(
                Error::Infeasible { .. } | Error::ExtractionFailure { .. } | Error::Numerical(_),
            ) => {}
            Err(e) => return Err(e),
        }

        let delta = cur.sum_rate - prev_sum;
        trace.push(IterationTrace {
            iteration,
            sum_rate: cur.sum_rate,
            surrogate_sum,
            p_k: cur.split.p_k(),
            p_t: cur.split.p_total(),
            interference: cur.interference,
            phase_objective,
            lifted_min_eigenvalue,
            lifted_max_diagonal,
            delta,
            strong_user: cur.strong_user,
            power_accepted,
            phase_accepted,
        });
        if delta.abs() < scenario.convergence_tol && cur.is_feasible(&cons) {
            converged = true;
            break;
        }
    }

    let feasible = cur.is_feasible(&cons);
    let infeasibility = (!feasible).then(|| {
        let rk = cons.r_min - cur.rates.0;
        let rj = cons.r_min - cur.rates.1;
        let over = cur.interference - cons.i_th;
        if over > 0.0 && over / cons.i_th > rk.max(rj) {
            InfeasibilityReport {
                binding: BindingConstraint::Interference,
                violation: over,
            }
        } else if rk >= rj {
            InfeasibilityReport {
                binding: BindingConstraint::StrongRate,
                violation: rk,
            }
        } else {
            InfeasibilityReport {
                binding: BindingConstraint::WeakRate,
                violation: rj,
            }
        }
    });
    Ok(AoOutcome {
        beam,
        share_k_input: share,
        iterations: trace.len(),
        state: cur,
        converged,
        feasible,
        trace,
        infeasibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geom(theta: f64, phi: f64, gain: f64) -> GeometryParams {
        GeometryParams {
            vertical_aod_rad: theta,
            horizontal_aod_rad: phi,
            path_gain: gain,
            ..GeometryParams::default()
        }
    }

    fn scenario(m: usize, r_min: f64, seed: u64) -> Scenario {
        Scenario::from_geometry(
            m,
            [
                &geom(0.4, 0.3, 1e-3),
                &geom(1.1, 2.0, 5e-4),
                &geom(0.8, 4.0, 0.3),
            ],
            NoisePower::new(1e-7).unwrap(),
            PowerConstraints::new(1.0, 2.0, r_min).unwrap(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn trace_is_monotone_and_feasible() {
        let s = scenario(6, 0.1, 4);
        let out = alternating_optimize(&s).unwrap();
        assert!(out.feasible);
        for w in out.trace.windows(2) {
            assert!(w[1].sum_rate >= w[0].sum_rate - 1e-12);
        }
        for t in &out.trace {
            assert!(t.interference <= s.cons.i_th + 1e-6);
            assert!(t.p_t <= s.cons.p_max);
        }
        assert!(out.beam.amplitudes().iter().all(|&a| a <= 1.0 + 1e-9));
    }

    #[test]
    fn runs_are_deterministic() {
        let s = scenario(5, 0.1, 11);
        assert_eq!(
            alternating_optimize(&s).unwrap(),
            alternating_optimize(&s).unwrap()
        );
    }

    #[test]
    fn unreachable_floor_reports_binding_rate() {
        let s = scenario(4, 40.0, 1);
        let out = alternating_optimize(&s).unwrap();
        assert!(!out.feasible);
        let report = out.infeasibility.unwrap();
        assert!(matches!(
            report.binding,
            BindingConstraint::StrongRate | BindingConstraint::WeakRate
        ));
        assert!(report.violation > 0.0);
    }

    #[test]
    fn tie_goes_to_input_k() {
        let s = scenario(3, 0.0, 2);
        let mut s2 = s.clone();
        s2.g_j = ChannelVector::new(s.g_k.gains().clone(), ReceiverId::UserJ).unwrap();
        let beam = BeamformingVector::from_phases(&[0.0, 1.0, 2.0]).unwrap();
        let e = evaluate_state(&s2, &beam, 0.3).unwrap();
        assert_eq!(e.strong_user, ReceiverId::UserK);
        assert_relative_eq!(e.split.p_k(), 0.3);
    }
}
