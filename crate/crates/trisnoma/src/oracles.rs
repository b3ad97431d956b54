//! Brute-force reference solutions and seeded instance generators.
//!
//! Each oracle recomputes its quantity from the model formulas with its own
//! code path and searches exhaustively, so agreement with the solvers is an
//! independent check rather than a restatement.

use std::f64::consts::{LN_2, TAU};

use trisnoma_core::C64 as Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trisnoma_core::channel::{steering_vector, ChannelVector, GeometryParams, ReceiverId};
use trisnoma_core::conic::{ConicProblem, Sense};
use trisnoma_core::phase::{BeamformingVector, PhaseSubproblem};
use trisnoma_core::power::{optimal_total_power, DualState, PowerConstraints, PowerProblem};
use trisnoma_core::rate::{sca_coefficients, surrogate_rate, NoisePower, PowerSplit, ScaCoefficients};
use trisnoma_core::{CMat, CVec};

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaGridReport {
    pub points: usize,
    /// Largest `|surrogate(g, g) - log2(1 + g)|`.
    pub max_tightness_error: f64,
    /// Largest `surrogate(g_hat, g) - log2(1 + g)` over all pairs.
    pub max_minorant_excess: f64,
}

/// Tightness and lower-bound checks of the SCA surrogate over all pairs of a
/// log-spaced grid on `[1e-4, 1e4]`.
pub fn sca_grid(points: usize) -> ScaGridReport {
    let grid: Vec<f64> = (0..points)
        .map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / (points - 1).max(1) as f64))
        .collect();
    let exact = |g: f64| g.ln_1p() / LN_2;
    let mut tight = 0.0f64;
    let mut excess = f64::NEG_INFINITY;
    for &hat in &grid {
        let c = sca_coefficients(hat).expect("grid point is positive");
        let at = surrogate_rate(&c, hat).expect("grid point is positive");
        tight = tight.max((at - exact(hat)).abs());
        for &g in &grid {
            let s = surrogate_rate(&c, g).expect("grid point is positive");
            excess = excess.max(s - exact(g));
        }
    }
    ScaGridReport {
        points,
        max_tightness_error: tight,
        max_minorant_excess: excess,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerInstance {
    pub problem: PowerProblem,
    pub coeffs: (ScaCoefficients, ScaCoefficients),
    pub duals: DualState,
}

/// Random gains, multipliers, limits and expansion points.
pub fn power_instance(seed: u64) -> PowerInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = log_uniform(&mut rng, 1e-8, 1e-4);
    let b = log_uniform(&mut rng, 1e-8, 1e-4);
    let sigma_sq = log_uniform(&mut rng, 1e-8, 1e-6);
    let cons = PowerConstraints::new(
        log_uniform(&mut rng, 0.1, 10.0),
        rng.random_range(0.5..5.0),
        rng.random_range(0.0..1.0),
    )
    .expect("ranges are valid");
    let problem = PowerProblem {
        gain_k: a.max(b),
        gain_j: a.min(b),
        h_eff: rng.random_range(0.0..2.0),
        noise: NoisePower::new(sigma_sq).expect("positive"),
        cons,
    };
    let coeffs = (
        sca_coefficients(log_uniform(&mut rng, 1e-2, 1e4)).expect("positive"),
        sca_coefficients(log_uniform(&mut rng, 1e-2, 1e4)).expect("positive"),
    );
    let duals = DualState {
        lambda_k: rng.random_range(0.0..2.0),
        lambda_j: rng.random_range(0.0..2.0),
        step_size: rng.random_range(0.01..0.5),
    };
    PowerInstance {
        problem,
        coeffs,
        duals,
    }
}

/// Surrogate rates of share `p` written out from the SINR definitions.
pub fn power_objective(inst: &PowerInstance, p: f64) -> (f64, f64) {
    let pr = &inst.problem;
    let p_t = if pr.h_eff > 0.0 {
        (pr.cons.i_th / pr.h_eff).min(pr.cons.p_max)
    } else {
        pr.cons.p_max
    };
    let s2 = pr.noise.sigma_sq();
    let strong = pr.gain_k * p * p_t / s2;
    let weak = pr.gain_j * (1.0 - p) * p_t / (s2 + pr.gain_j * p * p_t);
    let sur = |c: &ScaCoefficients, g: f64| c.alpha() * g.log2() + c.beta();
    (sur(&inst.coeffs.0, strong), sur(&inst.coeffs.1, weak))
}

/// Best surrogate sum over `grid` evenly spaced shares meeting both floors.
pub fn power_grid_oracle(inst: &PowerInstance, grid: usize) -> Option<(f64, f64)> {
    let r_min = inst.problem.cons.r_min;
    (0..grid)
        .map(|i| i as f64 / (grid - 1) as f64)
        .filter_map(|p| {
            let (a, b) = power_objective(inst, p);
            (a >= r_min && b >= r_min && (a + b).is_finite()).then_some((p, a + b))
        })
        .max_by(|x, y| x.1.total_cmp(&y.1))
}

/// Total power the instance should use.
pub fn power_total(inst: &PowerInstance) -> f64 {
    optimal_total_power(inst.problem.h_eff, &inst.problem.cons)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

fn outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// Random two-element instance of the solver's problem class. Odd seeds
/// carry the scalar variable in the same pattern as the phase problem.
pub fn conic_instance(seed: u64) -> ConicProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2;
    let a1 = outer(&random_vec(&mut rng, n));
    let a2 = outer(&random_vec(&mut rng, n));
    let b = outer(&random_vec(&mut rng, n));
    let ones = CMat::identity(n, n);
    let frac = rng.random_range(0.2..0.8);
    let b_bound = frac * trace(&b, &ones);
    let mut p = ConicProblem::new(n)
        .log_term(rng.random_range(0.5..1.5), a1, rng.random_range(0.05..0.5))
        .constraint(b, 0.0, Sense::Le, b_bound);
    if seed % 2 == 1 {
        let kappa = rng.random_range(0.2..1.0);
        p = p
            .log_term(1.0, a2.clone(), 1.0)
            .linear(CMat::zeros(n, n), -kappa / LN_2, 0.0)
            .constraint(a2.scale(0.5), -1.0, Sense::Le, -1.0);
    } else {
        let pen = outer(&random_vec(&mut rng, n)).scale(-rng.random_range(0.0..0.5));
        let c = outer(&random_vec(&mut rng, n));
        let c_bound = 0.1 * trace(&c, &ones);
        p = p
            .log_term(rng.random_range(0.5..1.5), a2, rng.random_range(0.05..0.5))
            .linear(pen, 0.0, 0.0)
            .constraint(c, 0.0, Sense::Ge, c_bound);
    }
    p
}

fn trace(a: &CMat, b: &CMat) -> f64 {
    (a * b).trace().re
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    /// Best feasible objective found by direct search (a lower bound).
    pub value: f64,
    pub phi: CMat,
    pub lambda: f64,
    /// Lagrangian dual bound (an upper bound on the optimum).
    pub upper: f64,
}

fn best_lambda(p: &ConicProblem, phi: &CMat) -> Option<f64> {
    if !p.uses_lambda {
        return Some(0.0);
    }
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for c in &p.constraints {
        if c.lambda == 0.0 {
            continue;
        }
        // slack(L) = slack(0) + s * L with s the signed coefficient.
        let s0 = c.slack(phi, 0.0);
        let s = c.slack(phi, 1.0) - s0;
        let edge = -s0 / s;
        if s > 0.0 {
            lo = lo.max(edge);
        } else {
            hi = hi.min(edge);
        }
    }
    if lo > hi {
        return None;
    }
    let l = if p.linear_lambda < 0.0 { lo } else { hi };
    l.is_finite().then_some(l)
}

fn point_value(p: &ConicProblem, x: [f64; 4]) -> Option<(f64, CMat, f64)> {
    let phi = polar_phi(x);
    let lam = best_lambda(p, &phi)?;
    if p.constraints.iter().any(|c| c.slack(&phi, lam) < -1e-12) {
        return None;
    }
    let v = p.objective(&phi, lam);
    v.is_finite().then_some((v, phi, lam))
}

/// Dense search over `(Phi_11, Phi_22, |rho|, arg rho)` with
/// `Phi_12 = rho sqrt(Phi_11 Phi_22)`, which covers exactly the 2x2 PSD
/// matrices under the diagonal cap, followed by compass refinement of the
/// best grid cells.
fn polar_phi(x: [f64; 4]) -> CMat {
    let [a, b, r, th] = x;
    let off = Complex64::from_polar(r * (a * b).sqrt(), th);
    CMat::from_row_slice(2, 2, &[Complex64::new(a, 0.0), off, off.conj(), Complex64::new(b, 0.0)])
}

fn polar_grid(cap: f64, (na, nr, nt): (usize, usize, usize)) -> Vec<[f64; 4]> {
    let mut pts = Vec::with_capacity(na * na * nr * nt);
    for i in 0..na {
        for j in 0..na {
            for k in 0..nr {
                for l in 0..nt {
                    pts.push([
                        cap * i as f64 / (na - 1) as f64,
                        cap * j as f64 / (na - 1) as f64,
                        k as f64 / (nr - 1) as f64,
                        TAU * l as f64 / nt as f64,
                    ]);
                }
            }
        }
    }
    pts
}

/// Maximizes `f` over the box `[0, cap]^2 x [0, 1] x R` of polar
/// coordinates by polling the axes and random directions, halving the step
/// when no poll point improves.
fn pattern_search(
    f: &dyn Fn([f64; 4]) -> Option<f64>,
    start: (f64, [f64; 4]),
    cap: f64,
    rng: &mut ChaCha8Rng,
) -> (f64, [f64; 4]) {
    let (mut v, mut x) = start;
    let scale = [cap, cap, 1.0, TAU];
    let mut step = 1.0 / 25.0;
    while step > 1e-11 {
        let mut moved = false;
        for k in 0..40 {
            let mut e = [0.0; 4];
            if k < 8 {
                e[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            } else {
                for c in &mut e {
                    *c = rng.random_range(-1.0..1.0);
                }
                let n = e.iter().map(|c| c * c).sum::<f64>().sqrt();
                e = e.map(|c| c / n);
            }
            let mut y = [0, 1, 2, 3].map(|i| x[i] + step * scale[i] * e[i]);
            y[0] = y[0].clamp(0.0, cap);
            y[1] = y[1].clamp(0.0, cap);
            y[2] = y[2].clamp(0.0, 1.0);
            if let Some(w) = f(y) {
                if w > v {
                    v = w;
                    x = y;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (v, x)
}

/// Grid scan followed by pattern search from the best cells and from `extra`.
fn box_maximize(
    f: &dyn Fn([f64; 4]) -> Option<f64>,
    cap: f64,
    grid: (usize, usize, usize),
    top: usize,
    extra: &[[f64; 4]],
    rng: &mut ChaCha8Rng,
) -> Option<(f64, [f64; 4])> {
    let mut cells: Vec<(f64, [f64; 4])> = polar_grid(cap, grid)
        .into_iter()
        .chain(extra.iter().copied())
        .filter_map(|x| f(x).map(|v| (v, x)))
        .collect();
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut starts: Vec<(f64, [f64; 4])> = cells.iter().take(top).copied().collect();
    starts.extend(extra.iter().filter_map(|&x| f(x).map(|v| (v, x))));
    starts
        .into_iter()
        .map(|s| pattern_search(f, s, cap, rng))
        .max_by(|a, b| a.0.total_cmp(&b.0))
}

/// Upper bound from weak duality: for multipliers `mu >= 0` that cancel the
/// `Lambda` coefficient, `sup_Phi f(Phi) + sum mu_i slack_i(Phi)` over the
/// PSD box bounds the constrained optimum. The convex dual function is
/// minimized by a pattern search over the free multipliers.
fn conic_dual_bound(p: &ConicProblem, rng: &mut ChaCha8Rng) -> Option<f64> {
    let cap = p.diag_cap;
    // Coefficient of Lambda in each slack.
    let sigma: Vec<f64> = p
        .constraints
        .iter()
        .map(|c| c.slack(&CMat::zeros(2, 2), 1.0) - c.slack(&CMat::zeros(2, 2), 0.0))
        .collect();
    let coupled: Vec<usize> = (0..sigma.len()).filter(|&i| sigma[i] != 0.0).collect();
    let mut fixed = vec![None; sigma.len()];
    if p.uses_lambda {
        // Only the single-coupling case has a closed-form multiplier.
        let [i] = coupled[..] else { return None };
        let mu = -p.linear_lambda / sigma[i];
        if mu < 0.0 {
            return None;
        }
        fixed[i] = Some(mu);
    }
    let free: Vec<usize> = (0..sigma.len()).filter(|&i| fixed[i].is_none()).collect();
    let mut warm: Vec<[f64; 4]> = Vec::new();
    let mut dual = |m: &[f64]| -> f64 {
        let mu: Vec<f64> = (0..sigma.len())
            .map(|i| fixed[i].unwrap_or_else(|| m[free.iter().position(|&j| j == i).unwrap()]))
            .collect();
        let lagrangian = |x: [f64; 4]| -> Option<f64> {
            let phi = polar_phi(x);
            let mut v = p.objective(&phi, 0.0);
            for (c, w) in p.constraints.iter().zip(&mu) {
                v += w * c.slack(&phi, 0.0);
            }
            v.is_finite().then_some(v)
        };
        let (v, x) = box_maximize(&lagrangian, cap, (13, 6, 12), 3, &warm, rng)
            .unwrap_or((f64::INFINITY, [0.0; 4]));
        warm = vec![x];
        v
    };
    let mut m = vec![0.0; free.len()];
    let mut g = dual(&m);
    if free.is_empty() {
        return Some(g);
    }
    let mut step = 1.0;
    let mut dir_rng = ChaCha8Rng::seed_from_u64(0x6475_616c);
    while step > 1e-9 {
        let mut moved = false;
        for k in 0..(2 * free.len() + 4) {
            let e: Vec<f64> = if k < 2 * free.len() {
                (0..free.len())
                    .map(|i| if i == k / 2 { if k % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 })
                    .collect()
            } else {
                (0..free.len()).map(|_| dir_rng.random_range(-1.0..1.0)).collect()
            };
            let y: Vec<f64> = m.iter().zip(&e).map(|(a, b)| (a + step * b).max(0.0)).collect();
            let w = dual(&y);
            if w < g {
                g = w;
                m = y;
                moved = true;
            }
        }
        step *= if moved { 2.0 } else { 0.5 };
    }
    Some(g)
}

pub fn conic_grid_oracle(p: &ConicProblem) -> Option<GridOptimum> {
    assert_eq!(p.dim, 2, "grid oracle covers two-element problems");
    let cap = p.diag_cap;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6f72_6163);
    let primal = |x: [f64; 4]| point_value(p, x).map(|(v, _, _)| v);
    let (_, x) = box_maximize(&primal, cap, (26, 11, 24), 16, &[], &mut rng)?;
    let (value, phi, lambda) = point_value(p, x)?;
    let upper = conic_dual_bound(p, &mut rng)?;
    Some(GridOptimum {
        value,
        phi,
        lambda,
        upper,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseInstance {
    pub g_k: ChannelVector,
    pub g_j: ChannelVector,
    pub h_l: ChannelVector,
    pub split: PowerSplit,
    pub noise: NoisePower,
    pub cons: PowerConstraints,
    pub sub: PhaseSubproblem,
}

/// Three-element instance with random angles, shares and total power,
/// expanded at a random unit beam.
pub fn phase_instance(seed: u64) -> PhaseInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ch = |gain: f64, id: ReceiverId| {
        let g = GeometryParams {
            vertical_aod_rad: rng.random_range(0.0..std::f64::consts::FRAC_PI_2),
            horizontal_aod_rad: rng.random_range(0.0..TAU),
            path_gain: gain,
            ..GeometryParams::default()
        };
        steering_vector(&g, 3, id).expect("valid geometry")
    };
    let g_k = ch(1e-3, ReceiverId::UserK);
    let g_j = ch(5e-4, ReceiverId::UserJ);
    let h_l = ch(0.3, ReceiverId::PrimaryL);
    let split = PowerSplit::new(rng.random_range(0.6..0.9), rng.random_range(1.0..5.0)).expect("valid split");
    let noise = NoisePower::new(1e-7).expect("positive");
    let cons = PowerConstraints::new(5.0, 2.0, 0.1).expect("valid limits");
    let beam = BeamformingVector::random_unit(3, &mut rng).expect("valid beam");
    let phi = beam.elements() * beam.elements().adjoint();
    let sub = PhaseSubproblem::from_channels(&g_k, &g_j, &h_l, split, noise, cons, &phi)
        .expect("valid subproblem");
    PhaseInstance {
        g_k,
        g_j,
        h_l,
        split,
        noise,
        cons,
        sub,
    }
}

fn inner_gain(g: &ChannelVector, beam: &[Complex64]) -> f64 {
    g.gains()
        .iter()
        .zip(beam)
        .map(|(a, b)| a * b)
        .sum::<Complex64>()
        .norm_sqr()
}

/// Exact sum rate of `beam` with the instance's fixed labels and powers, or
/// `None` if the beam misses a rate floor or the interference cap.
pub fn phase_rate(inst: &PhaseInstance, beam: &[Complex64]) -> Option<f64> {
    let s2 = inst.noise.sigma_sq();
    let pt = inst.split.p_total();
    let (pk, pj) = (inst.split.p_k(), inst.split.p_j());
    let gk = inner_gain(&inst.g_k, beam);
    let gj = inner_gain(&inst.g_j, beam);
    let hl = inner_gain(&inst.h_l, beam);
    let rk = (gk * pk * pt / s2).ln_1p() / LN_2;
    let rj = (gj * pj * pt / (s2 + gj * pk * pt)).ln_1p() / LN_2;
    let floor = inst.cons.r_min - 1e-9;
    (rk >= floor && rj >= floor && hl * pt <= inst.cons.i_th * (1.0 + 1e-9)).then_some(rk + rj)
}

/// Best feasible unit-amplitude beam with phases on `levels` equally spaced
/// values, by exhaustive enumeration.
pub fn enumerate_phases(inst: &PhaseInstance, levels: usize) -> Option<(Vec<Complex64>, f64)> {
    let m = inst.g_k.len();
    let total = levels.pow(m as u32);
    let mut best: Option<(Vec<Complex64>, f64)> = None;
    for code in 0..total {
        let mut c = code;
        let beam: Vec<Complex64> = (0..m)
            .map(|_| {
                let q = c % levels;
                c /= levels;
                Complex64::from_polar(1.0, TAU * q as f64 / levels as f64)
            })
            .collect();
        if let Some(r) = phase_rate(inst, &beam) {
            if best.as_ref().is_none_or(|(_, b)| r > *b) {
                best = Some((beam, r));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_oracle_finds_the_scalar_corner() {
        // Diagonal objective and cap: the optimum is the identity.
        let p = ConicProblem::new(2).log_term(1.0, CMat::identity(2, 2), 1.0);
        let g = conic_grid_oracle(&p).unwrap();
        assert!((g.value - 3f64.log2()).abs() < 1e-9);
        assert!((g.upper - 3f64.log2()).abs() < 1e-9);
    }

    #[test]
    fn dual_bound_brackets_the_search() {
        for seed in [1, 2] {
            let g = conic_grid_oracle(&conic_instance(seed)).unwrap();
            assert!(g.upper >= g.value - 1e-12, "{g:?}");
        }
    }

    #[test]
    fn best_lambda_takes_the_tight_lower_bound() {
        let p = ConicProblem::new(2)
            .linear(CMat::zeros(2, 2), -1.0, 0.0)
            .constraint(CMat::identity(2, 2), -1.0, Sense::Le, -1.0);
        // tr(Phi) - L <= -1  =>  L >= tr(Phi) + 1.
        assert_eq!(best_lambda(&p, &CMat::identity(2, 2)), Some(3.0));
    }

    #[test]
    fn enumeration_counts_every_code() {
        let inst = phase_instance(1);
        let (beam, rate) = enumerate_phases(&inst, 4).unwrap();
        assert_eq!(beam.len(), 3);
        assert_eq!(phase_rate(&inst, &beam), Some(rate));
    }

    #[test]
    fn power_oracle_respects_floors() {
        let inst = power_instance(3);
        if let Some((p, _)) = power_grid_oracle(&inst, 1000) {
            let (a, b) = power_objective(&inst, p);
            assert!(a >= inst.problem.cons.r_min && b >= inst.problem.cons.r_min);
        }
    }

    #[test]
    fn sca_grid_is_tight_and_below() {
        let r = sca_grid(41);
        assert!(r.max_tightness_error < 1e-10);
        assert!(r.max_minorant_excess < 1e-10);
    }
}
