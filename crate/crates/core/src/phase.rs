//! Surface phase design for fixed powers.
//!
//! The beam is lifted to `Phi = phi phi^H`, the rank constraint is dropped,
//! and the interference logarithm in the weak user's rate is replaced by its
//! tangent at the previous iterate. The resulting concave problem is handed to
//! [`crate::conic`]; the tangent is re-expanded until the exact lifted
//! objective stops improving. A beam is then recovered from `Phi` by Gaussian
//! randomization.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
// Float math for toolchains whose `core` has no inherent methods.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::channel::ChannelVector;
use crate::conic::{self, BarrierSettings, ConicProblem, Sense, SolveReport, SolveStatus};
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    eigh_desc, herm_inner, is_hermitian, min_eigenvalue, quad_form, CMat, CVec, C64,
};
use crate::power::PowerConstraints;
use crate::rate::{NoisePower, PowerSplit};

const LN2: f64 = core::f64::consts::LN_2;
const TAU: f64 = core::f64::consts::TAU;

/// Per-element surface coefficients `eta_m exp(i phi_m)` with `eta_m <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingVector {
    elements: CVec,
}

impl BeamformingVector {
    pub const AMPLITUDE_TOL: f64 = 1e-9;

    pub fn new(elements: CVec) -> Result<Self> {
        if elements.is_empty() {
            return Err(invalid("beam must have at least one element"));
        }
        for z in elements.iter() {
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(invalid("beam has non-finite entries"));
            }
            if z.norm() > 1.0 + Self::AMPLITUDE_TOL {
                return Err(invalid("beam element amplitude exceeds 1"));
            }
        }
        Ok(Self { elements })
    }

    /// Unit-amplitude beam with the given phases.
    pub fn from_phases(phases: &[f64]) -> Result<Self> {
        Self::new(CVec::from_iterator(
            phases.len(),
            phases.iter().map(|&p| C64::from_polar(1.0, p)),
        ))
    }

    /// Unit-amplitude beam with phases uniform on `[0, 2 pi)`.
    pub fn random_unit<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Self> {
        let dist = Uniform::new(0.0, TAU).map_err(|_| invalid("bad phase range"))?;
        let phases: Vec<f64> = (0..m).map(|_| dist.sample(rng)).collect();
        Self::from_phases(&phases)
    }

    pub fn elements(&self) -> &CVec {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.elements.iter().map(|z| z.norm()).collect()
    }

    /// Phases mapped into `[0, 2 pi)`.
    pub fn phases(&self) -> Vec<f64> {
        self.elements
            .iter()
            .map(|z| {
                let a = z.arg();
                let a = if a < 0.0 { a + TAU } else { a };
                if a >= TAU {
                    0.0
                } else {
                    a
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftedSource {
    Solver,
    OuterProduct,
}

/// Hermitian PSD matrix standing in for `phi phi^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMatrix {
    matrix: CMat,
    source: LiftedSource,
}

impl LiftedMatrix {
    pub const HERMITIAN_TOL: f64 = 1e-9;
    pub const PSD_TOL: f64 = 1e-7;
    pub const DIAG_TOL: f64 = 1e-7;

    /// Validates Hermitian symmetry, semidefiniteness and the unit diagonal
    /// cap.
    pub fn new(matrix: CMat, source: LiftedSource) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(invalid("lifted matrix must be square and nonempty"));
        }
        if !is_hermitian(&matrix, Self::HERMITIAN_TOL) {
            return Err(invalid("lifted matrix is not Hermitian"));
        }
        if min_eigenvalue(&matrix) < -Self::PSD_TOL {
            return Err(invalid("lifted matrix is not positive semidefinite"));
        }
        if (0..matrix.nrows()).any(|m| matrix[(m, m)].re > 1.0 + Self::DIAG_TOL) {
            return Err(invalid("lifted matrix diagonal exceeds 1"));
        }
        Ok(Self { matrix, source })
    }

    pub fn from_beam(beam: &BeamformingVector) -> Self {
        let v = beam.elements();
        Self {
            matrix: v * v.adjoint(),
            source: LiftedSource::OuterProduct,
        }
    }

    pub(crate) fn with_source(matrix: CMat, source: LiftedSource) -> Self {
        Self { matrix, source }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn source(&self) -> LiftedSource {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Lifts a channel so that `tr(lift(g) phi phi^H) = |sum_m g_m phi_m|^2`,
/// i.e. the outer product of the conjugated gains.
pub fn lift_channel(g: &ChannelVector) -> CMat {
    let c = g.gains().map(|z| z.conj());
    &c * c.adjoint()
}

/// Data of one phase-design subproblem. `g_k` is the strong user.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSubproblem {
    g_k: CMat,
    g_j: CMat,
    h_l: CMat,
    split: PowerSplit,
    noise: NoisePower,
    cons: PowerConstraints,
    lambda_bar: f64,
}

impl PhaseSubproblem {
    pub fn new(
        g_k: CMat,
        g_j: CMat,
        h_l: CMat,
        split: PowerSplit,
        noise: NoisePower,
        cons: PowerConstraints,
        lambda_bar: f64,
    ) -> Result<Self> {
        let m = g_k.nrows();
        for (mat, name) in [(&g_k, "G_k"), (&g_j, "G_j"), (&h_l, "H_l")] {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::LengthMismatch {
                    expected: m,
                    actual: mat.nrows(),
                });
            }
            let scale = mat.iter().map(|z| z.norm()).fold(1e-300, f64::max);
            if !is_hermitian(mat, 1e-9 * scale) {
                return Err(invalid(alloc::format!("{name} is not Hermitian")));
            }
        }
        if m == 0 {
            return Err(invalid("subproblem dimension must be positive"));
        }
        cons.validate()?;
        let sub = Self {
            g_k,
            g_j,
            h_l,
            split,
            noise,
            cons,
            lambda_bar: noise.sigma_sq(),
        };
        sub.with_lambda_bar(lambda_bar)
    }

    /// Builds the subproblem from channel vectors, expanding the interference
    /// term at `phi_at`.
    pub fn from_channels(
        g_k: &ChannelVector,
        g_j: &ChannelVector,
        h_l: &ChannelVector,
        split: PowerSplit,
        noise: NoisePower,
        cons: PowerConstraints,
        phi_at: &CMat,
    ) -> Result<Self> {
        let gj = lift_channel(g_j);
        let lambda_bar = interference_level(&gj, phi_at, &split, noise);
        Self::new(
            lift_channel(g_k),
            gj,
            lift_channel(h_l),
            split,
            noise,
            cons,
            lambda_bar,
        )
    }

    pub fn with_lambda_bar(mut self, lambda_bar: f64) -> Result<Self> {
        if !(lambda_bar > 0.0) || !lambda_bar.is_finite() {
            return Err(invalid("lambda_bar must be positive and finite"));
        }
        if lambda_bar < self.noise.sigma_sq() * (1.0 - 1e-12) {
            return Err(invalid("lambda_bar must be at least the noise power"));
        }
        self.lambda_bar = lambda_bar;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.g_k.nrows()
    }

    pub fn g_k(&self) -> &CMat {
        &self.g_k
    }

    pub fn g_j(&self) -> &CMat {
        &self.g_j
    }

    pub fn h_l(&self) -> &CMat {
        &self.h_l
    }

    pub fn split(&self) -> &PowerSplit {
        &self.split
    }

    pub fn noise(&self) -> NoisePower {
        self.noise
    }

    pub fn cons(&self) -> &PowerConstraints {
        &self.cons
    }

    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    /// Exact lifted sum rate `log2(1+gamma_k) + log2(1+gamma_j)`.
    pub fn exact_objective(&self, phi: &CMat) -> f64 {
        let (gk, gj) = lifted_sinrs(self, phi);
        gk.max(0.0).ln_1p() / LN2 + gj.max(0.0).ln_1p() / LN2
    }

    /// Exact SINRs and interference power `tr(H_l Phi) P_t` for a beam.
    fn beam_metrics(&self, beam: &CVec) -> (f64, f64, f64) {
        let tk = quad_form(&self.g_k, beam).max(0.0);
        let tj = quad_form(&self.g_j, beam).max(0.0);
        let th = quad_form(&self.h_l, beam).max(0.0);
        let (gk, gj) = sinrs_from_traces(self, tk, tj);
        (gk, gj, th * self.split.p_total())
    }

    /// Strong-rate, weak-rate and interference shortfalls of a beam (zero
    /// where satisfied).
    pub fn violations(&self, beam: &CVec) -> [f64; 3] {
        let (gk, gj, interference) = self.beam_metrics(beam);
        let r_min = self.cons.r_min;
        [
            (r_min - gk.ln_1p() / LN2).max(0.0),
            (r_min - gj.ln_1p() / LN2).max(0.0),
            (interference - self.cons.i_th).max(0.0),
        ]
    }
}

fn interference_level(g_j: &CMat, phi: &CMat, split: &PowerSplit, noise: NoisePower) -> f64 {
    noise.sigma_sq() + herm_inner(g_j, phi).max(0.0) * split.p_k() * split.p_total()
}

fn sinrs_from_traces(sub: &PhaseSubproblem, tk: f64, tj: f64) -> (f64, f64) {
    let s2 = sub.noise.sigma_sq();
    let pt = sub.split.p_total();
    let gk = tk * sub.split.p_k() * pt / s2;
    let gj = tj * sub.split.p_j() * pt / (s2 + tj * sub.split.p_k() * pt);
    (gk, gj)
}

/// `(tr(G_k Phi) p_k P_t / s2, tr(G_j Phi) p_j P_t / (s2 + tr(G_j Phi) p_k P_t))`.
pub fn lifted_sinrs(sub: &PhaseSubproblem, phi: &CMat) -> (f64, f64) {
    sinrs_from_traces(sub, herm_inner(&sub.g_k, phi), herm_inner(&sub.g_j, phi))
}

/// Which physical constraint a conic row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseConstraint {
    /// `s2 + tr(G_j Phi) p_k P_t <= Lambda`.
    InterferenceEpigraph,
    StrongRate,
    WeakRate,
    PrimaryInterference,
}

/// The linearized problem over `(Phi, Lambda)`.
///
/// Internally every quantity is divided by the noise power, so the conic
/// scalar is `Lambda / s2`; values reported here are in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorObjective {
    problem: ConicProblem,
    labels: Vec<PhaseConstraint>,
    sigma_sq: f64,
    lambda_bar: f64,
    a: f64,
    b: f64,
    c: f64,
    g_k: CMat,
    g_j: CMat,
    /// Set when the weak-user rate floor cannot hold for any beam.
    weak_floor_impossible: bool,
}

impl TaylorObjective {
    pub fn problem(&self) -> &ConicProblem {
        &self.problem
    }

    pub fn labels(&self) -> &[PhaseConstraint] {
        &self.labels
    }

    /// `f(Phi, Lambda)` with `Lambda` in physical units.
    pub fn value(&self, phi: &CMat, lambda: f64) -> f64 {
        self.problem.objective(phi, lambda / self.sigma_sq)
    }

    /// Gradient of `f` with respect to `Phi` (independent of `Lambda`).
    pub fn gradient_phi(&self, phi: &CMat) -> CMat {
        let mut g = CMat::zeros(phi.nrows(), phi.ncols());
        for t in &self.problem.log_terms {
            let arg = herm_inner(&t.matrix, phi) + t.offset;
            g += t.matrix.scale(t.weight / (arg * LN2));
        }
        g
    }

    /// Gradient of the first (strong user) log term.
    pub fn strong_term_gradient(&self, phi: &CMat) -> CMat {
        let t = &self.problem.log_terms[0];
        let arg = herm_inner(&t.matrix, phi) + t.offset;
        t.matrix.scale(t.weight / (arg * LN2))
    }

    /// The un-linearized objective with `Lambda` at its smallest feasible
    /// value; equals the exact lifted sum rate.
    pub fn exact_value(&self, phi: &CMat) -> f64 {
        let tk = herm_inner(&self.g_k, phi).max(0.0);
        let tj = herm_inner(&self.g_j, phi).max(0.0);
        (self.a * tk).ln_1p() / LN2 + (self.c * tj).ln_1p() / LN2 - (self.b * tj).ln_1p() / LN2
    }

    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }
}

/// Assembles the concave objective and the constraint rows.
pub fn build_taylor_objective(sub: &PhaseSubproblem) -> Result<TaylorObjective> {
    if !(sub.lambda_bar > 0.0) {
        return Err(invalid("lambda_bar must be positive"));
    }
    let s2 = sub.noise.sigma_sq();
    let pt = sub.split.p_total();
    let pk = sub.split.p_k();
    let pj = sub.split.p_j();
    let a = pk * pt / s2;
    let b = pk * pt / s2;
    let c = (pk + pj) * pt / s2;
    let lam_bar = sub.lambda_bar / s2;
    let m = sub.dim();

    let mut problem = ConicProblem::new(m)
        .log_term(1.0, sub.g_k.scale(a), 1.0)
        .log_term(1.0, sub.g_j.scale(c), 1.0)
        .linear(
            CMat::zeros(m, m),
            -1.0 / (lam_bar * LN2),
            -lam_bar.log2() + 1.0 / LN2,
        )
        .constraint(sub.g_j.scale(b), -1.0, Sense::Le, -1.0);
    problem.uses_lambda = true;
    let mut labels = vec![PhaseConstraint::InterferenceEpigraph];

    let floor = sub.cons.sinr_floor();
    let mut weak_floor_impossible = false;
    if floor > 0.0 {
        problem = problem.constraint(sub.g_k.scale(a), 0.0, Sense::Ge, floor);
        labels.push(PhaseConstraint::StrongRate);
        let coef = (pj - floor * pk) * pt / s2;
        if coef <= 0.0 {
            weak_floor_impossible = true;
        }
        problem = problem.constraint(sub.g_j.scale(coef), 0.0, Sense::Ge, floor);
        labels.push(PhaseConstraint::WeakRate);
    }
    problem = problem.constraint(sub.h_l.scale(pt / sub.cons.i_th), 0.0, Sense::Le, 1.0);
    labels.push(PhaseConstraint::PrimaryInterference);

    Ok(TaylorObjective {
        problem,
        labels,
        sigma_sq: s2,
        lambda_bar: sub.lambda_bar,
        a,
        b,
        c,
        g_k: sub.g_k.clone(),
        g_j: sub.g_j.clone(),
        weak_floor_impossible,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSettings {
    pub barrier: BarrierSettings,
    pub trials: usize,
    pub rank1_threshold: f64,
    pub mm_max_iters: usize,
    pub mm_tol: f64,
}

impl Default for PhaseSettings {
    fn default() -> Self {
        Self {
            barrier: BarrierSettings::default(),
            trials: 200,
            rank1_threshold: 1e-6,
            mm_max_iters: 20,
            mm_tol: 1e-4,
        }
    }
}

/// One conic solve at a fixed expansion point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSolution {
    pub lifted: LiftedMatrix,
    /// Optimal `Lambda` in physical units.
    pub lambda: f64,
    /// Linearized objective at the solution.
    pub objective: f64,
    /// Exact lifted sum rate at the solution.
    pub exact_objective: f64,
    pub report: SolveReport,
}

fn infeasible_from(obj: &TaylorObjective, index: usize, violation: f64) -> Error {
    let _ = obj.labels.get(index);
    Error::Infeasible {
        constraint: index,
        violation,
    }
}

pub fn solve_phase_subproblem(
    sub: &PhaseSubproblem,
    settings: &BarrierSettings,
) -> Result<LinearizedSolution> {
    let obj = build_taylor_objective(sub)?;
    if obj.weak_floor_impossible {
        let idx = obj
            .labels
            .iter()
            .position(|l| *l == PhaseConstraint::WeakRate)
            .unwrap_or(0);
        return Err(infeasible_from(&obj, idx, sub.cons.sinr_floor()));
    }
    let report = conic::solve_with(&obj.problem, settings)?;
    if report.status == SolveStatus::Infeasible {
        let (idx, v) = report.evidence.unwrap_or((0, f64::NAN));
        return Err(infeasible_from(&obj, idx, v));
    }
    let phi = report.solution.matrix().clone();
    let lambda = report.lambda.unwrap_or(1.0) * sub.noise.sigma_sq();
    Ok(LinearizedSolution {
        objective: obj.value(&phi, lambda),
        exact_objective: obj.exact_value(&phi),
        lifted: report.solution.clone(),
        lambda,
        report,
    })
}

/// Outcome of the re-linearization loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSolution {
    pub lifted: LiftedMatrix,
    pub lambda: f64,
    /// Exact lifted sum rate at `lifted`; an upper bound on the sum rate of
    /// any feasible beam once the loop has converged.
    pub objective_value: f64,
    pub inner_iterations: usize,
    /// Exact lifted objective after each inner solve.
    pub history: Vec<f64>,
}

/// Re-expands the interference tangent at each new solution until the exact
/// lifted objective improves by less than `mm_tol`.
pub fn solve_phase_mm(sub: &PhaseSubproblem, settings: &PhaseSettings) -> Result<RelaxedSolution> {
    let mut cur = sub.clone();
    let mut best: Option<LinearizedSolution> = None;
    let mut history = Vec::new();
    for _ in 0..settings.mm_max_iters.max(1) {
        let sol = solve_phase_subproblem(&cur, &settings.barrier)?;
        history.push(sol.exact_objective);
        let prev = best.as_ref().map(|b| b.exact_objective);
        let improved = prev.is_none_or(|p| sol.exact_objective > p);
        let next_bar = interference_level(&cur.g_j, sol.lifted.matrix(), &cur.split, cur.noise);
        let gain = prev.map_or(f64::INFINITY, |p| sol.exact_objective - p);
        if improved {
            best = Some(sol);
        }
        if gain < settings.mm_tol {
            break;
        }
        cur = cur.with_lambda_bar(next_bar)?;
    }
    let best = best.ok_or_else(|| Error::Numerical("no inner solve completed".into()))?;
    Ok(RelaxedSolution {
        lifted: best.lifted,
        lambda: best.lambda,
        objective_value: best.exact_objective,
        inner_iterations: history.len(),
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSolution {
    pub lifted: LiftedMatrix,
    pub beam: BeamformingVector,
    /// `lambda_2 / lambda_1` of the lifted matrix.
    pub rank1_gap: f64,
    pub randomization_trials_used: usize,
    /// Relaxed objective carried over from the lifted solve (or the exact
    /// objective of `lifted` when extracting from a bare matrix).
    pub objective_value: f64,
    /// Exact sum rate of `beam`.
    pub sum_rate: f64,
}

fn clip_unit(v: &CVec) -> CVec {
    v.map(|z| {
        let r = z.norm();
        if r > 1.0 {
            z / r
        } else {
            z
        }
    })
}

fn scale_to_unit_peak(v: CVec) -> CVec {
    let peak = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak > 1.0 {
        v.unscale(peak)
    } else {
        v
    }
}

fn violation_total(v: &[f64; 3], cons: &PowerConstraints) -> f64 {
    let i_scale = cons.i_th.max(1e-300);
    v[0] + v[1] + v[2] / i_scale
}

fn is_feasible(v: &[f64; 3], cons: &PowerConstraints) -> bool {
    v[0] <= 1e-9 && v[1] <= 1e-9 && v[2] <= 1e-9 * cons.i_th.max(1.0)
}

/// Recovers a beam from a lifted matrix.
pub fn extract_beam(
    lifted: &LiftedMatrix,
    sub: &PhaseSubproblem,
    trials: usize,
    rng_seed: u64,
) -> Result<PhaseSolution> {
    extract_beam_with(lifted, sub, trials, rng_seed, 1e-6)
}

pub fn extract_beam_with(
    lifted: &LiftedMatrix,
    sub: &PhaseSubproblem,
    trials: usize,
    rng_seed: u64,
    rank1_threshold: f64,
) -> Result<PhaseSolution> {
    if trials == 0 {
        return Err(invalid("randomization needs at least one trial"));
    }
    let m = sub.dim();
    if lifted.dim() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            actual: lifted.dim(),
        });
    }
    let (values, vectors) = eigh_desc(lifted.matrix());
    let l1 = values[0];
    let rank1_gap = if l1 > 0.0 {
        (values.get(1).copied().unwrap_or(0.0) / l1).max(0.0)
    } else {
        0.0
    };
    let principal = scale_to_unit_peak(vectors.column(0).scale(l1.max(0.0).sqrt()));
    let relaxed = sub.exact_objective(lifted.matrix());
    let cons = sub.cons;

    let finish = |beam: CVec, used: usize| -> Result<PhaseSolution> {
        let sum_rate = sub.exact_objective(&(&beam * beam.adjoint()));
        Ok(PhaseSolution {
            lifted: lifted.clone(),
            beam: BeamformingVector::new(beam)?,
            rank1_gap,
            randomization_trials_used: used,
            objective_value: relaxed,
            sum_rate,
        })
    };

    if rank1_gap < rank1_threshold && is_feasible(&sub.violations(&principal), &cons) {
        return finish(principal, 0);
    }

    // Square root of the covariance with negative eigenvalues dropped.
    let mut root = DMatrix::<C64>::zeros(m, m);
    for (i, &lam) in values.iter().enumerate() {
        if lam > 0.0 {
            root.set_column(i, &vectors.column(i).scale(lam.sqrt()));
        }
    }

    let score = |beam: &CVec| -> (bool, f64, [f64; 3]) {
        let v = sub.violations(beam);
        let rate = sub.exact_objective(&(beam * beam.adjoint()));
        (is_feasible(&v, &cons), rate, v)
    };

    let mut best_feasible: Option<(f64, CVec)> = None;
    let mut least_bad: Option<(f64, CVec, [f64; 3])> = None;
    let mut consider = |beam: CVec| {
        let (ok, rate, v) = score(&beam);
        if ok {
            if best_feasible.as_ref().is_none_or(|(r, _)| rate > *r) {
                best_feasible = Some((rate, beam));
            }
        } else {
            let total = violation_total(&v, &cons);
            if least_bad.as_ref().is_none_or(|(t, _, _)| total < *t) {
                least_bad = Some((total, beam, v));
            }
        }
    };

    consider(principal);
    let frac = core::f64::consts::FRAC_1_SQRT_2;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(trial as u64);
        let z = CVec::from_fn(m, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re * frac, im * frac)
        });
        consider(clip_unit(&(&root * z)));
    }

    match best_feasible {
        Some((_, beam)) => finish(beam, trials),
        None => {
            let (_, best, violations) = least_bad.expect("at least one candidate");
            Err(Error::ExtractionFailure {
                best: best.iter().copied().collect(),
                violations,
            })
        }
    }
}

/// Relaxed solve followed by extraction.
pub fn design_phase(
    sub: &PhaseSubproblem,
    settings: &PhaseSettings,
    rng_seed: u64,
) -> Result<PhaseSolution> {
    let relaxed = solve_phase_mm(sub, settings)?;
    let mut sol = extract_beam_with(
        &relaxed.lifted,
        sub,
        settings.trials,
        rng_seed,
        settings.rank1_threshold,
    )?;
    sol.objective_value = relaxed.objective_value;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{steering_vector, GeometryParams, ReceiverId};
    use crate::rate::{sinr_strong, sinr_weak};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn cv(values: &[(f64, f64)], r: ReceiverId) -> ChannelVector {
        ChannelVector::new(
            CVec::from_iterator(values.len(), values.iter().map(|&(a, b)| C64::new(a, b))),
            r,
        )
        .unwrap()
    }

    fn simple_sub(m: usize, r_min: f64) -> PhaseSubproblem {
        let geom = |theta: f64, phi: f64, gain: f64| GeometryParams {
            vertical_aod_rad: theta,
            horizontal_aod_rad: phi,
            path_gain: gain,
            ..GeometryParams::default()
        };
        let gk = steering_vector(&geom(0.4, 0.3, 1e-3), m, ReceiverId::UserK).unwrap();
        let gj = steering_vector(&geom(1.1, 2.0, 5e-4), m, ReceiverId::UserJ).unwrap();
        let hl = steering_vector(&geom(0.8, 4.0, 0.3), m, ReceiverId::PrimaryL).unwrap();
        PhaseSubproblem::from_channels(
            &gk,
            &gj,
            &hl,
            PowerSplit::new(0.2, 1.0).unwrap(),
            NoisePower::new(1e-7).unwrap(),
            PowerConstraints::new(1.0, 2.0, r_min).unwrap(),
            &CMat::identity(m, m),
        )
        .unwrap()
    }

    #[test]
    fn lift_unit_basis() {
        let g = cv(&[(1.0, 0.0), (0.0, 0.0)], ReceiverId::UserK);
        let l = lift_channel(&g);
        assert_eq!(l[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(l[(0, 1)], C64::new(0.0, 0.0));
        assert_eq!(l[(1, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn lift_all_ones() {
        let g = cv(&[(1.0, 0.0); 3], ReceiverId::UserK);
        let l = lift_channel(&g);
        assert!(l.iter().all(|z| (*z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let (vals, _) = eigh_desc(&l);
        assert_relative_eq!(vals[0], 3.0, epsilon = 1e-12);
        assert!(vals[1].abs() < 1e-12 && vals[2].abs() < 1e-12);
    }

    #[test]
    fn zero_lift_gives_zero_sinrs() {
        let sub = simple_sub(3, 0.1);
        assert_eq!(lifted_sinrs(&sub, &CMat::zeros(3, 3)), (0.0, 0.0));
    }

    #[test]
    fn expansion_point_identity() {
        let sub = simple_sub(4, 0.1);
        let obj = build_taylor_objective(&sub).unwrap();
        let phi = CMat::identity(4, 4).scale(0.5);
        let lam = sub.lambda_bar();
        let s2 = sub.noise().sigma_sq();
        let tk = herm_inner(sub.g_k(), &phi);
        let tj = herm_inner(sub.g_j(), &phi);
        let pt = sub.split().p_total();
        let expected = (tk * sub.split().p_k() * pt + s2).log2() - s2.log2()
            + (tj * pt + s2).log2()
            - lam.log2();
        assert_relative_eq!(obj.value(&phi, lam), expected, epsilon = 1e-10);
    }

    #[test]
    fn lambda_bar_must_be_positive() {
        let sub = simple_sub(2, 0.1);
        assert!(sub.clone().with_lambda_bar(0.0).is_err());
        assert!(sub.with_lambda_bar(-1.0).is_err());
    }

    #[test]
    fn taylor_term_majorizes_log() {
        for i in 0..40 {
            for j in 0..40 {
                let lam = 10f64.powf(-8.0 + 0.4 * i as f64);
                let bar = 10f64.powf(-8.0 + 0.4 * j as f64);
                let tangent = bar.log2() + (lam - bar) / (bar * LN2);
                assert!(lam.log2() <= tangent + 1e-12 * tangent.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rank_one_extraction_recovers_beam() {
        let sub = simple_sub(4, 0.0);
        let beam = BeamformingVector::from_phases(&[0.3, 1.7, 4.0, 5.5]).unwrap();
        let lifted = LiftedMatrix::from_beam(&beam);
        let sol = extract_beam(&lifted, &sub, 10, 1).unwrap();
        assert_eq!(sol.randomization_trials_used, 0);
        // Equal up to a global phase.
        let rot = sol.beam.elements()[0] / beam.elements()[0];
        assert_relative_eq!(rot.norm(), 1.0, epsilon = 1e-9);
        for (a, b) in sol.beam.elements().iter().zip(beam.elements().iter()) {
            assert!((a - b * rot).norm() < 1e-9);
        }
        let direct = sub.exact_objective(lifted.matrix());
        assert_relative_eq!(sol.sum_rate, direct, epsilon = 1e-9);
    }

    #[test]
    fn mixed_lift_extraction_is_feasible() {
        let sub = simple_sub(4, 0.0);
        let lifted =
            LiftedMatrix::new(CMat::identity(4, 4).unscale(4.0), LiftedSource::Solver).unwrap();
        let sol = extract_beam(&lifted, &sub, 200, 42).unwrap();
        assert!(sol.beam.amplitudes().iter().all(|&a| a <= 1.0 + 1e-12));
        assert!(sol.rank1_gap > 0.99);
    }

    #[test]
    fn more_trials_never_worse() {
        let sub = simple_sub(4, 0.0);
        let lifted =
            LiftedMatrix::new(CMat::identity(4, 4).unscale(2.0), LiftedSource::Solver).unwrap();
        let one = extract_beam(&lifted, &sub, 1, 9).unwrap();
        let many = extract_beam(&lifted, &sub, 1000, 9).unwrap();
        assert!(many.sum_rate >= one.sum_rate);
    }

    #[test]
    fn extraction_is_deterministic() {
        let sub = simple_sub(5, 0.0);
        let lifted =
            LiftedMatrix::new(CMat::identity(5, 5).unscale(2.0), LiftedSource::Solver).unwrap();
        let a = extract_beam(&lifted, &sub, 50, 77).unwrap();
        let b = extract_beam(&lifted, &sub, 50, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_element_subproblem_matches_hand_solution() {
        // M = 1 and no rate floors: the exact objective is increasing in
        // Phi_11, so the optimum sits at min(1, I_th / (|h|^2 P_t)).
        for (h, expected) in [(0.5, 1.0), (2.0, 0.25)] {
            let gk = cv(&[(1e-3, 0.0)], ReceiverId::UserK);
            let gj = cv(&[(5e-4, 0.0)], ReceiverId::UserJ);
            let hl = cv(&[(h, 0.0)], ReceiverId::PrimaryL);
            let sub = PhaseSubproblem::from_channels(
                &gk,
                &gj,
                &hl,
                PowerSplit::new(0.3, 1.0).unwrap(),
                NoisePower::new(1e-7).unwrap(),
                PowerConstraints::new(1.0, 1.0, 0.0).unwrap(),
                &CMat::identity(1, 1),
            )
            .unwrap();
            let sol = solve_phase_mm(&sub, &PhaseSettings::default()).unwrap();
            assert_relative_eq!(sol.lifted.matrix()[(0, 0)].re, expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn degenerate_interference_pins_lambda_at_noise() {
        let m = 3;
        let sub = simple_sub(m, 0.0);
        let s2 = sub.noise().sigma_sq();
        let sub = PhaseSubproblem::new(
            sub.g_k().clone(),
            sub.g_j().clone(),
            sub.h_l().clone(),
            PowerSplit::new(0.0, 1.0).unwrap(),
            sub.noise(),
            *sub.cons(),
            s2,
        )
        .unwrap();
        let sol = solve_phase_subproblem(&sub, &BarrierSettings::default()).unwrap();
        assert_relative_eq!(sol.lambda, s2, max_relative = 1e-5);
    }

    #[test]
    fn relaxed_objective_bounds_extracted_rate() {
        let sub = simple_sub(6, 0.1);
        let sol = design_phase(&sub, &PhaseSettings::default(), 3).unwrap();
        assert!(sol.objective_value >= sol.sum_rate - 1e-9);
        assert!(sub
            .violations(sol.beam.elements())
            .iter()
            .all(|v| *v <= 1e-9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rank_one_lift_matches_vector_sinrs(
            phases in proptest::collection::vec(0.0..TAU, 5),
            amps in proptest::collection::vec(0.1f64..1.0, 5),
            pk in 0.01f64..0.99,
        ) {
            let sub = simple_sub(5, 0.1);
            let elems = CVec::from_iterator(5, phases.iter().zip(&amps).map(|(&p, &a)| C64::from_polar(a, p)));
            let beam = BeamformingVector::new(elems).unwrap();
            let split = PowerSplit::new(pk, 0.7).unwrap();
            let sub = PhaseSubproblem::new(
                sub.g_k().clone(), sub.g_j().clone(), sub.h_l().clone(),
                split, sub.noise(), *sub.cons(), sub.lambda_bar(),
            ).unwrap();
            let geom = |theta: f64, phi: f64, gain: f64| GeometryParams {
                vertical_aod_rad: theta, horizontal_aod_rad: phi, path_gain: gain,
                ..GeometryParams::default()
            };
            let gk = steering_vector(&geom(0.4, 0.3, 1e-3), 5, ReceiverId::UserK).unwrap();
            let gj = steering_vector(&geom(1.1, 2.0, 5e-4), 5, ReceiverId::UserJ).unwrap();
            let (lk, lj) = lifted_sinrs(&sub, LiftedMatrix::from_beam(&beam).matrix());
            let vk = sinr_strong(&gk, &beam, &split, sub.noise()).unwrap();
            let vj = sinr_weak(&gj, &beam, &split, sub.noise()).unwrap();
            prop_assert!((lk - vk).abs() <= 1e-9 * vk.abs().max(1e-300));
            prop_assert!((lj - vj).abs() <= 1e-9 * vj.abs().max(1e-300));
        }

        #[test]
        fn strong_gradient_matches_finite_differences(
            seed in 0u64..1000,
        ) {
            let m = 3;
            let sub = simple_sub(m, 0.1);
            let obj = build_taylor_objective(&sub).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = CMat::from_fn(m, m, |_, _| {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let phi = (&x * x.adjoint()).unscale(2.0 * m as f64) + CMat::identity(m, m).scale(0.1);
            let dir = CMat::from_fn(m, m, |_, _| {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let dir = crate::linalg::hermitian_part(&dir);
            let first = |p: &CMat| {
                let t = &obj.problem().log_terms[0];
                t.weight * (herm_inner(&t.matrix, p) + t.offset).log2()
            };
            let h = 1e-5;
            let fd = (first(&(&phi + dir.scale(h))) - first(&(&phi - dir.scale(h)))) / (2.0 * h);
            let analytic = herm_inner(&obj.strong_term_gradient(&phi), &dir);
            prop_assert!((fd - analytic).abs() <= 1e-5 * analytic.abs().max(1e-8));
        }
    }
}
