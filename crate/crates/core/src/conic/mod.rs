//! Log-barrier interior-point solver for the lifted phase problem.
//!
//! The variable is a Hermitian `M x M` matrix `Phi` (plus, optionally, one
//! real scalar `Lambda`) subject to
//!
//! * `Phi` positive semidefinite,
//! * `Phi_mm <= diag_cap` for every `m`,
//! * affine trace constraints `tr(B Phi) + b Lambda (<= | >=) bound`,
//!
//! and the objective maximized is
//!
//! ```text
//! sum_i w_i log2(tr(A_i Phi) + c_i) + tr(L Phi) + l Lambda + const
//! ```
//!
//! with every `w_i >= 0`, which makes the problem concave.

mod barrier;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

// Float math for toolchains whose `core` has no inherent methods.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::linalg::{herm_inner, is_hermitian, CMat, C64};
use crate::phase::{LiftedMatrix, LiftedSource};
use barrier::{Barrier, EngineSettings, EngineStatus, Point, Row};

/// `w * log2(tr(matrix Phi) + offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTerm {
    pub weight: f64,
    pub matrix: CMat,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
}

/// `tr(matrix Phi) + lambda * Lambda  (sense)  bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceConstraint {
    pub matrix: CMat,
    pub lambda: f64,
    pub sense: Sense,
    pub bound: f64,
}

impl TraceConstraint {
    /// Signed slack; positive means strictly satisfied.
    pub fn slack(&self, phi: &CMat, lambda: f64) -> f64 {
        let lhs = herm_inner(&self.matrix, phi) + self.lambda * lambda;
        match self.sense {
            Sense::Le => self.bound - lhs,
            Sense::Ge => lhs - self.bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub dim: usize,
    pub log_terms: Vec<LogTerm>,
    pub linear: CMat,
    pub linear_lambda: f64,
    pub constant: f64,
    pub constraints: Vec<TraceConstraint>,
    pub diag_cap: f64,
    pub uses_lambda: bool,
}

impl ConicProblem {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            log_terms: Vec::new(),
            linear: CMat::zeros(dim, dim),
            linear_lambda: 0.0,
            constant: 0.0,
            constraints: Vec::new(),
            diag_cap: 1.0,
            uses_lambda: false,
        }
    }

    pub fn log_term(mut self, weight: f64, matrix: CMat, offset: f64) -> Self {
        self.log_terms.push(LogTerm {
            weight,
            matrix,
            offset,
        });
        self
    }

    pub fn linear(mut self, matrix: CMat, lambda_coef: f64, constant: f64) -> Self {
        self.linear = matrix;
        self.linear_lambda = lambda_coef;
        self.constant = constant;
        if lambda_coef != 0.0 {
            self.uses_lambda = true;
        }
        self
    }

    pub fn constraint(mut self, matrix: CMat, lambda: f64, sense: Sense, bound: f64) -> Self {
        if lambda != 0.0 {
            self.uses_lambda = true;
        }
        self.constraints.push(TraceConstraint {
            matrix,
            lambda,
            sense,
            bound,
        });
        self
    }

    pub fn with_diag_cap(mut self, cap: f64) -> Self {
        self.diag_cap = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("conic problem dimension must be positive"));
        }
        if !(self.diag_cap > 0.0 && self.diag_cap.is_finite()) {
            return Err(invalid("diagonal cap must be positive and finite"));
        }
        let tol = 1e-9;
        let check = |m: &CMat, what: &str| -> Result<()> {
            if m.nrows() != self.dim || m.ncols() != self.dim {
                return Err(Error::LengthMismatch {
                    expected: self.dim,
                    actual: m.nrows(),
                });
            }
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(invalid(format!("{what} has non-finite entries")));
            }
            let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
            if !is_hermitian(m, tol * scale) {
                return Err(invalid(format!("{what} is not Hermitian")));
            }
            Ok(())
        };
        check(&self.linear, "linear objective matrix")?;
        for t in &self.log_terms {
            check(&t.matrix, "log term matrix")?;
            if !(t.weight >= 0.0 && t.weight.is_finite()) || !t.offset.is_finite() {
                return Err(invalid("log term weights must be finite and nonnegative"));
            }
        }
        for c in &self.constraints {
            check(&c.matrix, "constraint matrix")?;
            if !c.bound.is_finite() || !c.lambda.is_finite() {
                return Err(invalid("constraint coefficients must be finite"));
            }
        }
        if self.uses_lambda
            && self.linear_lambda != 0.0
            && self.constraints.iter().all(|c| c.lambda == 0.0)
        {
            return Err(invalid("auxiliary scalar is unbounded"));
        }
        Ok(())
    }

    /// Objective at `(phi, lambda)`; `-inf` when a log argument is not
    /// positive.
    pub fn objective(&self, phi: &CMat, lambda: f64) -> f64 {
        let mut f = herm_inner(&self.linear, phi) + self.linear_lambda * lambda + self.constant;
        for t in &self.log_terms {
            let a = herm_inner(&t.matrix, phi) + t.offset;
            if a <= 0.0 {
                return f64::NEG_INFINITY;
            }
            f += t.weight * a.log2();
        }
        f
    }

    /// Largest violation over trace constraints, diagonal caps and the PSD
    /// cone (as a negative eigenvalue). Zero when feasible.
    pub fn max_violation(&self, phi: &CMat, lambda: f64) -> f64 {
        let mut v = 0.0f64;
        for c in &self.constraints {
            v = v.max(-c.slack(phi, lambda));
        }
        for m in 0..self.dim {
            v = v.max(phi[(m, m)].re - self.diag_cap);
        }
        v.max(-crate::linalg::min_eigenvalue(phi))
    }

    fn lambda_col(&self) -> usize {
        usize::from(self.uses_lambda)
    }

    fn slack_row(&self, c: &TraceConstraint) -> Row {
        let (sign, constant) = match c.sense {
            Sense::Le => (-1.0, c.bound),
            Sense::Ge => (1.0, -c.bound),
        };
        let mut scal = vec![0.0; self.lambda_col()];
        if self.uses_lambda {
            scal[0] = sign * c.lambda;
        }
        Row::new(Some(c.matrix.scale(sign)), scal, constant)
    }

    /// Debug dump, one block per term, matrices row-major as `re im` pairs.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "CONIC v1 M={}", self.dim);
        let _ = writeln!(out, "DIAG_CAP {:e}", self.diag_cap);
        let _ = writeln!(out, "USES_LAMBDA {}", u8::from(self.uses_lambda));
        let _ = writeln!(out, "LINEAR {:e} {:e}", self.linear_lambda, self.constant);
        write_matrix(&mut out, &self.linear);
        for t in &self.log_terms {
            let _ = writeln!(out, "LOG {:e} {:e}", t.weight, t.offset);
            write_matrix(&mut out, &t.matrix);
        }
        for c in &self.constraints {
            let sense = match c.sense {
                Sense::Le => "LE",
                Sense::Ge => "GE",
            };
            let _ = writeln!(out, "CON {sense} {:e} {:e}", c.lambda, c.bound);
            write_matrix(&mut out, &c.matrix);
        }
        out.push_str("END\n");
        out
    }

    /// Parses the output of [`ConicProblem::to_dump`].
    pub fn from_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| invalid("empty dump"))?;
        let dim: usize = header
            .strip_prefix("CONIC v1 M=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| invalid("bad dump header"))?;
        let mut p = ConicProblem::new(dim);
        loop {
            let line = lines.next().ok_or_else(|| invalid("dump missing END"))?;
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap_or("");
            let rest: Vec<&str> = parts.collect();
            match tag {
                "END" => break,
                "DIAG_CAP" => p.diag_cap = parse_nums::<1>(&rest)?[0],
                "USES_LAMBDA" => p.uses_lambda = rest.first() == Some(&"1"),
                "LINEAR" => {
                    let [l, c] = parse_nums::<2>(&rest)?;
                    p.linear_lambda = l;
                    p.constant = c;
                    p.linear = read_matrix(&mut lines, dim)?;
                }
                "LOG" => {
                    let [weight, offset] = parse_nums::<2>(&rest)?;
                    let matrix = read_matrix(&mut lines, dim)?;
                    p.log_terms.push(LogTerm {
                        weight,
                        matrix,
                        offset,
                    });
                }
                "CON" => {
                    let sense = match rest.first() {
                        Some(&"LE") => Sense::Le,
                        Some(&"GE") => Sense::Ge,
                        _ => return Err(invalid("bad constraint sense")),
                    };
                    let [lambda, bound] = parse_nums::<2>(&rest[1..])?;
                    let matrix = read_matrix(&mut lines, dim)?;
                    p.constraints.push(TraceConstraint {
                        matrix,
                        lambda,
                        sense,
                        bound,
                    });
                }
                other => return Err(invalid(format!("unknown dump tag {other}"))),
            }
        }
        Ok(p)
    }
}

fn write_matrix(out: &mut String, m: &CMat) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(' ');
            }
            let z = m[(r, c)];
            let _ = write!(out, "{:e} {:e}", z.re, z.im);
        }
        out.push('\n');
    }
}

fn parse_nums<const N: usize>(parts: &[&str]) -> Result<[f64; N]> {
    if parts.len() != N {
        return Err(invalid("wrong number of fields in dump"));
    }
    let mut out = [0.0; N];
    for (o, s) in out.iter_mut().zip(parts) {
        *o = s.parse().map_err(|_| invalid(format!("bad number {s}")))?;
    }
    Ok(out)
}

fn read_matrix<'a>(lines: &mut impl Iterator<Item = &'a str>, dim: usize) -> Result<CMat> {
    let mut m = CMat::zeros(dim, dim);
    for r in 0..dim {
        let line = lines.next().ok_or_else(|| invalid("truncated matrix"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| invalid(format!("bad number {s}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 2 * dim {
            return Err(invalid("matrix row has wrong length"));
        }
        for c in 0..dim {
            m[(r, c)] = C64::new(vals[2 * c], vals[2 * c + 1]);
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSettings {
    /// Stop once the duality gap bound `m / t` is below this.
    pub tol: f64,
    /// Cap on total Newton steps across all barrier stages.
    pub max_newton_steps: usize,
    pub t0: f64,
    pub growth: f64,
    pub newton_tol: f64,
    pub max_newton_per_stage: usize,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_newton_steps: 2000,
            t0: 1.0,
            growth: 10.0,
            newton_tol: 1e-9,
            max_newton_per_stage: 50,
        }
    }
}

impl BarrierSettings {
    fn engine(&self) -> EngineSettings {
        EngineSettings {
            t0: self.t0,
            growth: self.growth,
            newton_tol: self.newton_tol,
            max_newton_per_stage: self.max_newton_per_stage,
            max_newton_total: self.max_newton_steps,
            gap_tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: LiftedMatrix,
    pub lambda: Option<f64>,
    pub objective_value: f64,
    /// Total Newton steps over all barrier stages (phase I excluded).
    pub barrier_iterations: usize,
    /// Duality gap bound plus scaled centering residual at exit.
    pub kkt_residual: f64,
    pub status: SolveStatus,
    /// Objective after each centering stage.
    pub stage_objectives: Vec<f64>,
    /// Constraint slacks at the returned point, in constraint order.
    pub slacks: Vec<f64>,
    /// Estimated constraint multipliers, in constraint order.
    pub multipliers: Vec<f64>,
    /// For infeasible problems: most violated constraint and its violation.
    pub evidence: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Interior {
    Point { phi: CMat, lambda: Option<f64> },
    Infeasible { constraint: usize, violation: f64 },
}

/// Finds a strictly feasible point, or evidence that none exists.
pub fn find_interior(problem: &ConicProblem) -> Result<Interior> {
    find_interior_with(problem, &BarrierSettings::default())
}

pub fn find_interior_with(problem: &ConicProblem, settings: &BarrierSettings) -> Result<Interior> {
    problem.validate()?;
    let dim = problem.dim;
    let phi0 = CMat::identity(dim, dim).scale(problem.diag_cap / 2.0);

    // When the scalar enters every constraint with the same sign, it can be
    // chosen after Phi; otherwise it joins the phase I search.
    let coefs: Vec<f64> = problem
        .constraints
        .iter()
        .map(|c| match c.sense {
            Sense::Le => -c.lambda,
            Sense::Ge => c.lambda,
        })
        .collect();
    let any_pos = coefs.iter().any(|&c| c > 0.0);
    let any_neg = coefs.iter().any(|&c| c < 0.0);
    let lambda_free = problem.uses_lambda && (any_pos ^ any_neg);
    let lambda_in_phase1 = problem.uses_lambda && !lambda_free && (any_pos || any_neg);

    let included: Vec<usize> = (0..problem.constraints.len())
        .filter(|&i| !(lambda_free && coefs[i] != 0.0))
        .collect();

    let base_rows: Vec<Row> = included
        .iter()
        .map(|&i| {
            let mut row = problem.slack_row(&problem.constraints[i]);
            if !lambda_in_phase1 {
                row.scal.clear();
            }
            row
        })
        .collect();
    let n_lambda = usize::from(lambda_in_phase1);
    let start_z: Vec<f64> = vec![0.0; n_lambda];
    let start = Point {
        phi: phi0.clone(),
        z: start_z.clone(),
    };
    let worst = base_rows
        .iter()
        .map(|r| r.eval(&start))
        .fold(f64::INFINITY, f64::min);

    let (phi, lambda_val) = if worst > 0.0 {
        (phi0, if lambda_in_phase1 { Some(0.0) } else { None })
    } else {
        // Minimize s subject to row_r + s > 0.
        let s_idx = n_lambda;
        let rows: Vec<Row> = base_rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.scal.resize(n_lambda, 0.0);
                r.scal.push(1.0);
                r
            })
            .collect();
        let mut lin_scal = vec![0.0; n_lambda + 1];
        lin_scal[s_idx] = -1.0;
        let mut rows_all = rows;
        if lambda_in_phase1 {
            // Box on the scalar so the search region stays bounded.
            let bound = lambda_box(problem);
            for sign in [1.0, -1.0] {
                let mut v = vec![0.0; n_lambda + 1];
                v[0] = sign;
                rows_all.push(Row::new(None, v, bound));
            }
        }
        let engine = Barrier {
            dim,
            n_scalars: n_lambda + 1,
            logs: Vec::new(),
            lin: Row::new(None, lin_scal, 0.0),
            rows: rows_all,
            cap: problem.diag_cap,
        };
        let mut z0 = start_z;
        z0.push(1.0 - worst);
        let res = engine.run(
            Point { phi: phi0, z: z0 },
            &settings.engine(),
            &|p: &Point| p.z[s_idx] < 0.0,
        );
        if res.point.z[s_idx] >= 0.0 {
            let pt = Point {
                phi: res.point.phi.clone(),
                z: res.point.z[..n_lambda].to_vec(),
            };
            let (k, v) = base_rows
                .iter()
                .zip(&included)
                .map(|(r, &i)| (i, -r.eval(&pt)))
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| {
                    if x.1 > acc.1 {
                        x
                    } else {
                        acc
                    }
                });
            return Ok(Interior::Infeasible {
                constraint: k,
                violation: v.max(0.0),
            });
        }
        let lam = if lambda_in_phase1 {
            Some(res.point.z[0])
        } else {
            None
        };
        (res.point.phi, lam)
    };

    let lambda = if lambda_free {
        // Every Lambda-bearing slack is `rest + coef * Lambda` with
        // same-signed coefs; push Lambda past the tightest one.
        let sign = if any_pos { 1.0 } else { -1.0 };
        let mut need = f64::NEG_INFINITY;
        for (c, &coef) in problem.constraints.iter().zip(&coefs) {
            if coef == 0.0 {
                continue;
            }
            let rest = c.slack(&phi, 0.0);
            need = need.max(-rest / coef.abs());
        }
        let margin = 1.0 + 0.1 * need.abs();
        Some(sign * (need + margin))
    } else if problem.uses_lambda {
        Some(lambda_val.unwrap_or(0.0))
    } else {
        None
    };
    Ok(Interior::Point { phi, lambda })
}

fn lambda_box(problem: &ConicProblem) -> f64 {
    let scale = problem
        .constraints
        .iter()
        .map(|c| {
            let m = c.matrix.iter().map(|z| z.norm()).sum::<f64>() * problem.diag_cap;
            (m + c.bound.abs()) / c.lambda.abs().max(1e-300)
        })
        .filter(|x| x.is_finite())
        .fold(1.0, f64::max);
    10.0 * scale
}

fn engine(problem: &ConicProblem) -> Barrier {
    let rows: Vec<Row> = problem
        .constraints
        .iter()
        .map(|c| problem.slack_row(c))
        .collect();
    let nz = problem.lambda_col();
    let lin_mat = if problem.linear.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        None
    } else {
        Some(problem.linear.clone())
    };
    Barrier {
        dim: problem.dim,
        n_scalars: nz,
        logs: problem
            .log_terms
            .iter()
            .map(|t| {
                (
                    t.weight,
                    Row::new(Some(t.matrix.clone()), vec![0.0; nz], t.offset),
                )
            })
            .collect(),
        lin: Row::new(
            lin_mat,
            if nz == 1 {
                vec![problem.linear_lambda]
            } else {
                Vec::new()
            },
            problem.constant,
        ),
        rows,
        cap: problem.diag_cap,
    }
}

/// Relative errors of the barrier gradient and Hessian against central
/// differences with step `h`, at a strictly feasible `(phi, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub gradient_rel_err: f64,
    pub hessian_rel_err: f64,
}

pub fn check_derivatives(
    problem: &ConicProblem,
    phi: &CMat,
    lambda: f64,
    t: f64,
    h: f64,
) -> Result<DerivativeCheck> {
    problem.validate()?;
    let engine = engine(problem);
    let pt = Point {
        phi: phi.clone(),
        z: if problem.lambda_col() == 1 {
            vec![lambda]
        } else {
            Vec::new()
        },
    };
    if engine.value(&pt, t).is_none() {
        return Err(invalid("point is not strictly feasible"));
    }
    let (g, hs) = engine
        .derivative_errors(&pt, t, h)
        .ok_or_else(|| invalid("difference step leaves the barrier domain"))?;
    Ok(DerivativeCheck {
        gradient_rel_err: g,
        hessian_rel_err: hs,
    })
}

/// Solves with default settings apart from the gap tolerance and the Newton
/// step cap.
pub fn solve(problem: &ConicProblem, tol: f64, max_newton_steps: usize) -> Result<SolveReport> {
    solve_with(
        problem,
        &BarrierSettings {
            tol,
            max_newton_steps,
            ..BarrierSettings::default()
        },
    )
}

pub fn solve_with(problem: &ConicProblem, settings: &BarrierSettings) -> Result<SolveReport> {
    if !(settings.tol > 0.0) || !(settings.growth > 1.0) || !(settings.t0 > 0.0) {
        return Err(invalid("barrier settings must be positive with growth > 1"));
    }
    let (phi0, lambda0) = match find_interior_with(problem, settings)? {
        Interior::Point { phi, lambda } => (phi, lambda),
        Interior::Infeasible {
            constraint,
            violation,
        } => {
            let phi = CMat::identity(problem.dim, problem.dim).scale(problem.diag_cap / 2.0);
            let lam = problem.uses_lambda.then_some(0.0);
            let slacks = problem
                .constraints
                .iter()
                .map(|c| c.slack(&phi, lam.unwrap_or(0.0)))
                .collect();
            return Ok(SolveReport {
                objective_value: problem.objective(&phi, lam.unwrap_or(0.0)),
                solution: LiftedMatrix::from_solver(phi),
                lambda: lam,
                barrier_iterations: 0,
                kkt_residual: f64::INFINITY,
                status: SolveStatus::Infeasible,
                stage_objectives: Vec::new(),
                slacks,
                multipliers: vec![0.0; problem.constraints.len()],
                evidence: Some((constraint, violation)),
            });
        }
    };

    let engine = engine(problem);
    let start = Point {
        phi: phi0,
        z: lambda0.into_iter().collect(),
    };
    if engine.objective(&start).is_none() {
        return Err(Error::Numerical(
            "log term argument is not positive at the interior point".into(),
        ));
    }
    let res = engine.run(start, &settings.engine(), &|_| false);
    let t = res.t;
    let gap = engine.barrier_degree() / t;
    let centering = if res.decrement_sq.is_finite() {
        res.decrement_sq.max(0.0).sqrt() / t
    } else {
        f64::INFINITY
    };
    let kkt_residual = gap.max(centering);
    let status = match res.status {
        EngineStatus::MaxIters => SolveStatus::MaxIters,
        _ if kkt_residual <= settings.tol => SolveStatus::Optimal,
        _ => SolveStatus::MaxIters,
    };
    let phi = crate::linalg::hermitian_part(&res.point.phi);
    let lambda = res.point.z.first().copied();
    let lam = lambda.unwrap_or(0.0);
    let slacks: Vec<f64> = problem
        .constraints
        .iter()
        .map(|c| c.slack(&phi, lam))
        .collect();
    let multipliers = slacks.iter().map(|s| 1.0 / (t * s.max(1e-300))).collect();
    Ok(SolveReport {
        objective_value: problem.objective(&phi, lam),
        solution: LiftedMatrix::from_solver(phi),
        lambda,
        barrier_iterations: res.newton_steps,
        kkt_residual,
        status,
        stage_objectives: res.stage_objectives,
        slacks,
        multipliers,
        evidence: None,
    })
}

impl LiftedMatrix {
    pub(crate) fn from_solver(matrix: CMat) -> Self {
        Self::with_source(matrix, LiftedSource::Solver)
    }
}
