//! Damped-Newton log-barrier engine over `(Phi, z)`, where `Phi` is an `M x M`
//! Hermitian matrix and `z` a short vector of real scalars.
//!
//! The barrier being minimized is
//!
//! ```text
//! psi_t = -t * (sum_i w_i log2(a_i) + lin) - log det Phi - sum_r log(row_r)
//!         - sum_m log(cap - Phi_mm)
//! ```
//!
//! with every `a_i`, `row_r` and `lin` affine in `(Phi, z)`. The Hessian is
//! `X -> Phi^{-1} X Phi^{-1}` plus a sum of rank-one terms, so the Newton
//! system is solved with the Woodbury identity around `X -> Phi X Phi`; the
//! dense system never exceeds `(#terms + #scalars)` unknowns. Coefficient
//! matrices that are themselves rank one (`s u u^H`) keep every Woodbury
//! block as an outer product, which avoids all per-term cubic work.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
// Float math for toolchains whose `core` has no inherent methods.
#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{eigh_desc, herm_inner, quad_form, solve_spd, CMat, CVec, C64};

const LN2: f64 = core::f64::consts::LN_2;

/// `tr(mat Phi) + scal . z + constant`. A missing matrix is zero.
#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub mat: Option<CMat>,
    pub scal: Vec<f64>,
    pub constant: f64,
    /// `(u, s)` with `mat = s u u^H`, when `mat` has rank one.
    pub factor: Option<(CVec, f64)>,
}

/// Factors a Hermitian matrix as `s u u^H` when all but one eigenvalue
/// vanish.
pub(crate) fn rank_one_factor(m: &CMat) -> Option<(CVec, f64)> {
    let (values, vectors) = eigh_desc(m);
    let (idx, top) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
    if *top == 0.0 {
        return None;
    }
    let rest = values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != idx)
        .fold(0.0f64, |acc, (_, v)| acc.max(v.abs()));
    if rest > 1e-12 * top.abs() {
        return None;
    }
    let u = vectors.column(idx).scale(top.abs().sqrt());
    Some((u, top.signum()))
}

impl Row {
    pub fn new(mat: Option<CMat>, scal: Vec<f64>, constant: f64) -> Self {
        let factor = mat.as_ref().and_then(rank_one_factor);
        Self {
            mat,
            scal,
            constant,
            factor,
        }
    }

    fn term_kind(&self) -> TermKind<'_> {
        match (&self.factor, &self.mat) {
            (Some((u, s)), _) => TermKind::Outer(u, *s),
            (None, Some(m)) => TermKind::Mat(m),
            (None, None) => TermKind::Zero,
        }
    }

    pub fn eval(&self, pt: &Point) -> f64 {
        let mut v = self.constant;
        if let Some(m) = &self.mat {
            v += herm_inner(m, &pt.phi);
        }
        v + self.scal.iter().zip(&pt.z).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub phi: CMat,
    pub z: Vec<f64>,
}

impl Point {
    fn step(&self, d: &Point, alpha: f64) -> Point {
        Point {
            phi: &self.phi + d.phi.scale(alpha),
            z: self
                .z
                .iter()
                .zip(&d.z)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Barrier {
    pub dim: usize,
    pub n_scalars: usize,
    /// `(weight, argument)` pairs of the `log2` objective terms.
    pub logs: Vec<(f64, Row)>,
    pub lin: Row,
    /// Rows that must stay strictly positive.
    pub rows: Vec<Row>,
    pub cap: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EngineSettings {
    pub t0: f64,
    pub growth: f64,
    pub newton_tol: f64,
    pub max_newton_per_stage: usize,
    pub max_newton_total: usize,
    pub gap_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EngineStatus {
    Converged,
    EarlyExit,
    MaxIters,
    Stalled,
}

#[derive(Debug, Clone)]
pub(crate) struct EngineResult {
    pub point: Point,
    pub status: EngineStatus,
    pub t: f64,
    pub newton_steps: usize,
    pub decrement_sq: f64,
    pub stage_objectives: Vec<f64>,
}

enum TermKind<'a> {
    Mat(&'a CMat),
    /// `s u u^H`.
    Outer(&'a CVec, f64),
    Diag(usize),
    Zero,
}

/// `sqrt_d Phi U Phi` for one term, dense or as `coef w w^H`.
enum VBlock {
    Dense(CMat),
    Outer(CVec, f64),
}

impl VBlock {
    fn inner(&self, x: &CMat) -> f64 {
        match self {
            VBlock::Dense(v) => herm_inner(v, x),
            VBlock::Outer(w, c) => c * quad_form(x, w),
        }
    }

    fn add_scaled_to(&self, acc: &mut CMat, coef: f64) {
        match self {
            VBlock::Dense(v) => *acc += v.scale(coef),
            VBlock::Outer(w, c) => add_outer(acc, w, coef * c),
        }
    }
}

fn add_outer(acc: &mut CMat, w: &CVec, coef: f64) {
    if coef == 0.0 {
        return;
    }
    let n = w.len();
    for col in 0..n {
        let wc = w[col].conj() * coef;
        for row in 0..n {
            acc[(row, col)] += w[row] * wc;
        }
    }
}

/// One rank-one Hessian contribution `d (u, beta)(u, beta)^T`, stored with
/// `sqrt_d`.
struct Term<'a> {
    sqrt_d: f64,
    kind: TermKind<'a>,
    scal: Option<&'a [f64]>,
}

impl Term<'_> {
    fn inner(&self, x: &CMat) -> f64 {
        match self.kind {
            TermKind::Mat(m) => herm_inner(m, x),
            TermKind::Outer(u, s) => s * quad_form(x, u),
            TermKind::Diag(i) => x[(i, i)].re,
            TermKind::Zero => 0.0,
        }
    }

    /// `<U, V>` without forming `V` when it is an outer product.
    fn inner_v(&self, v: &VBlock) -> f64 {
        match (v, &self.kind) {
            (VBlock::Dense(d), _) => self.inner(d),
            (VBlock::Outer(w, c), TermKind::Outer(u, s)) => c * s * u.dotc(w).norm_sqr(),
            (VBlock::Outer(w, c), TermKind::Diag(i)) => c * w[*i].norm_sqr(),
            (VBlock::Outer(w, c), TermKind::Mat(m)) => c * quad_form(m, w),
            (VBlock::Outer(..), TermKind::Zero) => 0.0,
        }
    }

    fn beta(&self, i: usize) -> f64 {
        self.scal.map_or(0.0, |s| s[i])
    }

    fn add_scaled_to(&self, acc: &mut CMat, coef: f64) {
        match self.kind {
            TermKind::Mat(m) => *acc += m.scale(coef),
            TermKind::Outer(u, s) => add_outer(acc, u, coef * s),
            TermKind::Diag(i) => acc[(i, i)] += C64::new(coef, 0.0),
            TermKind::Zero => {}
        }
    }
}

/// Factorized Newton system at one point.
struct NewtonSystem<'a> {
    phi: &'a CMat,
    w: CMat,
    terms: Vec<Term<'a>>,
    /// `sqrt_d_j * Phi U_j Phi`.
    v: Vec<VBlock>,
    kmat: DMatrix<f64>,
    /// For each scalar: `K^{-1} y_i` and `X_i = sum_j V_j c_ij`.
    scalar_cols: Vec<(Vec<f64>, CMat)>,
    schur: DMatrix<f64>,
    n_scalars: usize,
}

impl NewtonSystem<'_> {
    fn y(&self, i: usize) -> Vec<f64> {
        self.terms.iter().map(|t| t.sqrt_d * t.beta(i)).collect()
    }

    /// `<r_i, X>` where `r_i = sum_j y_ij sqrt_d_j U_j`.
    fn r_inner(&self, i: usize, x: &CMat) -> f64 {
        self.terms
            .iter()
            .map(|t| t.sqrt_d * t.beta(i) * t.sqrt_d * t.inner(x))
            .sum()
    }

    fn combine_v(&self, coefs: &[f64]) -> CMat {
        let n = self.phi.nrows();
        let mut out = CMat::zeros(n, n);
        for (vj, c) in self.v.iter().zip(coefs) {
            if *c != 0.0 {
                vj.add_scaled_to(&mut out, *c);
            }
        }
        out
    }

    /// Applies `H_phiphi^{-1}` to a Hermitian matrix.
    fn apply_inv_phiphi(&self, r: &CMat) -> Option<CMat> {
        let prp = self.phi * r * self.phi;
        let b = DVector::from_iterator(self.v.len(), self.v.iter().map(|vj| vj.inner(r)));
        if b.is_empty() {
            return Some(prp);
        }
        let c = solve_spd(&self.kmat, &b)?;
        Some(prp - self.combine_v(c.as_slice()))
    }

    fn solve(&self, r_phi: &CMat, r_z: &[f64]) -> Option<Point> {
        let y0 = self.apply_inv_phiphi(r_phi)?;
        let q = self.n_scalars;
        if q == 0 {
            return Some(Point {
                phi: y0,
                z: Vec::new(),
            });
        }
        let rhs = DVector::from_iterator(q, (0..q).map(|i| r_z[i] - self.r_inner(i, &y0)));
        let dz = solve_spd(&self.schur, &rhs)?;
        let mut dphi = y0;
        for (i, (_, xi)) in self.scalar_cols.iter().enumerate() {
            dphi -= xi.scale(dz[i]);
        }
        Some(Point {
            phi: dphi,
            z: dz.iter().copied().collect(),
        })
    }

    /// Exact Hessian action.
    fn apply(&self, d: &Point) -> Point {
        let mut out_phi = &self.w * &d.phi * &self.w;
        let mut out_z = vec![0.0; self.n_scalars];
        for t in &self.terms {
            let mut kappa = t.inner(&d.phi);
            for (i, dz) in d.z.iter().enumerate() {
                kappa += t.beta(i) * dz;
            }
            kappa *= t.sqrt_d;
            t.add_scaled_to(&mut out_phi, t.sqrt_d * kappa);
            for (i, o) in out_z.iter_mut().enumerate() {
                *o += t.sqrt_d * kappa * t.beta(i);
            }
        }
        Point {
            phi: out_phi,
            z: out_z,
        }
    }
}

impl Barrier {
    /// Barrier value, or `None` outside the domain.
    pub fn value(&self, pt: &Point, t: f64) -> Option<f64> {
        let chol = pt.phi.clone().cholesky()?;
        let mut logdet = 0.0;
        for i in 0..self.dim {
            // Complex sqrt accepts a negative pivot with a roundoff
            // imaginary part, so require the pivot to be essentially real.
            let pivot = chol.l_dirty()[(i, i)];
            let d = pivot.re;
            if d <= 0.0 || !d.is_finite() || pivot.im.abs() > 1e-6 * d {
                return None;
            }
            logdet += 2.0 * d.ln();
        }
        let mut barrier = -logdet;
        for i in 0..self.dim {
            let s = self.cap - pt.phi[(i, i)].re;
            if s <= 0.0 {
                return None;
            }
            barrier -= s.ln();
        }
        for row in &self.rows {
            let s = row.eval(pt);
            if s <= 0.0 || !s.is_finite() {
                return None;
            }
            barrier -= s.ln();
        }
        Some(barrier - t * self.objective(pt)?)
    }

    /// Objective `sum w log2(a) + lin`, or `None` when a log argument is not
    /// positive.
    pub fn objective(&self, pt: &Point) -> Option<f64> {
        let mut f = self.lin.eval(pt);
        for (w, row) in &self.logs {
            let a = row.eval(pt);
            if a <= 0.0 {
                return None;
            }
            f += w * a.log2();
        }
        Some(f)
    }

    fn gradient(&self, pt: &Point, w: &CMat, t: f64) -> Point {
        let mut g_phi = -w.clone();
        let mut g_z = vec![0.0; self.n_scalars];
        let mut add_row = |row: &Row, coef: f64, g_phi: &mut CMat| {
            if let Some(m) = &row.mat {
                *g_phi += m.scale(coef);
            }
            for (g, s) in g_z.iter_mut().zip(&row.scal) {
                *g += coef * s;
            }
        };
        for (wt, row) in &self.logs {
            let a = row.eval(pt);
            add_row(row, -t * wt / (LN2 * a), &mut g_phi);
        }
        add_row(&self.lin, -t, &mut g_phi);
        for row in &self.rows {
            add_row(row, -1.0 / row.eval(pt), &mut g_phi);
        }
        for i in 0..self.dim {
            g_phi[(i, i)] += C64::new(1.0 / (self.cap - pt.phi[(i, i)].re), 0.0);
        }
        Point { phi: g_phi, z: g_z }
    }

    fn newton_system<'a>(&'a self, pt: &'a Point, t: f64) -> Option<NewtonSystem<'a>> {
        let chol = pt.phi.clone().cholesky()?;
        let w = chol.inverse();
        let phi = &pt.phi;
        let mut terms = Vec::new();
        for (wt, row) in &self.logs {
            if *wt == 0.0 {
                continue;
            }
            let a = row.eval(pt);
            let sqrt_d = (t * wt / LN2).sqrt() / a;
            terms.push(Term {
                sqrt_d,
                kind: row.term_kind(),
                scal: Some(&row.scal),
            });
        }
        for row in &self.rows {
            let s = row.eval(pt);
            terms.push(Term {
                sqrt_d: 1.0 / s,
                kind: row.term_kind(),
                scal: Some(&row.scal),
            });
        }
        for i in 0..self.dim {
            terms.push(Term {
                sqrt_d: 1.0 / (self.cap - phi[(i, i)].re),
                kind: TermKind::Diag(i),
                scal: None,
            });
        }
        let n = self.dim;
        let v: Vec<VBlock> = terms
            .iter()
            .map(|term| match term.kind {
                TermKind::Mat(m) => VBlock::Dense((phi * m * phi).scale(term.sqrt_d)),
                TermKind::Outer(u, s) => VBlock::Outer(phi * u, term.sqrt_d * s),
                TermKind::Zero => VBlock::Outer(CVec::zeros(n), 0.0),
                TermKind::Diag(i) => VBlock::Outer(phi.column(i).into_owned(), term.sqrt_d),
            })
            .collect();
        let nt = terms.len();
        let mut kmat = DMatrix::<f64>::identity(nt, nt);
        for a in 0..nt {
            for b in a..nt {
                let value = terms[a].sqrt_d * terms[a].inner_v(&v[b]);
                kmat[(a, b)] += value;
                if a != b {
                    kmat[(b, a)] += value;
                }
            }
        }
        let mut sys = NewtonSystem {
            phi,
            w,
            terms,
            v,
            kmat,
            scalar_cols: Vec::new(),
            schur: DMatrix::zeros(self.n_scalars, self.n_scalars),
            n_scalars: self.n_scalars,
        };
        let q = self.n_scalars;
        let mut cols = Vec::with_capacity(q);
        for i in 0..q {
            let y = DVector::from_vec(sys.y(i));
            let c = if nt == 0 {
                DVector::zeros(0)
            } else {
                solve_spd(&sys.kmat, &y)?
            };
            let xi = sys.combine_v(c.as_slice());
            cols.push((c.iter().copied().collect(), xi));
        }
        sys.scalar_cols = cols;
        let mut schur = DMatrix::<f64>::zeros(q, q);
        for i in 0..q {
            let yi = sys.y(i);
            for k in 0..q {
                let yk = sys.y(k);
                let hss: f64 = yi.iter().zip(&yk).map(|(a, b)| a * b).sum();
                schur[(i, k)] = hss - sys.r_inner(i, &sys.scalar_cols[k].1);
            }
        }
        // Symmetrize against rounding.
        let schur_t = schur.transpose();
        sys.schur = (schur + schur_t) * 0.5;
        Some(sys)
    }

    /// Newton direction and squared decrement, with one step of iterative
    /// refinement against the exact Hessian action.
    fn newton_step(&self, pt: &Point, t: f64) -> Option<(Point, f64)> {
        let sys = self.newton_system(pt, t)?;
        let g = self.gradient(pt, &sys.w, t);
        let neg_phi = -g.phi.clone();
        let neg_z: Vec<f64> = g.z.iter().map(|x| -x).collect();
        let mut d = sys.solve(&neg_phi, &neg_z)?;
        for _ in 0..2 {
            let hd = sys.apply(&d);
            let res_phi = &neg_phi - &hd.phi;
            let res_z: Vec<f64> = neg_z.iter().zip(&hd.z).map(|(a, b)| a - b).collect();
            let scale = herm_inner(&neg_phi, &neg_phi).sqrt().max(1e-300);
            if herm_inner(&res_phi, &res_phi).sqrt() <= 1e-13 * scale
                && res_z.iter().all(|r| r.abs() <= 1e-13 * scale.max(1.0))
            {
                break;
            }
            let corr = sys.solve(&res_phi, &res_z)?;
            d = d.step(&corr, 1.0);
        }
        d.phi = crate::linalg::hermitian_part(&d.phi);
        let dec =
            -(herm_inner(&g.phi, &d.phi) + g.z.iter().zip(&d.z).map(|(a, b)| a * b).sum::<f64>());
        Some((d, dec))
    }

    /// Centers at barrier weight `t`. `exit` is polled after every accepted
    /// step.
    fn center(
        &self,
        mut pt: Point,
        t: f64,
        settings: &EngineSettings,
        budget: &mut usize,
        exit: &dyn Fn(&Point) -> bool,
    ) -> (Point, EngineStatus, f64) {
        let mut last_dec = f64::INFINITY;
        for _ in 0..settings.max_newton_per_stage {
            if *budget == 0 {
                return (pt, EngineStatus::MaxIters, last_dec);
            }
            let Some((d, dec)) = self.newton_step(&pt, t) else {
                return (pt, EngineStatus::Stalled, last_dec);
            };
            last_dec = dec;
            if !dec.is_finite() {
                return (pt, EngineStatus::Stalled, last_dec);
            }
            if dec / 2.0 <= settings.newton_tol {
                return (pt, EngineStatus::Converged, dec);
            }
            *budget -= 1;
            let Some(f0) = self.value(&pt, t) else {
                return (pt, EngineStatus::Stalled, dec);
            };
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha > 1e-14 {
                let cand = pt.step(&d, alpha);
                if let Some(f1) = self.value(&cand, t) {
                    if f1 <= f0 - 0.25 * alpha * dec {
                        accepted = Some(cand);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some(next) = accepted else {
                // No decrease representable in floating point: treat as
                // centered when the decrement is already tiny.
                let status = if dec < 1e-6 {
                    EngineStatus::Converged
                } else {
                    EngineStatus::Stalled
                };
                return (pt, status, dec);
            };
            pt = next;
            if exit(&pt) {
                return (pt, EngineStatus::EarlyExit, dec);
            }
        }
        (pt, EngineStatus::Converged, last_dec)
    }

    /// Relative errors of the analytic gradient and Hessian action against
    /// central differences along every coordinate of the real
    /// parametrization of `(Phi, z)`.
    pub fn derivative_errors(&self, pt: &Point, t: f64, h: f64) -> Option<(f64, f64)> {
        let sys = self.newton_system(pt, t)?;
        let g = self.gradient(pt, &sys.w, t);
        let grad_at = |p: &Point| -> Option<Point> {
            let w = p.phi.clone().cholesky()?.inverse();
            Some(self.gradient(p, &w, t))
        };
        let n = self.dim;
        let mut dirs = Vec::new();
        for a in 0..n {
            for b in a..n {
                let mut re = CMat::zeros(n, n);
                re[(a, b)] = C64::new(1.0, 0.0);
                re[(b, a)] = C64::new(1.0, 0.0);
                dirs.push(Point {
                    phi: re,
                    z: vec![0.0; self.n_scalars],
                });
                if a != b {
                    let mut im = CMat::zeros(n, n);
                    im[(a, b)] = C64::new(0.0, 1.0);
                    im[(b, a)] = C64::new(0.0, -1.0);
                    dirs.push(Point {
                        phi: im,
                        z: vec![0.0; self.n_scalars],
                    });
                }
            }
        }
        for i in 0..self.n_scalars {
            let mut z = vec![0.0; self.n_scalars];
            z[i] = 1.0;
            dirs.push(Point {
                phi: CMat::zeros(n, n),
                z,
            });
        }
        let (mut g_err, mut g_ref, mut h_err, mut h_ref) = (0.0, 0.0, 0.0, 0.0);
        for d in &dirs {
            let plus = pt.step(d, h);
            let minus = pt.step(d, -h);
            let fd = (self.value(&plus, t)? - self.value(&minus, t)?) / (2.0 * h);
            let an =
                herm_inner(&g.phi, &d.phi) + g.z.iter().zip(&d.z).map(|(a, b)| a * b).sum::<f64>();
            g_err += (fd - an) * (fd - an);
            g_ref += an * an;
            let (gp, gm) = (grad_at(&plus)?, grad_at(&minus)?);
            let hd = sys.apply(d);
            let diff_phi = (&gp.phi - &gm.phi).scale(0.5 / h) - &hd.phi;
            h_err += herm_inner(&diff_phi, &diff_phi);
            h_ref += herm_inner(&hd.phi, &hd.phi);
            for ((p, m), a) in gp.z.iter().zip(&gm.z).zip(&hd.z) {
                let e = (p - m) / (2.0 * h) - a;
                h_err += e * e;
                h_ref += a * a;
            }
        }
        Some((
            g_err.sqrt() / g_ref.sqrt().max(1e-300),
            h_err.sqrt() / h_ref.sqrt().max(1e-300),
        ))
    }

    /// Barrier parameter count `m` in the duality gap bound `m / t`.
    pub fn barrier_degree(&self) -> f64 {
        (2 * self.dim + self.rows.len()) as f64
    }

    pub fn run(
        &self,
        start: Point,
        settings: &EngineSettings,
        exit: &dyn Fn(&Point) -> bool,
    ) -> EngineResult {
        let mut t = settings.t0;
        let mut pt = start;
        let mut budget = settings.max_newton_total;
        let mut stage_objectives = Vec::new();
        let mut status = EngineStatus::Converged;
        let mut dec = f64::INFINITY;
        loop {
            let (next, st, d) = self.center(pt, t, settings, &mut budget, exit);
            pt = next;
            dec = if d.is_finite() { d } else { dec };
            if let Some(f) = self.objective(&pt) {
                stage_objectives.push(f);
            }
            match st {
                EngineStatus::EarlyExit | EngineStatus::MaxIters => {
                    status = st;
                    break;
                }
                EngineStatus::Stalled => status = EngineStatus::Stalled,
                EngineStatus::Converged => {}
            }
            if self.barrier_degree() / t < settings.gap_tol {
                if status != EngineStatus::Stalled {
                    status = EngineStatus::Converged;
                }
                break;
            }
            t *= settings.growth;
        }
        let used = settings.max_newton_total - budget;
        EngineResult {
            point: pt,
            status,
            t,
            newton_steps: used,
            decrement_sq: dec,
            stage_objectives,
        }
    }
}
