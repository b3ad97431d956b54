//! Dense complex linear-algebra helpers shared by the lifted phase design and
//! the conic solver.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type C64 = nalgebra::Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Real inner product `Re tr(A B)` on Hermitian matrices.
pub fn herm_inner(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.nrows();
    let mut acc = 0.0;
    for col in 0..n {
        for row in 0..n {
            let x = a[(row, col)];
            let y = b[(col, row)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

/// `Re tr(A v v^H) = Re(v^H A v)`.
pub fn quad_form(a: &CMat, v: &CVec) -> f64 {
    let av = a * v;
    v.iter()
        .zip(av.iter())
        .map(|(x, y)| (x.conj() * y).re)
        .sum()
}

/// Outer product `v v^H`.
pub fn outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// `(M + M^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    m.is_square() && hermitian_defect(m) <= tol
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Column `i` of the returned matrix is the eigenvector of
/// the `i`-th eigenvalue.
pub fn eigh_desc(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    let (values, _) = eigh_desc(m);
    values.last().copied().unwrap_or(0.0)
}

/// Real part of the trace.
pub fn trace_re(m: &CMat) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

pub fn max_abs(v: &CVec) -> f64 {
    v.iter().fold(0.0, |acc: f64, z| acc.max(z.norm()))
}

/// Solves the small symmetric positive definite system `K x = b`, falling
/// back to LU when the Cholesky factorization breaks down numerically.
pub(crate) fn solve_spd(k: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = k.clone().cholesky() {
        return Some(chol.solve(b));
    }
    k.clone().lu().solve(b)
}
