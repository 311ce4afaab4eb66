//! Complex dense linear algebra primitives shared by all modules:
//! Hermitian eigendecomposition, positive definite solves, spectral radius,
//! and symmetry checks.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = nalgebra::Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMatrix = DMatrix<C64>;
/// Dynamically sized complex vector.
pub type CVector = DVector<C64>;

/// Absolute tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Hermitian matrix wrapper. Construction checks the symmetry invariant and
/// stores the exactly symmetrized form `(A + A^H) / 2`, so downstream
/// decompositions never see floating-point drift.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    m: CMatrix,
}

impl HermitianMatrix {
    /// Accepts a square matrix that is Hermitian to within [`HERMITIAN_TOL`]
    /// (absolute, entrywise) and symmetrizes it.
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let mut max_asym = 0.0f64;
        for k in 0..m.nrows() {
            for l in k..m.ncols() {
                let asym = (m[(k, l)] - m[(l, k)].conj()).norm();
                max_asym = max_asym.max(asym);
            }
        }
        if max_asym > HERMITIAN_TOL {
            return Err(Error::NotHermitian {
                max_asymmetry: max_asym,
                tolerance: HERMITIAN_TOL,
            });
        }
        Ok(Self::enforce(m))
    }

    /// Symmetrizes unconditionally. For internal use where Hermitianity holds
    /// analytically and only floating-point drift needs removing.
    pub(crate) fn enforce(m: CMatrix) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let n = m.nrows();
        let mut s = m;
        for k in 0..n {
            s[(k, k)] = C64::new(s[(k, k)].re, 0.0);
            for l in (k + 1)..n {
                let avg = (s[(k, l)] + s[(l, k)].conj()) * 0.5;
                s[(k, l)] = avg;
                s[(l, k)] = avg.conj();
            }
        }
        Self { m: s }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: CMatrix::identity(n, n),
        }
    }

    /// Diagonal matrix from real entries.
    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = CMatrix::zeros(n, n);
        for (k, &d) in diag.iter().enumerate() {
            m[(k, k)] = C64::new(d, 0.0);
        }
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    /// Eigendecomposition; see [`hermitian_evd`].
    pub fn evd(&self) -> Evd {
        hermitian_evd(self)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self
            .evd()
            .eigenvalues()
            .as_slice()
            .last()
            .expect("nonempty spectrum")
    }

    pub fn is_positive_definite(&self) -> bool {
        try_cholesky(&self.m).is_some()
    }

    pub fn trace_real(&self) -> f64 {
        (0..self.dim()).map(|k| self.m[(k, k)].re).sum()
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        (&self.m - &other.m).norm()
    }
}

/// Eigendecomposition of a Hermitian matrix: real eigenvalues sorted in
/// non-increasing order, eigenvector columns aligned with them.
#[derive(Debug, Clone)]
pub struct Evd {
    eigenvalues: DVector<f64>,
    eigenvectors: CMatrix,
}

impl Evd {
    /// Eigenvalues, non-increasing.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Unitary matrix whose k-th column pairs with the k-th eigenvalue.
    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    /// Rebuilds `U diag(eigenvalues) U^H`.
    pub fn reconstruct(&self) -> HermitianMatrix {
        self.reconstruct_with(self.eigenvalues.as_slice())
    }

    /// Rebuilds `U diag(values) U^H` with a replaced spectrum (same basis).
    pub fn reconstruct_with(&self, values: &[f64]) -> HermitianMatrix {
        let n = self.eigenvectors.nrows();
        assert_eq!(values.len(), n, "spectrum length must match dimension");
        let mut scaled = self.eigenvectors.clone();
        for (k, &v) in values.iter().enumerate() {
            scaled.column_mut(k).scale_mut(v);
        }
        HermitianMatrix::enforce(&scaled * self.eigenvectors.adjoint())
    }
}

/// Hermitian eigendecomposition with eigenvalues sorted in non-increasing
/// order. Ties keep the decomposition's native order.
pub fn hermitian_evd(m: &HermitianMatrix) -> Evd {
    let se = nalgebra::SymmetricEigen::new(m.m.clone());
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps native order among ties.
    order.sort_by(|&a, &b| {
        se.eigenvalues[b]
            .partial_cmp(&se.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| se.eigenvalues[k]));
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.column_mut(dst).copy_from(&se.eigenvectors.column(src));
    }
    Evd {
        eigenvalues,
        eigenvectors,
    }
}

/// Largest eigenvalue modulus of a square complex matrix, computed as the
/// Gelfand limit `lim ||A^k||^(1/k)` by normalized repeated squaring.
///
/// After `m` squarings the power is `k = 2^m`; polynomial transients decay
/// like `exp(p ln(k) / k)`, so 60 squarings put the truncation error far
/// below roundoff even for defective matrices.
pub fn spectral_radius(m: &CMatrix) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let scale = m.norm();
    if scale == 0.0 || !scale.is_finite() {
        return Ok(if scale == 0.0 { 0.0 } else { f64::INFINITY });
    }
    let mut log_rho = scale.ln();
    let mut b = m.unscale(scale);
    let squarings = 60;
    for k in 1..=squarings {
        let sq = &b * &b;
        let t = sq.norm();
        if t == 0.0 {
            return Ok(0.0);
        }
        log_rho += t.ln() / 2f64.powi(k);
        b = sq.unscale(t);
    }
    Ok(log_rho.exp())
}

/// Cholesky factorization that actually verifies positive definiteness: the
/// generic complex routine takes complex square roots of negative pivots
/// instead of failing, so the factor diagonal is validated to be real and
/// positive.
pub(crate) fn try_cholesky(m: &CMatrix) -> Option<Cholesky<C64, Dyn>> {
    let chol = Cholesky::new(m.clone())?;
    let n = m.nrows();
    for k in 0..n {
        let d = chol.l_dirty()[(k, k)];
        if !(d.re.is_finite() && d.re > 0.0 && d.im.abs() <= 1e-6 * d.re) {
            return None;
        }
    }
    Some(chol)
}

/// Cholesky factorization of a Hermitian positive definite matrix, with a
/// spectral diagnostic attached when the factorization fails.
pub(crate) fn cholesky_hpd(m: &HermitianMatrix) -> Result<Cholesky<C64, Dyn>> {
    try_cholesky(&m.m).ok_or_else(|| {
        let evd = m.evd();
        let max = evd.eigenvalues()[0];
        let min = evd.eigenvalues()[m.dim() - 1];
        Error::NotPositiveDefinite {
            detail: format!("eigenvalue range [{min:.6e}, {max:.6e}]"),
        }
    })
}

/// Solves `m x = rhs` for Hermitian positive definite `m`.
pub fn solve_hpd(m: &HermitianMatrix, rhs: &CMatrix) -> Result<CMatrix> {
    if rhs.nrows() != m.dim() {
        return Err(Error::dim(format!(
            "rhs has {} rows, matrix dimension is {}",
            rhs.nrows(),
            m.dim()
        )));
    }
    Ok(cholesky_hpd(m)?.solve(rhs))
}

/// Vector right-hand-side convenience for [`solve_hpd`].
pub fn solve_hpd_vector(m: &HermitianMatrix, rhs: &CVector) -> Result<CVector> {
    if rhs.len() != m.dim() {
        return Err(Error::dim(format!(
            "rhs has length {}, matrix dimension is {}",
            rhs.len(),
            m.dim()
        )));
    }
    Ok(cholesky_hpd(m)?.solve(rhs))
}

/// Exchange-conjugate transform `J M* J`: reverses row and column order and
/// conjugates. A matrix is centro-Hermitian iff it is a fixed point.
pub fn exchange_conjugate(m: &CMatrix) -> CMatrix {
    let (r, c) = (m.nrows(), m.ncols());
    CMatrix::from_fn(r, c, |i, j| m[(r - 1 - i, c - 1 - j)].conj())
}

/// Frobenius norm of the centro-Hermitian symmetry violation `M - J M* J`.
pub fn centro_hermitian_violation(m: &CMatrix) -> f64 {
    (m - exchange_conjugate(m)).norm()
}
