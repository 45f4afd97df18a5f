//! Canonical symmetric eigendecomposition.
//!
//! Covariance matrices drive every frame choice in this crate, so their
//! eigendecompositions must be deterministic: same matrix in, bit-identical
//! basis out, regardless of how the backend orders or signs its eigenvectors.
//! This wrapper sorts eigenvalues in descending order, resolves repeated
//! eigenvalues by projecting standard basis vectors onto each eigenspace (in
//! index order, Gram-Schmidt), and fixes signs so the largest-magnitude entry
//! of every column is positive.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative Frobenius tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues below `RANK_TOL * lambda_max` are clamped to exact zero.
pub const RANK_TOL: f64 = 1e-10;
/// Eigenvalues more negative than `-RANK_TOL * scale` are a hard error.
const INDEFINITE_TOL: f64 = 1e-10;
/// Consecutive eigenvalues closer than `GROUP_TOL * lambda_max` share an
/// eigenspace for canonicalization purposes.
const GROUP_TOL: f64 = 1e-9;
/// Minimum residual norm for a projected basis vector to seed a direction.
const PROJECT_ACCEPT_TOL: f64 = 1e-6;

/// Eigendecomposition of a symmetric positive semi-definite matrix with a
/// deterministic, canonically ordered orthonormal basis.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: DVector<f64>,
    basis: DMatrix<f64>,
    rank: usize,
}

impl SpectralDecomposition {
    /// Decompose `m`, which must be symmetric within [`SYMMETRY_TOL`] and
    /// have no eigenvalue more negative than the indefiniteness tolerance.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let d = m.nrows();
        if m.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if d == 0 {
            return Err(Error::DimensionMismatch("empty matrix".into()));
        }
        let frob = m.norm();
        let asym = (m - m.transpose()).norm();
        if asym > SYMMETRY_TOL * frob.max(1.0) {
            return Err(Error::NonSymmetric(format!(
                "asymmetry {asym:.3e} exceeds tolerance at scale {frob:.3e}"
            )));
        }
        // Symmetrize before the solve so the backend sees an exactly
        // symmetric matrix.
        let sym = (m + m.transpose()).scale(0.5);
        let eig = sym.symmetric_eigen();

        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[j]
                .partial_cmp(&eig.eigenvalues[i])
                .expect("eigenvalue NaN")
        });
        let mut values = DVector::from_fn(d, |i, _| eig.eigenvalues[order[i]]);
        let mut basis = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);

        let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let lambda_max = values[0].max(0.0);
        if values[d - 1] < -INDEFINITE_TOL * scale {
            return Err(Error::IndefiniteBeyondTolerance(format!(
                "eigenvalue {:.6e} at scale {scale:.3e}",
                values[d - 1]
            )));
        }
        let clamp_below = RANK_TOL * lambda_max;
        let mut rank = 0;
        for v in values.iter_mut() {
            if *v <= clamp_below {
                *v = 0.0;
            } else {
                rank += 1;
            }
        }

        canonicalize_groups(&values, &mut basis, lambda_max);

        debug_assert!({
            let gram = basis.transpose() * &basis;
            (gram - DMatrix::identity(d, d)).norm() < 1e-8
        });

        Ok(SpectralDecomposition {
            eigenvalues: values,
            basis,
            rank,
        })
    }

    /// Eigenvalues in descending order; entries below the rank tolerance are
    /// exactly zero.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvector columns, ordered to match [`eigenvalues`].
    ///
    /// [`eigenvalues`]: Self::eigenvalues
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `B * diag(sqrt(lambda))`: maps standard normal draws to draws from a
    /// centered Gaussian with the decomposed covariance. Zero eigenvalues
    /// yield zero columns, so degenerate directions stay exactly flat.
    pub fn sqrt_transform(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = self.basis.clone();
        for c in 0..d {
            let s = self.eigenvalues[c].sqrt();
            for r in 0..d {
                out[(r, c)] *= s;
            }
        }
        out
    }

    /// Rebuild `B * diag(lambda) * B^T` (clamped spectrum).
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = self.dim();
        let scaled = DMatrix::from_fn(d, d, |r, c| self.basis[(r, c)] * self.eigenvalues[c]);
        scaled * self.basis.transpose()
    }

    /// Symmetric PSD square root `B * diag(sqrt(lambda)) * B^T`.
    pub fn sqrt_symmetric(&self) -> DMatrix<f64> {
        let d = self.dim();
        let scaled =
            DMatrix::from_fn(d, d, |r, c| self.basis[(r, c)] * self.eigenvalues[c].sqrt());
        scaled * self.basis.transpose()
    }
}

/// Replace the basis columns of each repeated-eigenvalue group with a
/// deterministic orthonormal basis of the same eigenspace, then sign-fix
/// every column.
fn canonicalize_groups(values: &DVector<f64>, basis: &mut DMatrix<f64>, lambda_max: f64) {
    let d = values.len();
    let gap = GROUP_TOL * lambda_max;
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && values[end - 1] - values[end] <= gap {
            end += 1;
        }
        if end - start > 1 {
            canonicalize_eigenspace(basis, start, end);
        }
        for c in start..end {
            sign_fix_column(basis, c);
        }
        start = end;
    }
}

/// Deterministic basis for the eigenspace spanned by columns `start..end`:
/// project standard basis vectors onto the span in index order, keep the
/// ones with non-negligible residual after Gram-Schmidt.
fn canonicalize_eigenspace(basis: &mut DMatrix<f64>, start: usize, end: usize) {
    let d = basis.nrows();
    let g = end - start;
    let span: Vec<DVector<f64>> = (start..end)
        .map(|c| DVector::from_fn(d, |r, _| basis[(r, c)]))
        .collect();
    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(g);
    for i in 0..d {
        if accepted.len() == g {
            break;
        }
        // Projection of e_i onto the eigenspace.
        let mut v = DVector::zeros(d);
        for u in &span {
            v.axpy(u[i], u, 1.0);
        }
        if orthonormalize_into(&mut v, &accepted) {
            accepted.push(v);
        }
    }
    // Numerical fallback: pad from the original columns. Unreachable for
    // genuine orthonormal spans, kept so a pathological input cannot yield a
    // rank-deficient basis.
    for u in &span {
        if accepted.len() == g {
            break;
        }
        let mut v = u.clone();
        if orthonormalize_into(&mut v, &accepted) {
            accepted.push(v);
        }
    }
    for (k, v) in accepted.iter().enumerate() {
        for r in 0..d {
            basis[(r, start + k)] = v[r];
        }
    }
}

/// Two rounds of Gram-Schmidt against `others`, then normalize. Returns
/// false when the residual is too small to define a direction.
fn orthonormalize_into(v: &mut DVector<f64>, others: &[DVector<f64>]) -> bool {
    for _ in 0..2 {
        for u in others {
            let c = u.dot(v);
            v.axpy(-c, u, 1.0);
        }
    }
    let n = v.norm();
    if n < PROJECT_ACCEPT_TOL {
        return false;
    }
    *v /= n;
    true
}

/// Flip the column so its largest-magnitude entry is positive; ties go to
/// the lowest index.
fn sign_fix_column(basis: &mut DMatrix<f64>, c: usize) {
    let d = basis.nrows();
    let mut best = 0;
    for r in 1..d {
        if basis[(r, c)].abs() > basis[(best, c)].abs() {
            best = r;
        }
    }
    if basis[(best, c)] < 0.0 {
        for r in 0..d {
            basis[(r, c)] = -basis[(r, c)];
        }
    }
}
