use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal inflations tried after a plain factorization fails, as multiples
/// of the mean diagonal entry.
pub const JITTER_SCHEDULE: [f64; 4] = [1e-10, 1e-8, 1e-6, 1e-4];

/// Lower-triangular factor `L` with `L·Lᵀ = A + jitter·I`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Total diagonal inflation that was needed (0 when none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_mut(&self, b: &mut DMatrix<f64>) {
        let ok = self.l.solve_lower_triangular_mut(b);
        debug_assert!(ok);
    }

    /// Solves `L x = b` for a vector.
    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        let ok = self.l.solve_lower_triangular_mut(&mut out);
        debug_assert!(ok);
        out
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.l.solve_lower_triangular_mut(&mut out);
        self.l.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    /// `(A + jitter·I)^{-1}`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::<f64>::identity(n, n);
        self.l.solve_lower_triangular_mut(&mut inv);
        self.l.tr_solve_lower_triangular_mut(&mut inv);
        // symmetrize away rounding asymmetry
        let t = inv.transpose();
        (inv + t) * 0.5
    }
}

/// Factorizes a symmetric positive-definite matrix, inflating the diagonal
/// through [`JITTER_SCHEDULE`] when the plain factorization fails.
///
/// `name` identifies the matrix in the error message.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, name: &str) -> Result<CholeskyFactor> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::invalid(format!(
            "{name}: expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("{name}: matrix has non-finite entries")));
    }
    let scale = a.amax().max(1.0);
    for j in 0..n {
        for i in (j + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!("{name}: not symmetric at ({i}, {j})")));
            }
        }
    }

    let mean_diag = a.diagonal().mean();
    let attempts = std::iter::once(0.0).chain(JITTER_SCHEDULE.iter().map(|f| f * mean_diag.abs()));
    for jitter in attempts {
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            let l = chol.unpack();
            if l.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                if jitter > 0.0 {
                    log::debug!("{name}: factorized with jitter {jitter:.3e}");
                }
                return Ok(CholeskyFactor { l, jitter });
            }
        }
    }
    Err(Error::numerical(format!(
        "{name}: Cholesky factorization failed even with jitter {:.3e}",
        JITTER_SCHEDULE[JITTER_SCHEDULE.len() - 1] * mean_diag.abs()
    )))
}

/// `(A + jitter·I)^{-1} B` by forward and back substitution.
pub fn chol_solve(f: &CholeskyFactor, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != f.dim() {
        return Err(Error::invalid(format!(
            "right-hand side has {} rows, factor is {}x{}",
            b.nrows(),
            f.dim(),
            f.dim()
        )));
    }
    let mut x = b.clone();
    f.l.solve_lower_triangular_mut(&mut x);
    f.l.tr_solve_lower_triangular_mut(&mut x);
    Ok(x)
}

/// log det(A + jitter·I) = 2 Σ log L_ii.
pub fn log_det(f: &CholeskyFactor) -> f64 {
    2.0 * f.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}
