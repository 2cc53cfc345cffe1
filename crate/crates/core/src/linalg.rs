//! Rank-revealing decompositions and the projections built on them.
//!
//! Everything here goes through one singular value decomposition per call.
//! Matrices in this engine are tiny (`n x d` volatility blocks), so the SVD is
//! both the most robust rank revealer and cheap enough to call per path step.
//!
//! Conventions: an operator `A` with `m` rows and `c` columns acts on vectors
//! of length `c`. Its kernel and row space split that domain orthogonally.
//! To split `b + delta - r 1` against `ker(sigma')`, pass `sigma'` as the
//! operator.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

pub type MatrixReal = DMatrix<f64>;
pub type VectorReal = DVector<f64>;

/// Relative singular-value cutoff used when callers do not supply one.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Rank of an operator together with orthonormal bases of its kernel and row
/// space (both subspaces of the operator's domain).
#[derive(Debug, Clone)]
pub struct ProjectionReport {
    pub rank: usize,
    pub tolerance: f64,
    /// Singular values in descending order, one per domain dimension
    /// (padded with zeros when the operator has fewer rows than columns).
    pub singular_values: Vec<f64>,
    pub kernel_basis: Vec<VectorReal>,
    pub rowspace_basis: Vec<VectorReal>,
}

impl ProjectionReport {
    /// Orthogonal projection of `v` onto the row space.
    pub fn project_rowspace(&self, v: &VectorReal) -> VectorReal {
        let mut out = VectorReal::zeros(v.len());
        for r in &self.rowspace_basis {
            out.axpy(r.dot(v), r, 1.0);
        }
        out
    }

    /// Smallest retained singular value divided by the largest one; zero for
    /// the zero operator.
    pub fn conditioning(&self) -> f64 {
        match (self.singular_values.first(), self.rank) {
            (Some(&top), r) if top > 0.0 && r > 0 => self.singular_values[r - 1] / top,
            _ => 0.0,
        }
    }
}

pub(crate) fn ensure_finite(a: &MatrixReal) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid("matrix has non-finite entries"))
    }
}

fn ensure_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("tolerance must be positive, got {tol}")))
    }
}

/// Numerical rank of `a`: the number of singular values above
/// `tol * largest`. The all-zero operator has rank 0.
pub fn rank_with_tolerance(a: &MatrixReal, tol: f64) -> Result<ProjectionReport> {
    ensure_tol(tol)?;
    ensure_finite(a)?;
    let cols = a.ncols();
    if cols == 0 {
        return Ok(ProjectionReport {
            rank: 0,
            tolerance: tol,
            singular_values: Vec::new(),
            kernel_basis: Vec::new(),
            rowspace_basis: Vec::new(),
        });
    }
    // Pad short operators with zero rows so V comes back square and carries
    // the whole kernel.
    let padded;
    let work = if a.nrows() < cols {
        let mut m = DMatrix::zeros(cols, cols);
        m.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
        padded = m;
        &padded
    } else {
        a
    };
    let svd = work.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut pairs: Vec<(f64, VectorReal)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, v_t.row(k).transpose()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs.truncate(cols);

    let top = pairs.first().map(|p| p.0).unwrap_or(0.0);
    let rank = if top > 0.0 {
        pairs.iter().filter(|p| p.0 > tol * top).count()
    } else {
        0
    };
    let singular_values = pairs.iter().map(|p| p.0).collect();
    let mut rowspace_basis = Vec::with_capacity(rank);
    let mut kernel_basis = Vec::with_capacity(cols - rank);
    for (k, (_, v)) in pairs.into_iter().enumerate() {
        if k < rank {
            rowspace_basis.push(v);
        } else {
            kernel_basis.push(v);
        }
    }
    Ok(ProjectionReport {
        rank,
        tolerance: tol,
        singular_values,
        kernel_basis,
        rowspace_basis,
    })
}

/// Splits `v` (a vector in the domain of `op`) into its kernel and row-space
/// components: `v = v_ker + v_row`, `op * v_ker ~ 0`.
pub fn project_kernel(op: &MatrixReal, v: &VectorReal, tol: f64) -> Result<(VectorReal, VectorReal)> {
    if v.len() != op.ncols() {
        return Err(invalid(format!(
            "vector of length {} does not match operator domain {}",
            v.len(),
            op.ncols()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("vector has non-finite entries"));
    }
    let report = rank_with_tolerance(op, tol)?;
    let v_row = report.project_rowspace(v);
    let v_ker = v - &v_row;
    Ok((v_ker, v_row))
}

/// Minimal-norm solution of `sigma * x = rhs` together with its residual norm.
#[derive(Debug, Clone)]
pub struct MinNormSolution {
    pub solution: VectorReal,
    pub residual: f64,
    pub rank: usize,
}

/// Least-squares minimal-norm solve; never fails on inconsistent systems,
/// the residual says how far `rhs` is from the range.
pub fn min_norm_solution(sigma: &MatrixReal, rhs: &VectorReal, tol: f64) -> Result<MinNormSolution> {
    if rhs.len() != sigma.nrows() {
        return Err(invalid(format!(
            "right-hand side of length {} does not match {} rows",
            rhs.len(),
            sigma.nrows()
        )));
    }
    if rhs.iter().any(|x| !x.is_finite()) {
        return Err(invalid("right-hand side has non-finite entries"));
    }
    let report = rank_with_tolerance(sigma, tol)?;
    let mut x = VectorReal::zeros(sigma.ncols());
    for (k, v) in report.rowspace_basis.iter().enumerate() {
        let s = report.singular_values[k];
        let u_scaled = sigma * v; // = s * u_k
        x.axpy(u_scaled.dot(rhs) / (s * s), v, 1.0);
    }
    let residual = (sigma * &x - rhs).norm();
    Ok(MinNormSolution {
        solution: x,
        residual,
        rank: report.rank,
    })
}

/// Residual threshold shared by every range-membership test in the crate.
pub fn range_threshold(tol: f64, rhs_norm: f64) -> f64 {
    tol * rhs_norm.max(1.0)
}

/// Minimal-norm solution of `sigma * theta = rhs`, which lies in
/// `ker(sigma)^perp`. Fails with [`Error::NoSolution`] when `rhs` is not in the
/// range of `sigma` within `tol * max(1, |rhs|)`.
pub fn solve_min_norm_rowspace(sigma: &MatrixReal, rhs: &VectorReal, tol: f64) -> Result<VectorReal> {
    let sol = min_norm_solution(sigma, rhs, tol)?;
    if sol.residual > range_threshold(tol, rhs.norm()) {
        return Err(Error::NoSolution {
            residual: sol.residual,
        });
    }
    Ok(sol.solution)
}

/// Deterministic non-vanishing selector of the row space.
///
/// Returns the row of `sigma` with the largest norm (the first one on ties),
/// or zero when `sigma` has numerical rank 0. The result is a row of `sigma`,
/// so it lies in the row space exactly, and it is smooth wherever the pivot
/// row does not change.
pub fn lemma1_selector(sigma: &MatrixReal, tol: f64) -> Result<VectorReal> {
    let report = rank_with_tolerance(sigma, tol)?;
    if report.rank == 0 {
        return Ok(VectorReal::zeros(sigma.ncols()));
    }
    let mut best = 0;
    let mut best_norm = -1.0;
    for (i, row) in sigma.row_iter().enumerate() {
        let norm = row.norm();
        if norm > best_norm {
            best = i;
            best_norm = norm;
        }
    }
    Ok(sigma.row(best).transpose())
}

/// Orthogonal projector onto the kernel of `op` (a square matrix on the
/// operator's domain). Its row space is the kernel itself.
pub fn kernel_projector(op: &MatrixReal, tol: f64) -> Result<MatrixReal> {
    let report = rank_with_tolerance(op, tol)?;
    let c = op.ncols();
    let mut p = DMatrix::zeros(c, c);
    for k in &report.kernel_basis {
        p += k * k.transpose();
    }
    Ok(p)
}
