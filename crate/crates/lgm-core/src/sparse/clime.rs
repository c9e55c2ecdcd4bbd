//! Constrained L1-minimization estimator of the precision matrix.
//!
//! Column j solves the linear program
//! `min ||beta||_1  s.t.  ||S beta - e_j||_inf <= lambda`
//! in split-variable form (`beta = beta+ - beta-`, both nonnegative) with
//! the dense simplex solver. Columns are assembled and symmetrized with the
//! min-magnitude rule, which preserves sparsity.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::simplex::{resolve_with_basis, solve_lp, LpError};
use crate::error::{Error, Result};
use crate::numerics::CovMatrix;

/// Feasibility slack allowed on the returned estimate.
pub const CLIME_FEAS_TOL: f64 = 1e-7;

/// Split-form constraint data for one column: `A x <= b` over `x = [b+; b-]`.
fn column_lp(s: &DMatrix<f64>, j: usize, lambda: f64) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let p = s.nrows();
    let mut a = DMatrix::zeros(2 * p, 2 * p);
    for r in 0..p {
        for c in 0..p {
            let v = s[(r, c)];
            a[(r, c)] = v;
            a[(r, p + c)] = -v;
            a[(p + r, c)] = -v;
            a[(p + r, p + c)] = v;
        }
    }
    let mut b = vec![0.0; 2 * p];
    for r in 0..p {
        let e = if r == j { 1.0 } else { 0.0 };
        b[r] = lambda + e;
        b[p + r] = lambda - e;
    }
    (a, b, vec![1.0; 2 * p])
}

/// Per-column warm-start bases carried along a lambda path.
#[derive(Debug, Clone, Default)]
pub struct ClimeState {
    bases: Vec<Option<Vec<usize>>>,
}

/// Solves one column, optionally reusing a basis from a previous lambda.
fn clime_column(
    s: &DMatrix<f64>,
    j: usize,
    lambda: f64,
    warm: Option<&Vec<usize>>,
) -> Result<(Vec<f64>, Vec<usize>, f64)> {
    let p = s.nrows();
    let (a, b, c) = column_lp(s, j, lambda);
    let sol = match warm.and_then(|basis| resolve_with_basis(&a, &b, &c, basis)) {
        Some(sol) => sol,
        None => solve_lp(&a, &b, &c).map_err(|e| Error::LinearProgram {
            column: j,
            message: match e {
                LpError::Infeasible => "infeasible (lambda too small for this matrix)".into(),
                other => other.to_string(),
            },
        })?,
    };
    let beta: Vec<f64> = (0..p).map(|k| sol.x[k] - sol.x[p + k]).collect();
    Ok((beta, sol.basis, sol.objective))
}

/// Solves all columns at one lambda and symmetrizes.
pub fn clime_solve(sigma_hat: &CovMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    let mut state = ClimeState::default();
    clime_solve_warm(sigma_hat, lambda, &mut state)
}

/// As [`clime_solve`] with basis reuse across lambda values.
pub fn clime_solve_warm(
    sigma_hat: &CovMatrix,
    lambda: f64,
    state: &mut ClimeState,
) -> Result<DMatrix<f64>> {
    clime_solve_certified(sigma_hat, lambda, state).map(|(omega, _)| omega)
}

/// Solves all columns and returns the min-magnitude symmetrized estimate
/// together with the feasibility certificate `||S Omega_raw - I||_max` of
/// the assembled column solutions. The certificate is what the column
/// programs guarantee (`<= lambda` to solver tolerance); symmetrization
/// does not preserve the entrywise constraint in general.
pub fn clime_solve_certified(
    sigma_hat: &CovMatrix,
    lambda: f64,
    state: &mut ClimeState,
) -> Result<(DMatrix<f64>, f64)> {
    if lambda < 0.0 {
        return Err(Error::Domain("lambda must be nonnegative".into()));
    }
    let s = sigma_hat.matrix();
    let p = s.nrows();
    if state.bases.len() != p {
        state.bases = vec![None; p];
    }
    let columns: Vec<Result<(Vec<f64>, Vec<usize>, f64)>> = (0..p)
        .into_par_iter()
        .map(|j| clime_column(s, j, lambda, state.bases[j].as_ref()))
        .collect();
    let mut raw = DMatrix::zeros(p, p);
    for (j, col) in columns.into_iter().enumerate() {
        let (beta, basis, _) = col?;
        state.bases[j] = Some(basis);
        for k in 0..p {
            raw[(k, j)] = beta[k];
        }
    }
    let certificate = feasibility_violation(s, &raw);
    if certificate > lambda + CLIME_FEAS_TOL {
        return Err(Error::Numerical(format!(
            "column solutions violate the constraint: {certificate:.3e} > {lambda:.3e} + tol"
        )));
    }
    Ok((symmetrize_min_magnitude(&raw), certificate))
}

/// `||S Omega - I||_max`.
pub fn feasibility_violation(s: &DMatrix<f64>, omega: &DMatrix<f64>) -> f64 {
    let p = s.nrows();
    let prod = s * omega;
    let mut v = 0.0f64;
    for i in 0..p {
        for j in 0..p {
            let target = if i == j { 1.0 } else { 0.0 };
            v = v.max((prod[(i, j)] - target).abs());
        }
    }
    v
}

/// Keeps, of each pair (Omega_ij, Omega_ji), the entry of smaller magnitude.
fn symmetrize_min_magnitude(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let p = raw.nrows();
    let mut out = raw.clone();
    for i in 0..p {
        for j in 0..i {
            let keep = if raw[(i, j)].abs() <= raw[(j, i)].abs() {
                raw[(i, j)]
            } else {
                raw[(j, i)]
            };
            out[(i, j)] = keep;
            out[(j, i)] = keep;
        }
    }
    out
}

/// Total objective of the per-column programs (used by the reference-solver
/// cross-check).
pub fn clime_column_objectives(sigma_hat: &CovMatrix, lambda: f64) -> Result<Vec<f64>> {
    let s = sigma_hat.matrix();
    (0..s.nrows())
        .map(|j| clime_column(s, j, lambda, None).map(|(_, _, obj)| obj))
        .collect()
}
