//! Sparse inverse-covariance estimation over the EM-fitted covariance:
//! graphical lasso and constrained L1-minimization, each producing a
//! regularization path over a descending lambda grid with warm starts.

pub mod clime;
pub mod glasso;
mod simplex;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::CovMatrix;

pub use clime::{clime_solve, clime_solve_certified, feasibility_violation, ClimeState, CLIME_FEAS_TOL};
pub use glasso::{glasso_objective, glasso_solve, kkt_residual};

/// Which sparse estimator backs a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparseMethod {
    Glasso,
    Clime,
}

impl std::str::FromStr for SparseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glasso" => Ok(SparseMethod::Glasso),
            "clime" => Ok(SparseMethod::Clime),
            other => Err(Error::Domain(format!(
                "unknown method `{other}` (expected glasso or clime)"
            ))),
        }
    }
}

impl std::fmt::Display for SparseMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SparseMethod::Glasso => write!(f, "glasso"),
            SparseMethod::Clime => write!(f, "clime"),
        }
    }
}

/// Family of sparse precision estimates indexed by descending lambda.
#[derive(Debug, Clone)]
pub struct PrecisionPath {
    pub lambdas: Vec<f64>,
    pub omegas: Vec<DMatrix<f64>>,
    pub method: SparseMethod,
}

impl PrecisionPath {
    /// Off-diagonal nonzero count of entry `k` of the path.
    pub fn nnz_offdiag(&self, k: usize) -> usize {
        let m = &self.omegas[k];
        let mut count = 0;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if i != j && m[(i, j)] != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Largest off-diagonal magnitude of the covariance estimate; the smallest
/// lambda producing a fully diagonal graphical-lasso solution.
pub fn offdiag_max(sigma_hat: &CovMatrix) -> f64 {
    let m = sigma_hat.matrix();
    let mut v = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                v = v.max(m[(i, j)].abs());
            }
        }
    }
    v
}

/// Default grid: `count` log-spaced values from `offdiag_max` down to 1% of
/// it, descending.
pub fn default_lambda_grid(sigma_hat: &CovMatrix, count: usize) -> Vec<f64> {
    let top = offdiag_max(sigma_hat);
    if top <= 0.0 || count == 0 {
        return vec![0.0];
    }
    let bottom = 0.01 * top;
    if count == 1 {
        return vec![top];
    }
    let ratio = (bottom / top).powf(1.0 / (count - 1) as f64);
    let mut grid = Vec::with_capacity(count);
    let mut v = top;
    for _ in 0..count {
        grid.push(v);
        v *= ratio;
    }
    grid
}

/// Tolerances used for path solves.
const PATH_GLASSO_TOL: f64 = 1e-7;
const PATH_GLASSO_MAX_ITERS: usize = 20_000;

/// Sequential warm-started solves over a descending lambda grid.
pub fn precision_path(
    sigma_hat: &CovMatrix,
    lambdas: &[f64],
    method: SparseMethod,
) -> Result<PrecisionPath> {
    if lambdas.is_empty() {
        return Err(Error::Domain("lambda grid is empty".into()));
    }
    if lambdas.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Domain("lambda grid must be sorted descending".into()));
    }
    let mut omegas = Vec::with_capacity(lambdas.len());
    match method {
        SparseMethod::Glasso => {
            let mut state = None;
            for &lambda in lambdas {
                let omega = match state.as_mut() {
                    None => {
                        let mut st = new_glasso_state(sigma_hat);
                        let om = glasso::glasso_solve_warm(
                            sigma_hat,
                            lambda,
                            PATH_GLASSO_TOL,
                            PATH_GLASSO_MAX_ITERS,
                            &mut st,
                        )?;
                        state = Some(st);
                        om
                    }
                    Some(st) => glasso::glasso_solve_warm(
                        sigma_hat,
                        lambda,
                        PATH_GLASSO_TOL,
                        PATH_GLASSO_MAX_ITERS,
                        st,
                    )?,
                };
                omegas.push(omega);
            }
        }
        SparseMethod::Clime => {
            let mut state = clime::ClimeState::default();
            for &lambda in lambdas {
                omegas.push(clime::clime_solve_warm(sigma_hat, lambda, &mut state)?);
            }
        }
    }
    Ok(PrecisionPath { lambdas: lambdas.to_vec(), omegas, method })
}

fn new_glasso_state(sigma_hat: &CovMatrix) -> glasso::GlassoState {
    glasso::GlassoState::new(sigma_hat.matrix())
}

/// Nonzero upper-triangle entries `(i, j, value)` with `i < j`.
pub fn edge_list(omega: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for i in 0..omega.nrows() {
        for j in (i + 1)..omega.ncols() {
            if omega[(i, j)] != 0.0 {
                edges.push((i, j, omega[(i, j)]));
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    fn random_pd(p: usize, seed: u64) -> CovMatrix {
        let mut rng = rng_from(seed);
        let a = DMatrix::from_fn(p, p, |_, _| rng.random::<f64>() - 0.5);
        CovMatrix::new(&a * a.transpose() + DMatrix::identity(p, p) * 0.7).unwrap()
    }

    #[test]
    fn single_lambda_path_equals_single_solve() {
        let s = random_pd(5, 3);
        let path = precision_path(&s, &[0.1], SparseMethod::Glasso).unwrap();
        let single = glasso_solve(&s, 0.1, PATH_GLASSO_TOL, PATH_GLASSO_MAX_ITERS).unwrap();
        assert_eq!(path.omegas[0], single);
    }

    #[test]
    fn endpoint_lambdas_are_diagonal_and_inverse() {
        let s = random_pd(4, 8);
        let top = offdiag_max(&s) * 1.0000001;
        let path = precision_path(&s, &[top, 0.0], SparseMethod::Glasso).unwrap();
        // At the top of the grid the estimate is diagonal.
        assert_eq!(path.nnz_offdiag(0), 0);
        let inv = s.matrix().clone().try_inverse().unwrap();
        assert!((path.omegas[1].clone() - inv).amax() < 1e-6);
    }

    #[test]
    fn support_grows_as_lambda_descends() {
        let s = random_pd(8, 21);
        let grid = default_lambda_grid(&s, 10);
        for method in [SparseMethod::Glasso, SparseMethod::Clime] {
            let path = precision_path(&s, &grid, method).unwrap();
            let sizes: Vec<usize> = (0..grid.len()).map(|k| path.nnz_offdiag(k)).collect();
            for w in sizes.windows(2) {
                assert!(
                    w[0] <= w[1] + 2,
                    "{method} support shrank along descending lambda: {sizes:?}"
                );
            }
        }
    }

    #[test]
    fn default_grid_is_descending_and_spans_two_decades() {
        let s = random_pd(5, 30);
        let grid = default_lambda_grid(&s, 20);
        assert_eq!(grid.len(), 20);
        assert!(grid.windows(2).all(|w| w[0] > w[1]));
        assert!((grid[0] - offdiag_max(&s)).abs() < 1e-12);
        assert!((grid[19] - 0.01 * grid[0]).abs() < 1e-9);
    }

    #[test]
    fn rejects_unsorted_grid() {
        let s = random_pd(3, 1);
        assert!(precision_path(&s, &[0.1, 0.2], SparseMethod::Glasso).is_err());
    }
}
