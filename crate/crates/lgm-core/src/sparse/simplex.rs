//! Dense two-phase tableau simplex for small linear programs.
//!
//! Solves `min c'x  s.t.  A x <= b, x >= 0` (b may be negative). Problem
//! sizes here are tiny (a few hundred variables), so a dense tableau with
//! Dantzig pricing and a Bland fallback for anti-cycling is plenty.

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum LpError {
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl std::fmt::Display for LpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LpError::Infeasible => write!(f, "infeasible"),
            LpError::Unbounded => write!(f, "unbounded"),
            LpError::IterationLimit => write!(f, "iteration limit reached"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Values of the structural variables.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Basic column per row over the [A | I] column space (structural then
    /// slack); reusable for right-hand-side warm starts.
    pub basis: Vec<usize>,
}

const EPS: f64 = 1e-11;

struct Tableau {
    /// (m + 1) x (cols + 1); last row is the objective, last column the rhs.
    t: Vec<f64>,
    m: usize,
    cols: usize,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.t[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.cols + 1;
        let piv = self.at(row, col);
        let inv = 1.0 / piv;
        for c in 0..w {
            self.t[row * w + c] *= inv;
        }
        for r in 0..=self.m {
            if r == row {
                continue;
            }
            let factor = self.at(r, col);
            if factor == 0.0 {
                continue;
            }
            for c in 0..w {
                self.t[r * w + c] -= factor * self.t[row * w + c];
            }
            self.t[r * w + col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Primal simplex on the current tableau; `allowed` limits entering
    /// columns. Returns Err on unboundedness or iteration cap.
    fn run(&mut self, allowed: usize) -> Result<(), LpError> {
        let cap = 200 * (self.m + allowed);
        let mut stalled = 0usize;
        for it in 0..cap {
            // Entering column: Dantzig normally, Bland when stalling.
            let bland = stalled > 2 * (self.m + allowed);
            let mut enter = None;
            if bland {
                for c in 0..allowed {
                    if self.at(self.m, c) < -EPS {
                        enter = Some(c);
                        break;
                    }
                }
            } else {
                let mut best = -EPS;
                for c in 0..allowed {
                    let rc = self.at(self.m, c);
                    if rc < best {
                        best = rc;
                        enter = Some(c);
                    }
                }
            }
            let Some(col) = enter else { return Ok(()) };
            // Ratio test (Bland ties by lowest basis index).
            let mut row = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..self.m {
                let a = self.at(r, col);
                if a > EPS {
                    let ratio = self.rhs(r) / a;
                    let better = ratio < best_ratio - EPS
                        || (ratio < best_ratio + EPS
                            && row.is_some_and(|rr: usize| self.basis[r] < self.basis[rr]));
                    if better {
                        best_ratio = ratio;
                        row = Some(r);
                    }
                }
            }
            let Some(row) = row else { return Err(LpError::Unbounded) };
            if best_ratio <= EPS {
                stalled += 1;
            } else {
                stalled = 0;
            }
            self.pivot(row, col);
            let _ = it;
        }
        Err(LpError::IterationLimit)
    }
}

/// Two-phase solve of `min c'x : Ax <= b, x >= 0`.
pub fn solve_lp(a: &DMatrix<f64>, b: &[f64], c: &[f64]) -> Result<LpSolution, LpError> {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(b.len(), m);
    assert_eq!(c.len(), n);
    let n_art = b.iter().filter(|&&v| v < 0.0).count();
    let cols = n + m + n_art;
    let w = cols + 1;
    let mut t = vec![0.0; (m + 1) * w];
    let mut basis = vec![0usize; m];
    // Rows: A x + s = b; rows with negative b are negated and receive an
    // artificial variable.
    let mut art = n + m;
    for r in 0..m {
        let flip = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[r * w + j] = flip * a[(r, j)];
        }
        t[r * w + n + r] = flip; // slack
        t[r * w + cols] = flip * b[r];
        if flip < 0.0 {
            t[r * w + art] = 1.0;
            basis[r] = art;
            art += 1;
        } else {
            basis[r] = n + r;
        }
    }
    let mut tab = Tableau { t, m, cols, basis };

    if n_art > 0 {
        // Phase 1: minimize the artificial sum. The objective row starts as
        // -(sum of rows carrying an artificial) so reduced costs are correct.
        for r in 0..m {
            if tab.basis[r] >= n + m {
                for c in 0..w {
                    let v = tab.at(r, c);
                    *tab.at_mut(m, c) -= v;
                }
            }
        }
        // Artificials must not re-enter once out; allowing all columns
        // including artificials is still correct because their reduced cost
        // is nonnegative after leaving, but excluding them is cheaper.
        tab.run(n + m)?;
        let phase1 = -tab.rhs(m);
        if phase1 > 1e-8 {
            return Err(LpError::Infeasible);
        }
        // Pivot any artificial still basic (at zero) out of the basis.
        for r in 0..m {
            if tab.basis[r] >= n + m {
                if let Some(col) = (0..n + m).find(|&c| tab.at(r, c).abs() > EPS) {
                    tab.pivot(r, col);
                }
            }
        }
        // Reset objective row for phase 2.
        for col in 0..w {
            *tab.at_mut(m, col) = 0.0;
        }
    }

    // Phase 2 objective: c'x expressed over the current basis.
    for j in 0..n {
        *tab.at_mut(m, j) = c[j];
    }
    for r in 0..m {
        let bj = tab.basis[r];
        if bj < n && c[bj] != 0.0 {
            let factor = c[bj];
            for col in 0..w {
                let v = tab.at(r, col);
                *tab.at_mut(m, col) -= factor * v;
            }
        }
    }
    tab.run(n + m)?;

    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.rhs(r);
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    Ok(LpSolution { x, objective, basis: tab.basis.clone() })
}

/// Attempts to reuse an optimal basis after only `b` changed. Because the
/// costs and constraint matrix are unchanged, a basis that stays feasible
/// stays optimal. Returns None when the basis is no longer feasible (or
/// contains artificials / is singular).
pub fn resolve_with_basis(
    a: &DMatrix<f64>,
    b: &[f64],
    c: &[f64],
    basis: &[usize],
) -> Option<LpSolution> {
    let m = a.nrows();
    let n = a.ncols();
    if basis.len() != m || basis.iter().any(|&j| j >= n + m) {
        return None;
    }
    let bm = DMatrix::from_fn(m, m, |r, k| {
        let j = basis[k];
        if j < n {
            a[(r, j)]
        } else if j - n == r {
            1.0
        } else {
            0.0
        }
    });
    let rhs = nalgebra::DVector::from_column_slice(b);
    let xb = bm.lu().solve(&rhs)?;
    if xb.iter().any(|&v| v < -1e-9) {
        return None;
    }
    let mut x = vec![0.0; n];
    for (k, &j) in basis.iter().enumerate() {
        if j < n {
            x[j] = xb[k].max(0.0);
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    Some(LpSolution { x, objective, basis: basis.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn simple_lp() {
        // min -x - y s.t. x + y <= 1, x,y >= 0 -> optimum -1 on the segment.
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let sol = solve_lp(&a, &[1.0], &[-1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(sol.objective, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[0] + sol.x[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn negative_rhs_requires_phase_one() {
        // min x s.t. -x <= -2  (i.e. x >= 2).
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let sol = solve_lp(&a, &[-2.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        // x <= 1 and x >= 2.
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let err = solve_lp(&a, &[1.0, -2.0], &[1.0]).unwrap_err();
        assert_eq!(err, LpError::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        // min -x s.t. -x <= 0.
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let err = solve_lp(&a, &[0.0], &[-1.0]).unwrap_err();
        assert_eq!(err, LpError::Unbounded);
    }

    #[test]
    fn warm_basis_reuse_tracks_rhs_changes() {
        // min x+y s.t. x+2y >= 4, 3x+y >= 6.
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, -2.0, -3.0, -1.0]);
        let c = [1.0, 1.0];
        let sol = solve_lp(&a, &[-4.0, -6.0], &c).unwrap();
        // Shrink the rhs slightly; the same basis stays optimal.
        let warm = resolve_with_basis(&a, &[-3.8, -5.7], &c, &sol.basis).unwrap();
        let cold = solve_lp(&a, &[-3.8, -5.7], &c).unwrap();
        assert_abs_diff_eq!(warm.objective, cold.objective, epsilon = 1e-8);
    }
}
