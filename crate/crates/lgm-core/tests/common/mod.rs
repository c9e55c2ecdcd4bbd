//! Shared test oracles, independent of the implementation paths they check:
//! Gauss-Legendre quadrature for truncated-normal moments, a proximal
//! gradient reference for the graphical lasso, and exhaustive LP vertex
//! enumeration for the constrained L1 column programs.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// 16-point Gauss-Legendre nodes (positive half) and weights on [-1, 1].
const GL_NODES: [f64; 8] = [
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.7554044083550030,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL_WEIGHTS: [f64; 8] = [
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

/// Composite 16-point Gauss-Legendre integral of `f` over [a, b].
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for i in 0..8 {
            s += GL_WEIGHTS[i] * (f(mid + half * GL_NODES[i]) + f(mid - half * GL_NODES[i]));
        }
        total += s * half;
    }
    total
}

/// Bivariate normal density with unit variances and correlation `rho`.
pub fn binormal_pdf(x: f64, y: f64, rho: f64) -> f64 {
    let det = 1.0 - rho * rho;
    let q = (x * x - 2.0 * rho * x * y + y * y) / det;
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

/// First moments of the bivariate normal truncated to a box, by tensor
/// quadrature (error far below 1e-10 for boxes of moderate size).
pub fn truncated_box_means(rho: f64, box_x: (f64, f64), box_y: (f64, f64)) -> (f64, f64) {
    let panels = 8;
    let mass = integrate(
        &|x| integrate(&|y| binormal_pdf(x, y, rho), box_y.0, box_y.1, panels),
        box_x.0,
        box_x.1,
        panels,
    );
    let ex = integrate(
        &|x| x * integrate(&|y| binormal_pdf(x, y, rho), box_y.0, box_y.1, panels),
        box_x.0,
        box_x.1,
        panels,
    );
    let ey = integrate(
        &|x| integrate(&|y| y * binormal_pdf(x, y, rho), box_y.0, box_y.1, panels),
        box_x.0,
        box_x.1,
        panels,
    );
    (ex / mass, ey / mass)
}

/// Soft-threshold of the off-diagonal entries (diagonal untouched).
fn soft_offdiag(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                let v = m[(i, j)];
                out[(i, j)] = if v > t {
                    v - t
                } else if v < -t {
                    v + t
                } else {
                    0.0
                };
            }
        }
    }
    out
}

fn glasso_objective_ref(s: &DMatrix<f64>, omega: &DMatrix<f64>, lambda: f64) -> Option<f64> {
    let chol = omega.clone().cholesky()?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut l1 = 0.0;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            if i != j {
                l1 += omega[(i, j)].abs();
            }
        }
    }
    Some((s * omega).trace() - logdet + lambda * l1)
}

/// Slow proximal-gradient (ISTA) reference solver for the graphical lasso,
/// entirely independent of the blockwise coordinate-descent implementation.
/// Returns the achieved objective value.
pub fn glasso_reference_objective(s: &DMatrix<f64>, lambda: f64, tol: f64) -> f64 {
    let p = s.nrows();
    let mut omega = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 / s[(i, j)] } else { 0.0 });
    let mut obj = glasso_objective_ref(s, &omega, lambda).unwrap();
    let mut step = 1.0;
    for _ in 0..200_000 {
        let grad = s - omega.clone().try_inverse().unwrap();
        let mut accepted = None;
        let mut t = step;
        for _ in 0..60 {
            let cand = soft_offdiag(&(&omega - &grad * t), t * lambda);
            if let Some(cand_obj) = glasso_objective_ref(s, &cand, lambda) {
                // Sufficient-decrease check of the smooth part's majorizer.
                let diff = &cand - &omega;
                let quad = (grad.iter().zip(diff.iter()).map(|(g, d)| g * d).sum::<f64>())
                    + diff.norm_squared() / (2.0 * t);
                let smooth_old = obj
                    - lambda
                        * omega
                            .iter()
                            .enumerate()
                            .filter(|(idx, _)| idx % (p + 1) != 0)
                            .map(|(_, v)| v.abs())
                            .sum::<f64>();
                let smooth_cand = cand_obj
                    - lambda
                        * cand
                            .iter()
                            .enumerate()
                            .filter(|(idx, _)| idx % (p + 1) != 0)
                            .map(|(_, v)| v.abs())
                            .sum::<f64>();
                if smooth_cand <= smooth_old + quad + 1e-14 {
                    accepted = Some((cand, cand_obj));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, cand_obj)) = accepted else { break };
        let delta = (&cand - &omega).amax();
        omega = cand;
        let improved = obj - cand_obj;
        obj = cand_obj;
        step = (t * 1.5).min(1.0);
        if delta < tol && improved.abs() < tol {
            break;
        }
    }
    obj
}

/// Exhaustive vertex enumeration for
/// `min ||beta||_1 s.t. ||S beta - e_j||_inf <= lambda`
/// over the split formulation; returns the optimal objective value.
/// Exponential in p, usable only for tiny instances.
pub fn clime_reference_objective(s: &DMatrix<f64>, j: usize, lambda: f64) -> f64 {
    let p = s.nrows();
    let n = 2 * p; // structural variables
    let m = 2 * p; // constraints
    let total = n + m; // plus slacks
    // A x <= b in split form.
    let mut a = DMatrix::zeros(m, total);
    for r in 0..p {
        for c in 0..p {
            let v = s[(r, c)];
            a[(r, c)] = v;
            a[(r, p + c)] = -v;
            a[(p + r, c)] = -v;
            a[(p + r, p + c)] = v;
        }
    }
    for r in 0..m {
        a[(r, n + r)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    for r in 0..p {
        let e = if r == j { 1.0 } else { 0.0 };
        b[r] = lambda + e;
        b[p + r] = lambda - e;
    }

    let mut best = f64::INFINITY;
    let mut combo: Vec<usize> = (0..m).collect();
    loop {
        // Solve the basic system for this column subset.
        let basis = DMatrix::from_fn(m, m, |r, k| a[(r, combo[k])]);
        if let Some(sol) = basis.lu().solve(&b) {
            if sol.iter().all(|&v| v >= -1e-9) {
                let mut obj = 0.0;
                for (k, &c) in combo.iter().enumerate() {
                    if c < n {
                        obj += sol[k];
                    }
                }
                if obj < best {
                    best = obj;
                }
            }
        }
        // Next lexicographic combination of size m out of total.
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] != i + total - m {
                break;
            }
        }
        if combo[i] == i + total - m {
            return best;
        }
        combo[i] += 1;
        for k in i + 1..m {
            combo[k] = combo[k - 1] + 1;
        }
    }
}
