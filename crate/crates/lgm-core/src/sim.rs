//! Synthetic benchmark generation: structured sparse precision matrices,
//! latent Gaussian draws cut into mixed-type observations under four fixed
//! column layouts, and a logistic missing-at-random mechanism driven by the
//! fully observed columns.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{discretize, Cell, MixedDataset, Thresholds, VarKind, VariableSchema};
use crate::error::{Error, Result};
use crate::numerics::{normal_pdf, standard_normal, CovMatrix};
use crate::seed::{derive_seed, rng_from};

/// One of the four fixed data-generating layouts over p = 50 columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub id: u8,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(id: u8, n: usize, seed: u64) -> Result<Self> {
        if !(1..=4).contains(&id) {
            return Err(Error::Domain(format!("scenario id {id} not in 1..=4")));
        }
        if n == 0 {
            return Err(Error::Domain("scenario needs n > 0".into()));
        }
        Ok(ScenarioSpec { id, n, p: 50, seed })
    }

    /// Column kinds of this layout.
    pub fn layout(&self) -> Vec<VarKind> {
        let cont = VarKind::Continuous;
        let cat = |l: usize| VarKind::Categorical { levels: l };
        let mut kinds = Vec::with_capacity(self.p);
        match self.id {
            1 => {
                kinds.extend(std::iter::repeat_n(cont, 49));
                kinds.push(cat(2));
            }
            2 => {
                kinds.extend(std::iter::repeat_n(cont, 20));
                kinds.extend(std::iter::repeat_n(cat(2), 30));
            }
            3 => {
                kinds.extend(std::iter::repeat_n(cont, 20));
                kinds.extend(std::iter::repeat_n(cat(2), 10));
                kinds.extend(std::iter::repeat_n(cat(3), 10));
                kinds.extend(std::iter::repeat_n(cat(4), 10));
            }
            4 => {
                kinds.extend(std::iter::repeat_n(cat(2), 20));
                kinds.extend(std::iter::repeat_n(cat(3), 10));
                kinds.extend(std::iter::repeat_n(cat(4), 20));
            }
            _ => unreachable!(),
        }
        kinds
    }
}

/// Structured sparse precision matrix: unit diagonal, off-diagonal entries
/// `c` placed by a distance-driven Bernoulli rule over points uniform on the
/// unit square. Redraws (up to 100 times) when the draw is not positive
/// definite. Returns the precision matrix and its inverse rescaled to unit
/// diagonal (the covariance actually used to generate data).
pub fn generate_omega(p: usize, c: f64, p0: f64, seed: u64) -> Result<(DMatrix<f64>, CovMatrix)> {
    for attempt in 0..100u64 {
        let mut rng = rng_from(derive_seed(seed, &[0x6f6d_6567, attempt]));
        let z: Vec<(f64, f64)> = (0..p).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let mut omega = DMatrix::identity(p, p);
        for j in 0..p {
            for k in (j + 1)..p {
                let d = ((z[j].0 - z[k].0).powi(2) + (z[j].1 - z[k].1).powi(2)).sqrt();
                let prob = p0 * normal_pdf(d / (p as f64).sqrt());
                if rng.random::<f64>() < prob {
                    omega[(j, k)] = c;
                    omega[(k, j)] = c;
                }
            }
        }
        let Some(chol) = omega.clone().cholesky() else { continue };
        let sigma_raw = chol.inverse();
        let mut sigma = sigma_raw.clone();
        for i in 0..p {
            for j in 0..p {
                sigma[(i, j)] = sigma_raw[(i, j)] / (sigma_raw[(i, i)] * sigma_raw[(j, j)]).sqrt();
            }
        }
        if sigma.clone().cholesky().is_none() {
            continue;
        }
        return Ok((omega, CovMatrix::new(sigma)?));
    }
    Err(Error::Numerical(format!(
        "no positive definite precision draw in 100 attempts (c = {c}, p0 = {p0})"
    )))
}

/// Draws the latent matrix, cuts columns per the scenario layout at interior
/// thresholds uniform on [-1, 1] (sorted), and returns the dataset, the true
/// thresholds, and the latent matrix itself.
pub fn generate_scenario(
    spec: &ScenarioSpec,
    sigma: &CovMatrix,
) -> Result<(MixedDataset, Thresholds, DMatrix<f64>)> {
    if sigma.dim() != spec.p {
        return Err(Error::Domain(format!(
            "covariance dimension {} does not match scenario p = {}",
            sigma.dim(),
            spec.p
        )));
    }
    let kinds = spec.layout();
    let schema: Vec<VariableSchema> = kinds
        .iter()
        .enumerate()
        .map(|(j, k)| VariableSchema { name: format!("x{}", j + 1), kind: *k })
        .collect();
    let mut rng = rng_from(derive_seed(spec.seed, &[0x7363_656e]));
    let chol = sigma
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("scenario covariance not positive definite".into()))?;
    let l = chol.l();
    let mut latent = DMatrix::zeros(spec.n, spec.p);
    let mut g = DVector::zeros(spec.p);
    for i in 0..spec.n {
        for j in 0..spec.p {
            g[j] = standard_normal(&mut rng);
        }
        let w = &l * &g;
        for j in 0..spec.p {
            latent[(i, j)] = w[j];
        }
    }
    let mut cuts: Vec<Option<Vec<f64>>> = Vec::with_capacity(spec.p);
    for kind in &kinds {
        match kind {
            VarKind::Continuous => cuts.push(None),
            VarKind::Categorical { levels } => {
                let mut interior: Vec<f64> =
                    (0..levels - 1).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut c = Vec::with_capacity(levels + 1);
                c.push(f64::NEG_INFINITY);
                c.extend(interior);
                c.push(f64::INFINITY);
                cuts.push(Some(c));
            }
        }
    }
    let thresholds = Thresholds::new(&schema, cuts)?;
    let mut cells = Vec::with_capacity(spec.n * spec.p);
    for i in 0..spec.n {
        for j in 0..spec.p {
            let w = latent[(i, j)];
            cells.push(match &kinds[j] {
                VarKind::Continuous => Cell::Cont(w),
                VarKind::Categorical { .. } => {
                    Cell::Cat(discretize(thresholds.for_column(j).unwrap(), w))
                }
            });
        }
    }
    let ds = MixedDataset::from_cells(schema, cells)?;
    Ok((ds, thresholds, latent))
}

/// Which columns were made missing, the calibrated logistic slope, and the
/// realized missing rate over the selected cells.
#[derive(Debug, Clone)]
pub struct MarInfo {
    pub columns: Vec<usize>,
    pub beta: f64,
    pub realized_rate: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cell_value(c: Cell) -> f64 {
    match c {
        Cell::Cont(v) => v,
        Cell::Cat(l) => l as f64,
        Cell::Missing => f64::NAN,
    }
}

/// Makes `n_missing_cols` randomly selected columns missing at random: cell
/// (i, j) of a selected column goes missing with probability
/// `logistic(-1 + beta * sum of row i over the non-selected columns)`, with
/// `beta` calibrated by bisection so the expected missing rate hits
/// `target_rate`, and the realized rate checked to land in [0.35, 0.45]
/// when the target is the default 0.40.
pub fn apply_mar_missingness(
    ds: &MixedDataset,
    n_missing_cols: usize,
    target_rate: f64,
    seed: u64,
) -> Result<(MixedDataset, MarInfo)> {
    let p = ds.n_cols();
    let n = ds.n_rows();
    if n_missing_cols == 0 {
        return Ok((
            ds.clone(),
            MarInfo { columns: Vec::new(), beta: 0.0, realized_rate: 0.0 },
        ));
    }
    if n_missing_cols >= p {
        return Err(Error::Domain(format!(
            "n_missing_cols = {n_missing_cols} must be below p = {p}"
        )));
    }
    if !(0.0..1.0).contains(&target_rate) {
        return Err(Error::Domain("target_rate must lie in (0, 1)".into()));
    }
    let mut rng = rng_from(derive_seed(seed, &[0x6d61_7273]));
    let mut cols: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        let j = rng.random_range(0..=i);
        cols.swap(i, j);
    }
    let mut selected = cols[..n_missing_cols].to_vec();
    selected.sort_unstable();
    let rest: Vec<usize> = (0..p).filter(|j| !selected.contains(j)).collect();
    for &j in &rest {
        for i in 0..n {
            if ds.cell(i, j).is_missing() {
                return Err(Error::column(
                    ds.schema()[j].name.clone(),
                    "rest column must be fully observed for the logistic score",
                ));
            }
        }
    }
    let scores: Vec<f64> = (0..n)
        .map(|i| rest.iter().map(|&j| cell_value(ds.cell(i, j))).sum())
        .collect();
    let mean_rate = |beta: f64| -> f64 {
        scores.iter().map(|&s| logistic(-1.0 + beta * s)).sum::<f64>() / n as f64
    };
    // logistic(-1) = 0.269 < target for the default 0.40, so search both
    // directions for a slope that overshoots, then bisect back to target.
    let mut hi_beta = None;
    'outer: for sign in [1.0, -1.0] {
        let mut mag = 1.0 / 1024.0;
        for _ in 0..22 {
            if mean_rate(sign * mag) >= target_rate {
                hi_beta = Some(sign * mag);
                break 'outer;
            }
            mag *= 2.0;
        }
    }
    let Some(hi) = hi_beta else {
        return Err(Error::Numerical(format!(
            "missingness calibration failed: cannot reach rate {target_rate} \
             (best achievable {:.3})",
            mean_rate(0.0).max(mean_rate(1024.0)).max(mean_rate(-1024.0))
        )));
    };
    let (mut lo, mut hi) = (0.0f64, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_rate(mid) < target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);

    // Draw the indicators; retry with fresh sub-seeds if sampling noise
    // pushes the realized rate outside the acceptance band.
    let band = (target_rate - 0.05, target_rate + 0.05);
    let mut last_rate = f64::NAN;
    for attempt in 0..10u64 {
        let (out, rate) = draw_missingness(
            ds,
            &selected,
            &scores,
            beta,
            derive_seed(seed, &[0x6d61_7264, attempt]),
        );
        last_rate = rate;
        if rate >= band.0 && rate <= band.1 {
            return Ok((out, MarInfo { columns: selected, beta, realized_rate: rate }));
        }
    }
    Err(Error::Numerical(format!(
        "missingness draw landed at rate {last_rate:.3} outside [{:.2}, {:.2}] after 10 attempts",
        band.0, band.1
    )))
}

/// One Bernoulli pass over the selected columns at a fixed slope; returns
/// the dataset copy and the realized missing rate.
fn draw_missingness(
    ds: &MixedDataset,
    selected: &[usize],
    scores: &[f64],
    beta: f64,
    seed: u64,
) -> (MixedDataset, f64) {
    let n = ds.n_rows();
    let mut rng = rng_from(seed);
    let mut out = ds.clone();
    let mut missing = 0usize;
    for &j in selected {
        for (i, &score) in scores.iter().enumerate() {
            let prob = logistic(-1.0 + beta * score);
            if rng.random::<f64>() < prob {
                out.set_cell_unchecked(i, j, Cell::Missing);
                missing += 1;
            }
        }
    }
    let rate = missing as f64 / (n * selected.len()) as f64;
    (out, rate)
}

/// The classification outcome used by the benchmark scenarios: the binary
/// column whose interior threshold is smallest in magnitude (ties to the
/// lowest column index). None when no binary column exists.
pub fn classification_target(thresholds: &Thresholds, schema: &[VariableSchema]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, col) in schema.iter().enumerate() {
        if col.kind.levels() == Some(2) {
            let cut = thresholds.for_column(j)?[1].abs();
            if best.is_none_or(|(_, b)| cut < b) {
                best = Some((j, cut));
            }
        }
    }
    best.map(|(j, _)| j)
}
