//! Gibbs sampler for a multivariate normal conditioned on per-coordinate
//! interval constraints, plus the moment accumulation used by the E-step and
//! by prediction.
//!
//! One sweep visits coordinates in index order; coordinate `j` is redrawn
//! from its univariate conditional N(m_j, s_j^2) restricted to `[a_j, b_j]`
//! by inverse-CDF sampling: with `d = cdf((a-m)/s)`, `e = cdf((b-m)/s)` and
//! `u` uniform, the update is `m + s * quantile(d + (e-d) u)`. Intervals
//! whose mass lies in the upper tail are sampled through the complementary
//! tail so no precision is lost, and an interval whose mass underflows
//! entirely resolves to its nearest finite endpoint (counted, never fatal).
//!
//! Point-constrained coordinates are pinned and consume no randomness, so a
//! chain over a partially observed row only ever samples its free block.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::CellConstraint;
use crate::error::{Error, Result};
use crate::numerics::{normal_cdf, quantile_total, CovMatrix, MeanVector};
use crate::seed::rng_from;

/// Chain initialization strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum GibbsInit {
    /// Midpoint of each constraint interval; 0 for unbounded coordinates,
    /// clamped to the nearest endpoint for half-bounded ones.
    ConstraintMidpoint,
    /// Caller-provided full state (must satisfy the constraints).
    Given(Vec<f64>),
}

/// Sweep budget and seed for one sampler run.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    /// Sweeps discarded before any accumulation.
    pub burn_in: usize,
    /// Retained sweeps.
    pub keep: usize,
    pub seed: u64,
    pub init: GibbsInit,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            burn_in: 100,
            keep: 500,
            seed: 0,
            init: GibbsInit::ConstraintMidpoint,
        }
    }
}

impl GibbsConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.keep == 0 {
            return Err(Error::Domain("GibbsConfig.keep must be at least 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Conditional-parameter cache
// ---------------------------------------------------------------------------

/// Per-coordinate conditional parameters of N(mu, sigma), precomputed once
/// from the precision matrix so each coordinate update costs O(p).
///
/// For coordinate j: sd_j = 1/sqrt(omega_jj) and
/// `mean_j(x) = mu_j - (1/omega_jj) * sum_{k != j} omega_jk (x_k - mu_k)`.
#[derive(Debug, Clone)]
pub struct ConditionalCache {
    mu: DVector<f64>,
    omega: DMatrix<f64>,
    sd: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl ConditionalCache {
    pub fn new(mu: &MeanVector, sigma: &CovMatrix) -> Result<Self> {
        let p = sigma.dim();
        if mu.dim() != p {
            return Err(Error::Domain("mean/covariance dimension mismatch".into()));
        }
        let chol = sigma
            .matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance not positive definite".into()))?;
        let omega = chol.inverse();
        let mut sd = Vec::with_capacity(p);
        let mut inv_diag = Vec::with_capacity(p);
        for j in 0..p {
            let d = omega[(j, j)];
            if !(d > 0.0) {
                return Err(Error::Numerical(format!(
                    "non-positive precision diagonal at coordinate {j}"
                )));
            }
            inv_diag.push(1.0 / d);
            sd.push((1.0 / d).sqrt());
        }
        Ok(ConditionalCache { mu: mu.vector().clone(), omega, sd, inv_diag })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Conditional mean of coordinate `j` given the full current state.
    pub fn conditional_mean(&self, j: usize, state: &[f64]) -> f64 {
        let p = self.mu.len();
        let mut acc = 0.0;
        for k in 0..p {
            if k != j {
                acc += self.omega[(k, j)] * (state[k] - self.mu[k]);
            }
        }
        self.mu[j] - self.inv_diag[j] * acc
    }

    pub fn conditional_sd(&self, j: usize) -> f64 {
        self.sd[j]
    }
}

// ---------------------------------------------------------------------------
// Truncated univariate draw
// ---------------------------------------------------------------------------

/// Inverse-CDF draw from N(0,1) restricted to `[alpha, beta]` at uniform
/// deviate `u`. Returns the draw and whether the interval mass underflowed
/// (in which case the nearest finite endpoint is returned).
pub(crate) fn sample_truncated_std(alpha: f64, beta: f64, u: f64) -> (f64, bool) {
    debug_assert!(alpha <= beta);
    let nearest_finite = || {
        if alpha.is_finite() && (!beta.is_finite() || alpha.abs() <= beta.abs()) {
            alpha
        } else {
            beta
        }
    };
    // Work in whichever tail keeps the probabilities small. A doubly
    // unbounded interval gives alpha + beta = NaN, which compares false and
    // correctly falls through to the direct route (d = 0, e = 1).
    let z = if alpha + beta > 0.0 {
        let cd = normal_cdf(-alpha);
        let ce = normal_cdf(-beta);
        if !(cd > ce) {
            return (nearest_finite(), true);
        }
        let v = (cd * (1.0 - u) + ce * u).clamp(1e-300, 1.0 - f64::EPSILON);
        -quantile_total(v)
    } else {
        let d = normal_cdf(alpha);
        let e = normal_cdf(beta);
        if !(e > d) {
            return (nearest_finite(), true);
        }
        let v = (d * (1.0 - u) + e * u).clamp(1e-300, 1.0 - f64::EPSILON);
        quantile_total(v)
    };
    (z.clamp(alpha, beta), false)
}

// ---------------------------------------------------------------------------
// Chain over the free block of one constrained row
// ---------------------------------------------------------------------------

/// Sampler state specialized to one set of constraints: point-constrained
/// coordinates are folded into per-coordinate base means, so a sweep only
/// touches the free block.
pub(crate) struct TruncatedChain {
    p: usize,
    /// Indices of non-point coordinates.
    free: Vec<usize>,
    /// Constraints of the free coordinates.
    cons: Vec<CellConstraint>,
    /// Conditional-mean contribution of mu and all fixed coordinates.
    base: Vec<f64>,
    /// Flattened |F| x |F| regression weights (self-weight zero).
    coef: Vec<f64>,
    sd: Vec<f64>,
    /// Current values of the free coordinates.
    state: Vec<f64>,
    /// Fixed full state template (point values filled; free slots overwritten
    /// on demand).
    template: Vec<f64>,
    pub underflows: u64,
}

impl TruncatedChain {
    pub fn new(
        constraints: &[CellConstraint],
        mu: &MeanVector,
        sigma: &CovMatrix,
        init: &GibbsInit,
    ) -> Result<Self> {
        let cache = ConditionalCache::new(mu, sigma)?;
        Self::with_cache(constraints, &cache, init)
    }

    pub fn with_cache(
        constraints: &[CellConstraint],
        cache: &ConditionalCache,
        init: &GibbsInit,
    ) -> Result<Self> {
        let p = cache.dim();
        if constraints.len() != p {
            return Err(Error::Domain(format!(
                "{} constraints for dimension {p}",
                constraints.len()
            )));
        }
        for (j, c) in constraints.iter().enumerate() {
            if !(c.lo <= c.hi) {
                return Err(Error::Domain(format!("constraint {j} has lo > hi")));
            }
        }
        let free: Vec<usize> = (0..p).filter(|&j| !constraints[j].is_point()).collect();
        let nf = free.len();
        let mut template = vec![0.0; p];
        for j in 0..p {
            if constraints[j].is_point() {
                template[j] = constraints[j].lo;
            }
        }
        let cons: Vec<CellConstraint> = free.iter().map(|&j| constraints[j]).collect();
        // base_j = mu_j - (1/om_jj) sum_{k fixed} om_jk (x_k - mu_k)
        let mut base = Vec::with_capacity(nf);
        let mut sd = Vec::with_capacity(nf);
        let mut coef = vec![0.0; nf * nf];
        for (a, &j) in free.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..p {
                if k != j && constraints[k].is_point() {
                    acc += cache.omega[(k, j)] * (template[k] - cache.mu[k]);
                }
            }
            base.push(cache.mu[j] - cache.inv_diag[j] * acc);
            sd.push(cache.sd[j]);
            for (b, &k) in free.iter().enumerate() {
                if k != j {
                    coef[a * nf + b] = -cache.inv_diag[j] * cache.omega[(k, j)];
                }
            }
        }
        let state: Vec<f64> = match init {
            GibbsInit::ConstraintMidpoint => cons
                .iter()
                .map(|c| {
                    if c.lo.is_finite() && c.hi.is_finite() {
                        0.5 * (c.lo + c.hi)
                    } else {
                        0.0f64.clamp(c.lo, c.hi)
                    }
                })
                .collect(),
            GibbsInit::Given(full) => {
                if full.len() != p {
                    return Err(Error::Domain("init vector has wrong length".into()));
                }
                // Point coordinates get pinned regardless of the given value.
                for &j in &free {
                    if !constraints[j].contains(full[j]) {
                        return Err(Error::Domain(format!(
                            "init state violates constraint at coordinate {j}"
                        )));
                    }
                }
                free.iter().map(|&j| full[j]).collect()
            }
        };
        // Fold mu of free coordinates into base so the sweep works on raw
        // values: mean_a = base'_a + sum_b coef_ab * state_b.
        let mut base_adj = base;
        for (a, _) in free.iter().enumerate() {
            let mut shift = 0.0;
            for (b, &k) in free.iter().enumerate() {
                shift += coef[a * nf + b] * cache.mu[k];
            }
            base_adj[a] -= shift;
        }
        Ok(TruncatedChain {
            p,
            free,
            cons,
            base: base_adj,
            coef,
            sd,
            state,
            template,
            underflows: 0,
        })
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    pub fn free_state(&self) -> &[f64] {
        &self.state
    }

    /// One systematic-scan sweep over the free coordinates.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let nf = self.free.len();
        for a in 0..nf {
            let row = &self.coef[a * nf..(a + 1) * nf];
            let mut mean = self.base[a];
            for (w, x) in row.iter().zip(self.state.iter()) {
                mean += w * x;
            }
            let sd = self.sd[a];
            let c = self.cons[a];
            let u: f64 = rng.random();
            let (z, under) = sample_truncated_std((c.lo - mean) / sd, (c.hi - mean) / sd, u);
            if under {
                self.underflows += 1;
            }
            let w = (mean + sd * z).clamp(c.lo, c.hi);
            debug_assert!(c.contains(w), "sample escaped its constraint");
            self.state[a] = w;
        }
    }

    /// Full state with fixed coordinates filled from the template.
    pub fn write_full_state(&self, out: &mut [f64]) {
        out.copy_from_slice(&self.template);
        for (a, &j) in self.free.iter().enumerate() {
            out[j] = self.state[a];
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }
}

// ---------------------------------------------------------------------------
// Moment accumulation
// ---------------------------------------------------------------------------

/// Running first and second moments of a sample stream.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    dim: usize,
    first: Vec<f64>,
    /// Packed upper triangle of the running mean of outer products.
    second: Vec<f64>,
    count: u64,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator {
            dim,
            first: vec![0.0; dim],
            second: vec![0.0; dim * (dim + 1) / 2],
            count: 0,
        }
    }

    #[inline]
    fn tri(&self, a: usize, b: usize) -> usize {
        // a <= b
        b * (b + 1) / 2 + a
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for (f, &v) in self.first.iter_mut().zip(x) {
            *f += (v - *f) * inv;
        }
        for b in 0..self.dim {
            let xb = x[b];
            let row = &mut self.second[b * (b + 1) / 2..(b + 1) * (b + 2) / 2];
            for (a, s) in row.iter_mut().enumerate() {
                *s += (x[a] * xb - *s) * inv;
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for b in 0..self.dim {
            for a in 0..=b {
                let v = self.second[self.tri(a, b)];
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        m
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// One sweep of the constrained Gibbs sampler over the full state vector.
/// Returns the number of interval-mass underflows encountered.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut [f64],
    constraints: &[CellConstraint],
    mu: &MeanVector,
    sigma: &CovMatrix,
    rng: &mut R,
) -> Result<u64> {
    let mut chain = TruncatedChain::new(
        constraints,
        mu,
        sigma,
        &GibbsInit::Given(state.to_vec()),
    )?;
    chain.sweep(rng);
    chain.write_full_state(state);
    Ok(chain.underflows)
}

/// Monte-Carlo estimates of E[Z | constraints] and E[Z Z' | constraints].
/// Point-constrained coordinates contribute exact (deterministic) entries.
pub fn conditional_moments(
    constraints: &[CellConstraint],
    mu: &MeanVector,
    sigma: &CovMatrix,
    cfg: &GibbsConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let cache = ConditionalCache::new(mu, sigma)?;
    let (first, second, _) = conditional_moments_cached(constraints, &cache, cfg)?;
    Ok((first, second))
}

/// As [`conditional_moments`] but re-using a prebuilt cache (the E-step calls
/// this once per row with the same covariance).
pub fn conditional_moments_cached(
    constraints: &[CellConstraint],
    cache: &ConditionalCache,
    cfg: &GibbsConfig,
) -> Result<(DVector<f64>, DMatrix<f64>, u64)> {
    cfg.validate()?;
    let p = cache.dim();
    let mut chain = TruncatedChain::with_cache(constraints, cache, &cfg.init)?;
    let nf = chain.n_free();
    let mut acc = MomentAccumulator::new(nf);
    if nf > 0 {
        let mut rng = rng_from(cfg.seed);
        for _ in 0..cfg.burn_in {
            chain.sweep(&mut rng);
        }
        for _ in 0..cfg.keep {
            chain.sweep(&mut rng);
            acc.push(chain.free_state());
        }
    }
    // Assemble full-dimension moments: exact entries wherever a point
    // constraint pins the coordinate.
    let free = chain.free_indices();
    let mut free_pos = vec![usize::MAX; p];
    for (a, &j) in free.iter().enumerate() {
        free_pos[j] = a;
    }
    let mean_free = acc.mean();
    let mut first = DVector::zeros(p);
    for j in 0..p {
        first[j] = if constraints[j].is_point() {
            constraints[j].lo
        } else {
            mean_free[free_pos[j]]
        };
    }
    let second_free = acc.second_moment();
    let mut second = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in 0..=j {
            let v = if !constraints[j].is_point() && !constraints[k].is_point() {
                second_free[(free_pos[j], free_pos[k])]
            } else {
                first[j] * first[k]
            };
            second[(j, k)] = v;
            second[(k, j)] = v;
        }
    }
    Ok((first, second, chain.underflows))
}

/// Probability that the (unconstrained) target coordinate lands in
/// `(interval.0, interval.1]`, estimated from retained sweeps.
pub fn event_probability(
    constraints: &[CellConstraint],
    target: usize,
    interval: (f64, f64),
    mu: &MeanVector,
    sigma: &CovMatrix,
    cfg: &GibbsConfig,
) -> Result<f64> {
    cfg.validate()?;
    if target >= constraints.len() {
        return Err(Error::Domain(format!("target {target} out of range")));
    }
    if constraints[target] != CellConstraint::unbounded() {
        return Err(Error::Domain(
            "event_probability target must be unconstrained".into(),
        ));
    }
    let (lo, hi) = interval;
    let mut chain = TruncatedChain::new(constraints, mu, sigma, &cfg.init)?;
    let pos = chain
        .free_indices()
        .iter()
        .position(|&j| j == target)
        .expect("unbounded target is free");
    let mut rng = rng_from(cfg.seed);
    for _ in 0..cfg.burn_in {
        chain.sweep(&mut rng);
    }
    let mut hits = 0u64;
    for _ in 0..cfg.keep {
        chain.sweep(&mut rng);
        let w = chain.free_state()[pos];
        if lo < w && w <= hi {
            hits += 1;
        }
    }
    Ok(hits as f64 / cfg.keep as f64)
}

/// Counts of retained sweeps falling in each level interval of `cuts` for
/// the target coordinate; one shared chain serves the whole partition.
pub(crate) fn interval_counts(
    constraints: &[CellConstraint],
    target: usize,
    cuts: &[f64],
    cache: &ConditionalCache,
    cfg: &GibbsConfig,
) -> Result<Vec<u64>> {
    cfg.validate()?;
    if constraints[target] != CellConstraint::unbounded() {
        return Err(Error::Domain("classification target must be free".into()));
    }
    let mut chain = TruncatedChain::with_cache(constraints, cache, &cfg.init)?;
    let pos = chain
        .free_indices()
        .iter()
        .position(|&j| j == target)
        .expect("unbounded target is free");
    let mut rng = rng_from(cfg.seed);
    for _ in 0..cfg.burn_in {
        chain.sweep(&mut rng);
    }
    let mut counts = vec![0u64; cuts.len() - 1];
    for _ in 0..cfg.keep {
        chain.sweep(&mut rng);
        counts[crate::data::discretize(cuts, chain.free_state()[pos])] += 1;
    }
    Ok(counts)
}

/// Thinned retained draws of the full latent state (used for imputation).
pub(crate) fn sample_draws(
    constraints: &[CellConstraint],
    cache: &ConditionalCache,
    cfg: &GibbsConfig,
    draws: usize,
    thin: usize,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut chain = TruncatedChain::with_cache(constraints, cache, &cfg.init)?;
    let mut rng = rng_from(cfg.seed);
    for _ in 0..cfg.burn_in {
        chain.sweep(&mut rng);
    }
    let mut out = Vec::with_capacity(draws);
    let mut full = vec![0.0; chain.dim()];
    for _ in 0..draws {
        for _ in 0..thin.max(1) {
            chain.sweep(&mut rng);
        }
        chain.write_full_state(&mut full);
        out.push(full.clone());
    }
    Ok(out)
}
