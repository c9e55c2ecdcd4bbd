//! Monte-Carlo EM for the latent Gaussian parameters.
//!
//! Each iteration estimates per-row conditional first/second moments of the
//! latent vector with the constrained Gibbs sampler (exact for rows with no
//! free coordinates), then applies the closed-form mean/covariance update.
//! The categorical coordinates are only identified up to scale, so after
//! every update the estimate is projected back onto the identifiable set
//! (mean 0, unit variance on categorical coordinates) and nudged positive
//! definite.
//!
//! Rows are processed in parallel; per-row sampler seeds derive from
//! (seed, iteration, row) and the reduction runs in fixed row order, so the
//! result is bit-identical regardless of worker count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{constraints_for_row, CellConstraint, MixedDataset, Thresholds, VarKind, VariableSchema};
use crate::error::{Error, Result};
use crate::gibbs::{conditional_moments_cached, ConditionalCache, GibbsConfig};
use crate::numerics::{psd_repair, standard_normal, CovMatrix, MeanVector};
use crate::seed::{derive_seed, rng_from};

/// Eigenvalue floor applied after every M-step.
pub const SIGMA_EIG_FLOOR: f64 = 1e-8;

/// Fitted latent Gaussian model: mean, covariance, thresholds and schema.
///
/// Invariant: every categorical coordinate has mean 0 and unit variance
/// (the scale fixed by the thresholds).
#[derive(Debug, Clone)]
pub struct LatentParams {
    mu: MeanVector,
    sigma: CovMatrix,
    thresholds: Thresholds,
    schema: Vec<VariableSchema>,
}

impl LatentParams {
    pub fn new(
        mu: MeanVector,
        sigma: CovMatrix,
        thresholds: Thresholds,
        schema: Vec<VariableSchema>,
    ) -> Result<Self> {
        let p = schema.len();
        if mu.dim() != p || sigma.dim() != p || thresholds.n_cols() != p {
            return Err(Error::Schema("model component dimensions disagree".into()));
        }
        for (j, col) in schema.iter().enumerate() {
            if col.kind.is_categorical() {
                if mu.vector()[j].abs() > 1e-6 {
                    return Err(Error::Domain(format!(
                        "categorical coordinate {j} has nonzero mean {}",
                        mu.vector()[j]
                    )));
                }
                if (sigma.matrix()[(j, j)] - 1.0).abs() > 1e-6 {
                    return Err(Error::Domain(format!(
                        "categorical coordinate {j} has variance {}",
                        sigma.matrix()[(j, j)]
                    )));
                }
            }
        }
        Ok(LatentParams { mu, sigma, thresholds, schema })
    }

    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    pub fn mu(&self) -> &MeanVector {
        &self.mu
    }

    pub fn sigma(&self) -> &CovMatrix {
        &self.sigma
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn schema(&self) -> &[VariableSchema] {
        &self.schema
    }
}

/// EM iteration budget and tolerances.
#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when no parameter entry moved more than this between iterations.
    pub param_tol: f64,
    /// Sweep budget per row per E-step; the seed field is ignored (per-row
    /// seeds derive from `seed`).
    pub gibbs: GibbsConfig,
    pub seed: u64,
    /// Seed-driven random positive-definite starting covariance instead of
    /// the identity.
    pub random_init: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 50,
            param_tol: 1e-3,
            gibbs: GibbsConfig::default(),
            seed: 0,
            random_init: false,
        }
    }
}

/// Per-iteration progress record.
#[derive(Debug, Clone, PartialEq)]
pub struct EmIteration {
    pub iter: usize,
    pub max_param_change: f64,
    pub sampler_underflows: u64,
}

/// Parameter-change log of one fit.
#[derive(Debug, Clone, Default)]
pub struct EmTrace {
    pub iterations: Vec<EmIteration>,
}

/// Fits the latent mean and covariance by Monte-Carlo EM.
pub fn em_fit(
    ds: &MixedDataset,
    thr: &Thresholds,
    cfg: &EmConfig,
) -> Result<(LatentParams, EmTrace)> {
    let n = ds.n_rows();
    let p = ds.n_cols();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 rows, got {n}")));
    }
    if !(cfg.param_tol > 0.0) {
        return Err(Error::Domain("param_tol must be positive".into()));
    }
    if cfg.max_iters == 0 {
        return Err(Error::Domain("max_iters must be positive".into()));
    }
    let row_constraints: Vec<Vec<CellConstraint>> = (0..n)
        .map(|i| constraints_for_row(i, ds, thr))
        .collect::<Result<_>>()?;
    let any_free = row_constraints
        .iter()
        .any(|cons| cons.iter().any(|c| !c.is_point()));

    let mut mu = MeanVector::zeros(p);
    let mut sigma = if cfg.random_init {
        random_pd_init(p, ds.schema(), cfg.seed)?
    } else {
        CovMatrix::new(DMatrix::identity(p, p))?
    };

    let mut trace = EmTrace::default();
    for t in 0..cfg.max_iters {
        let cache = ConditionalCache::new(&mu, &sigma)?;
        let per_row: Vec<Result<(DVector<f64>, DMatrix<f64>, u64)>> = row_constraints
            .par_iter()
            .enumerate()
            .map(|(i, cons)| {
                let row_cfg = GibbsConfig {
                    burn_in: cfg.gibbs.burn_in,
                    keep: cfg.gibbs.keep,
                    seed: derive_seed(cfg.seed, &[t as u64, i as u64]),
                    init: cfg.gibbs.init.clone(),
                };
                conditional_moments_cached(cons, &cache, &row_cfg)
            })
            .collect();

        // Deterministic reduction in row order.
        let mut sum_first = DVector::zeros(p);
        let mut sum_second = DMatrix::zeros(p, p);
        let mut underflows = 0u64;
        for (i, r) in per_row.into_iter().enumerate() {
            let (first, second, uf) = r?;
            if !first.iter().all(|v| v.is_finite()) || !second.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite conditional moment at row {i}"
                )));
            }
            sum_first += first;
            sum_second += second;
            underflows += uf;
        }
        let mu_new = &sum_first / n as f64;
        let second_mean = &sum_second / n as f64;
        let mut sigma_new = &second_mean - &mu_new * mu_new.transpose();

        for (j, col) in ds.schema().iter().enumerate() {
            if sigma_new[(j, j)] < 1e-12 {
                return Err(Error::column(
                    col.name.clone(),
                    format!("degenerate column: conditional variance {}", sigma_new[(j, j)]),
                ));
            }
        }

        // Project back onto the identifiable set: categorical coordinates
        // have mean zero and unit variance by definition.
        let mut mu_new = mu_new;
        let mut scale = vec![1.0f64; p];
        for (j, col) in ds.schema().iter().enumerate() {
            if col.kind.is_categorical() {
                scale[j] = 1.0 / sigma_new[(j, j)].sqrt();
                mu_new[j] = 0.0;
            }
        }
        for j in 0..p {
            for k in 0..p {
                sigma_new[(j, k)] *= scale[j] * scale[k];
            }
        }

        let sigma_new = psd_repair(&sigma_new, SIGMA_EIG_FLOOR)?;
        let mu_new = MeanVector::new(mu_new)?;

        let mut max_change = 0.0f64;
        for j in 0..p {
            max_change = max_change.max((mu_new.vector()[j] - mu.vector()[j]).abs());
            for k in 0..p {
                max_change =
                    max_change.max((sigma_new.matrix()[(j, k)] - sigma.matrix()[(j, k)]).abs());
            }
        }
        trace.iterations.push(EmIteration {
            iter: t,
            max_param_change: max_change,
            sampler_underflows: underflows,
        });
        if underflows > 0 {
            log::debug!("EM iteration {t}: {underflows} interval-mass underflows");
        }
        mu = mu_new;
        sigma = sigma_new;
        // With no free coordinates the E-step is parameter-independent and
        // the first M-step already lands on the maximum likelihood estimate.
        if !any_free || max_change < cfg.param_tol {
            break;
        }
    }

    let params = LatentParams::new(mu, sigma, thr.clone(), ds.schema().to_vec())?;
    Ok((params, trace))
}

/// Seeded random positive-definite covariance, projected to the
/// categorical-coordinate scale.
fn random_pd_init(p: usize, schema: &[VariableSchema], seed: u64) -> Result<CovMatrix> {
    let mut rng = rng_from(derive_seed(seed, &[u64::from_le_bytes(*b"eminit\0\0")]));
    let a = DMatrix::from_fn(p, p, |_, _| standard_normal(&mut rng) * 0.3);
    let mut m = &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5;
    let mut scale = vec![1.0f64; p];
    for (j, col) in schema.iter().enumerate() {
        if col.kind.is_categorical() {
            scale[j] = 1.0 / m[(j, j)].sqrt();
        }
    }
    for j in 0..p {
        for k in 0..p {
            m[(j, k)] *= scale[j] * scale[k];
        }
    }
    psd_repair(&m, SIGMA_EIG_FLOOR)
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExtReal {
    Num(f64),
    Tag(String),
}

impl ExtReal {
    fn encode(v: f64) -> ExtReal {
        if v == f64::NEG_INFINITY {
            ExtReal::Tag("-inf".into())
        } else if v == f64::INFINITY {
            ExtReal::Tag("+inf".into())
        } else {
            ExtReal::Num(v)
        }
    }

    fn decode(&self) -> Result<f64> {
        match self {
            ExtReal::Num(v) => Ok(*v),
            ExtReal::Tag(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            ExtReal::Tag(s) if s == "+inf" => Ok(f64::INFINITY),
            ExtReal::Tag(s) => Err(Error::ModelFormat(format!("bad threshold token `{s}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaDto {
    name: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ModelDto {
    version: u32,
    schema: Vec<SchemaDto>,
    thresholds: Vec<Option<Vec<ExtReal>>>,
    mu: Vec<f64>,
    /// Row-major.
    sigma: Vec<Vec<f64>>,
}

/// Writes the model as JSON (thresholds encode the infinities as
/// "-inf"/"+inf" strings; everything else is plain numbers).
pub fn save_model(params: &LatentParams, path: &Path) -> Result<()> {
    let dto = ModelDto {
        version: MODEL_VERSION,
        schema: params
            .schema
            .iter()
            .map(|c| SchemaDto {
                name: c.name.clone(),
                kind: match c.kind {
                    VarKind::Continuous => "continuous".into(),
                    VarKind::Categorical { .. } => "categorical".into(),
                },
                levels: c.kind.levels(),
            })
            .collect(),
        thresholds: params
            .thresholds
            .columns()
            .iter()
            .map(|c| c.as_ref().map(|v| v.iter().map(|&x| ExtReal::encode(x)).collect()))
            .collect(),
        mu: params.mu.vector().iter().cloned().collect(),
        sigma: (0..params.dim())
            .map(|i| (0..params.dim()).map(|j| params.sigma.matrix()[(i, j)]).collect())
            .collect(),
    };
    let text = serde_json::to_string_pretty(&dto)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Thresholds in the model-file encoding (`null` for continuous columns,
/// infinities as "-inf"/"+inf" strings), as a JSON value.
pub fn thresholds_json(thr: &Thresholds) -> serde_json::Value {
    let cols: Vec<Option<Vec<ExtReal>>> = thr
        .columns()
        .iter()
        .map(|c| c.as_ref().map(|v| v.iter().map(|&x| ExtReal::encode(x)).collect()))
        .collect();
    serde_json::to_value(cols).expect("threshold encoding is always serializable")
}

/// Inverse of [`thresholds_json`]; validates against the schema.
pub fn thresholds_from_json(
    value: &serde_json::Value,
    schema: &[VariableSchema],
) -> Result<Thresholds> {
    let cols: Vec<Option<Vec<ExtReal>>> = serde_json::from_value(value.clone())
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    let cuts: Vec<Option<Vec<f64>>> = cols
        .iter()
        .map(|col| {
            col.as_ref()
                .map(|v| v.iter().map(ExtReal::decode).collect::<Result<Vec<_>>>())
                .transpose()
        })
        .collect::<Result<_>>()?;
    Thresholds::new(schema, cuts)
}

/// Reads a model file written by [`save_model`], re-validating every
/// invariant.
pub fn load_model(path: &Path) -> Result<LatentParams> {
    let text = std::fs::read_to_string(path)?;
    let dto: ModelDto =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if dto.version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported model version {} (expected {MODEL_VERSION})",
            dto.version
        )));
    }
    let schema: Vec<VariableSchema> = dto
        .schema
        .into_iter()
        .map(|c| match (c.kind.as_str(), c.levels) {
            ("continuous", None) => Ok(VariableSchema::continuous(c.name)),
            ("categorical", Some(levels)) => VariableSchema::categorical(c.name, levels),
            _ => Err(Error::ModelFormat(format!(
                "column `{}`: bad kind/levels combination",
                c.name
            ))),
        })
        .collect::<Result<_>>()?;
    let p = schema.len();
    let cuts: Vec<Option<Vec<f64>>> = dto
        .thresholds
        .iter()
        .map(|col| {
            col.as_ref()
                .map(|v| v.iter().map(ExtReal::decode).collect::<Result<Vec<_>>>())
                .transpose()
        })
        .collect::<Result<_>>()?;
    let thresholds = Thresholds::new(&schema, cuts)?;
    if dto.mu.len() != p || dto.sigma.len() != p || dto.sigma.iter().any(|r| r.len() != p) {
        return Err(Error::ModelFormat("mu/sigma dimensions disagree with schema".into()));
    }
    let mu = MeanVector::new(DVector::from_vec(dto.mu))?;
    let sigma = CovMatrix::new(DMatrix::from_fn(p, p, |i, j| dto.sigma[i][j]))?;
    LatentParams::new(mu, sigma, thresholds, schema)
}
