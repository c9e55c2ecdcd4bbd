//! Classification of a categorical target and imputation of missing cells
//! under a fitted sparse latent Gaussian model.
//!
//! Prediction conditions on the sparse covariance: the chosen precision
//! estimate is inverted and nudged positive definite, the target coordinate
//! is freed, and category probabilities are the interval masses of the
//! target's latent coordinate over one shared Gibbs run. The EM mean is
//! kept as-is (only the covariance is sparsified).

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::data::{
    constraints_for_row, discretize, Cell, CellConstraint, MixedDataset, VarKind,
};
use crate::em::{em_fit, EmConfig, LatentParams};
use crate::error::{Error, Result};
use crate::gibbs::{interval_counts, sample_draws, ConditionalCache, GibbsConfig};
use crate::numerics::{psd_repair, CovMatrix};
use crate::seed::{derive_seed, rng_from};
use crate::sparse::{default_lambda_grid, precision_path, SparseMethod};
use crate::thresholds::estimate_thresholds;

/// Sweeps separating consecutive imputation draws from one chain.
pub const IMPUTE_THIN: usize = 10;

/// Covariance used for prediction: inverse of the sparse precision estimate,
/// repaired positive definite (constrained-L1 output may be indefinite).
pub fn prediction_covariance(omega_lambda: &DMatrix<f64>) -> Result<CovMatrix> {
    let inv = omega_lambda
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular precision estimate".into()))?;
    let sym = (&inv + inv.transpose()) * 0.5;
    psd_repair(&sym, 1e-8)
}

fn check_same_schema(ds: &MixedDataset, params: &LatentParams) -> Result<()> {
    if ds.schema() != params.schema() {
        return Err(Error::Schema(
            "dataset schema does not match the model schema".into(),
        ));
    }
    Ok(())
}

/// Classifies one row's target column; returns the predicted level and the
/// per-level probability vector (nonnegative, sums to exactly 1).
pub fn classify_row(
    row: usize,
    target: usize,
    ds: &MixedDataset,
    params: &LatentParams,
    omega_lambda: &DMatrix<f64>,
    cfg: &GibbsConfig,
) -> Result<(usize, Vec<f64>)> {
    check_same_schema(ds, params)?;
    let sigma_pred = prediction_covariance(omega_lambda)?;
    let cache = ConditionalCache::new(params.mu(), &sigma_pred)?;
    classify_row_cached(row, target, ds, params, &cache, cfg)
}

/// As [`classify_row`] with the conditional cache shared across rows (the
/// cross-validation loop classifies many rows under one covariance).
pub(crate) fn classify_row_cached(
    row: usize,
    target: usize,
    ds: &MixedDataset,
    params: &LatentParams,
    cache: &ConditionalCache,
    cfg: &GibbsConfig,
) -> Result<(usize, Vec<f64>)> {
    let levels = match params.schema()[target].kind {
        VarKind::Categorical { levels } => levels,
        VarKind::Continuous => {
            return Err(Error::Domain(format!(
                "classification target column {target} is continuous"
            )));
        }
    };
    let mut cons = constraints_for_row(row, ds, params.thresholds())?;
    cons[target] = CellConstraint::unbounded();
    let cuts = params
        .thresholds()
        .for_column(target)
        .expect("categorical target has thresholds");
    let counts = interval_counts(&cons, target, cuts, cache, cfg)?;
    debug_assert_eq!(counts.iter().sum::<u64>(), cfg.keep as u64);
    let n = cfg.keep as f64;
    let mut probs = vec![0.0; levels];
    let mut partial = 0.0;
    for k in 0..levels - 1 {
        probs[k] = counts[k] as f64 / n;
        partial += probs[k];
    }
    probs[levels - 1] = (1.0 - partial).max(0.0);
    let mut label = 0;
    for k in 1..levels {
        if probs[k] > probs[label] {
            label = k;
        }
    }
    Ok((label, probs))
}

/// Classifies every row of a dataset, sharing one prediction covariance and
/// deriving per-row chain seeds from `seed`; rows run in parallel with
/// results in row order.
pub fn classify_dataset(
    ds: &MixedDataset,
    target: usize,
    params: &LatentParams,
    omega_lambda: &DMatrix<f64>,
    gibbs: &GibbsConfig,
    seed: u64,
) -> Result<Vec<(usize, Vec<f64>)>> {
    check_same_schema(ds, params)?;
    let sigma_pred = prediction_covariance(omega_lambda)?;
    let cache = ConditionalCache::new(params.mu(), &sigma_pred)?;
    (0..ds.n_rows())
        .into_par_iter()
        .map(|i| {
            let cfg = GibbsConfig {
                burn_in: gibbs.burn_in,
                keep: gibbs.keep,
                seed: derive_seed(seed, &[0x636c_6673, i as u64]),
                init: gibbs.init.clone(),
            };
            classify_row_cached(i, target, ds, params, &cache, &cfg)
        })
        .collect()
}

/// Draws `draws` completed datasets by sampling the constrained latent
/// vector per row and copying sampled values into the missing cells.
/// Observed cells are never altered.
pub fn impute_dataset(
    ds: &MixedDataset,
    params: &LatentParams,
    cfg: &GibbsConfig,
    draws: usize,
) -> Result<Vec<MixedDataset>> {
    check_same_schema(ds, params)?;
    if draws == 0 {
        return Err(Error::Domain("draws must be positive".into()));
    }
    let cache = ConditionalCache::new(params.mu(), params.sigma())?;
    let per_row: Vec<Result<Option<Vec<Vec<f64>>>>> = (0..ds.n_rows())
        .into_par_iter()
        .map(|i| {
            if ds.row(i).iter().all(|c| !c.is_missing()) {
                return Ok(None); // nothing to impute in this row
            }
            let cons = constraints_for_row(i, ds, params.thresholds())?;
            let row_cfg = GibbsConfig {
                burn_in: cfg.burn_in,
                keep: cfg.keep,
                seed: derive_seed(cfg.seed, &[0x696d_7075, i as u64]),
                init: cfg.init.clone(),
            };
            sample_draws(&cons, &cache, &row_cfg, draws, IMPUTE_THIN).map(Some)
        })
        .collect();

    let mut outputs = vec![ds.clone(); draws];
    for (i, r) in per_row.into_iter().enumerate() {
        let Some(latents) = r? else { continue };
        for (d, latent) in latents.into_iter().enumerate() {
            for j in 0..ds.n_cols() {
                if ds.cell(i, j).is_missing() {
                    let cell = match ds.schema()[j].kind {
                        VarKind::Continuous => Cell::Cont(latent[j]),
                        VarKind::Categorical { .. } => {
                            let cuts = params.thresholds().for_column(j).unwrap();
                            Cell::Cat(discretize(cuts, latent[j]))
                        }
                    };
                    outputs[d].set_cell_unchecked(i, j, cell);
                }
            }
        }
    }
    Ok(outputs)
}

/// One row of a cross-validation table.
#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub lambda: f64,
    pub mean_error: f64,
    pub sd_error: f64,
}

/// Per-lambda prediction errors and the selected tuning parameter.
#[derive(Debug, Clone)]
pub struct CvTable {
    pub rows: Vec<CvRow>,
    pub best_lambda: f64,
}

/// Misclassification rate of predictions against observed labels.
pub fn error_rate(predicted: &[usize], actual: &[usize]) -> f64 {
    assert_eq!(predicted.len(), actual.len());
    if predicted.is_empty() {
        return f64::NAN;
    }
    let wrong = predicted
        .iter()
        .zip(actual)
        .filter(|(p, a)| p != a)
        .count();
    wrong as f64 / predicted.len() as f64
}

/// Seeded k-fold cross-validation of the full pipeline (thresholds + EM +
/// sparse path + classification), re-estimated per training fold. Rows with
/// a missing target label never enter the error computation. Ties on the
/// minimum error resolve to the larger (sparser) lambda.
pub fn cross_validate(
    ds: &MixedDataset,
    target: usize,
    lambdas: Option<Vec<f64>>,
    grid_size: usize,
    method: SparseMethod,
    folds: usize,
    em_cfg: &EmConfig,
    seed: u64,
) -> Result<CvTable> {
    if folds < 2 {
        return Err(Error::Domain("folds must be at least 2".into()));
    }
    if !ds.schema()[target].kind.is_categorical() {
        return Err(Error::Domain("cross-validation target must be categorical".into()));
    }
    let n = ds.n_rows();
    let labelled = (0..n)
        .filter(|&i| matches!(ds.cell(i, target), Cell::Cat(_)))
        .count();
    if labelled < folds {
        return Err(Error::Domain(format!(
            "target column has {labelled} observed labels for {folds} folds"
        )));
    }

    // Seeded fold assignment: shuffle then deal round-robin.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(derive_seed(seed, &[0x666f_6c64]));
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % folds;
    }

    let mut grid = lambdas;
    let mut per_fold_errors: Vec<Vec<f64>> = Vec::new(); // [fold][lambda]
    for f in 0..folds {
        let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let train = ds.subset(&train_rows);

        let observed_classes: std::collections::BTreeSet<usize> = train_rows
            .iter()
            .filter_map(|&i| match ds.cell(i, target) {
                Cell::Cat(l) => Some(l),
                _ => None,
            })
            .collect();
        if observed_classes.len() < 2 {
            log::warn!(
                "fold {f}: training target has a single observed class; fold still runs"
            );
        }

        let thr = estimate_thresholds(&train)?;
        let mut fold_cfg = em_cfg.clone();
        fold_cfg.seed = derive_seed(seed, &[0x656d, f as u64]);
        let (params, _) = em_fit(&train, &thr, &fold_cfg)?;
        let grid_ref: &[f64] = match &grid {
            Some(g) => g,
            None => {
                grid = Some(default_lambda_grid(params.sigma(), grid_size));
                grid.as_ref().unwrap()
            }
        };
        let path = precision_path(params.sigma(), grid_ref, method)?;

        let mut errors = Vec::with_capacity(grid_ref.len());
        for (k, omega) in path.omegas.iter().enumerate() {
            let sigma_pred = prediction_covariance(omega)?;
            let cache = ConditionalCache::new(params.mu(), &sigma_pred)?;
            let results: Vec<Result<Option<bool>>> = test_rows
                .par_iter()
                .map(|&i| {
                    let actual = match ds.cell(i, target) {
                        Cell::Cat(l) => l,
                        _ => return Ok(None),
                    };
                    let row_cfg = GibbsConfig {
                        burn_in: em_cfg.gibbs.burn_in,
                        keep: em_cfg.gibbs.keep,
                        seed: derive_seed(seed, &[0x636c73, f as u64, i as u64]),
                        init: em_cfg.gibbs.init.clone(),
                    };
                    let (label, _) =
                        classify_row_cached(i, target, ds, &params, &cache, &row_cfg)?;
                    Ok(Some(label != actual))
                })
                .collect();
            let mut wrong = 0usize;
            let mut total = 0usize;
            for r in results {
                if let Some(miss) = r? {
                    total += 1;
                    wrong += usize::from(miss);
                }
            }
            errors.push(if total == 0 {
                f64::NAN
            } else {
                wrong as f64 / total as f64
            });
            let _ = k;
        }
        per_fold_errors.push(errors);
    }

    let grid = grid.unwrap();
    let mut rows = Vec::with_capacity(grid.len());
    for (k, &lambda) in grid.iter().enumerate() {
        let vals: Vec<f64> = per_fold_errors
            .iter()
            .map(|e| e[k])
            .filter(|v| v.is_finite())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        let sd = if vals.len() > 1 {
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (vals.len() - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        rows.push(CvRow { lambda, mean_error: mean, sd_error: sd });
    }
    // Grid is descending, so the first minimum is the largest such lambda.
    let mut best = 0usize;
    for k in 1..rows.len() {
        if rows[k].mean_error < rows[best].mean_error {
            best = k;
        }
    }
    let best_lambda = rows[best].lambda;
    Ok(CvTable { rows, best_lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Thresholds, VariableSchema};
    use crate::numerics::{normal_cdf, MeanVector};
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, DMatrix};

    fn two_col_params(rho: f64, cut: f64) -> LatentParams {
        let schema = vec![
            VariableSchema::continuous("x"),
            VariableSchema::categorical("y", 2).unwrap(),
        ];
        let thr = Thresholds::new(
            &schema,
            vec![None, Some(vec![f64::NEG_INFINITY, cut, f64::INFINITY])],
        )
        .unwrap();
        LatentParams::new(
            MeanVector::zeros(2),
            CovMatrix::new(dmatrix![1.0, rho; rho, 1.0]).unwrap(),
            thr,
            schema,
        )
        .unwrap()
    }

    #[test]
    fn classify_identity_covariance_uses_marginal_masses() {
        let params = two_col_params(0.0, 0.3);
        let ds = MixedDataset::from_cells(
            params.schema().to_vec(),
            vec![Cell::Cont(5.0), Cell::Missing],
        )
        .unwrap();
        // Identity precision -> identity covariance; features cannot matter.
        let omega = DMatrix::identity(2, 2);
        let cfg = GibbsConfig { burn_in: 50, keep: 20_000, seed: 3, ..Default::default() };
        let (label, probs) = classify_row(0, 1, &ds, &params, &omega, &cfg).unwrap();
        let p1 = 1.0 - normal_cdf(0.3);
        assert_abs_diff_eq!(probs[1], p1, epsilon = 0.02);
        assert_eq!(label, 0); // Phi(0.3) > 1 - Phi(0.3)
        assert_eq!(probs.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn classify_conditional_closed_form() {
        // x observed at 1.0, rho = 0.8 -> P(level 1) = Phi(0.8/sqrt(0.36)).
        let params = two_col_params(0.8, 0.0);
        let ds = MixedDataset::from_cells(
            params.schema().to_vec(),
            vec![Cell::Cont(1.0), Cell::Missing],
        )
        .unwrap();
        let omega = dmatrix![1.0, 0.8; 0.8, 1.0].try_inverse().unwrap();
        let cfg = GibbsConfig { burn_in: 100, keep: 100_000, seed: 9, ..Default::default() };
        let (label, probs) = classify_row(0, 1, &ds, &params, &omega, &cfg).unwrap();
        let expect = normal_cdf(0.8 / 0.36f64.sqrt());
        assert_abs_diff_eq!(probs[1], expect, epsilon = 0.01);
        assert_eq!(label, 1);
    }

    #[test]
    fn classify_all_features_missing_reduces_to_marginal() {
        let params = two_col_params(0.8, -0.4);
        let ds = MixedDataset::from_cells(
            params.schema().to_vec(),
            vec![Cell::Missing, Cell::Missing],
        )
        .unwrap();
        let omega = dmatrix![1.0, 0.8; 0.8, 1.0].try_inverse().unwrap();
        let cfg = GibbsConfig { burn_in: 100, keep: 50_000, seed: 4, ..Default::default() };
        let (label, probs) = classify_row(0, 1, &ds, &params, &omega, &cfg).unwrap();
        let p1 = 1.0 - normal_cdf(-0.4);
        assert_abs_diff_eq!(probs[1], p1, epsilon = 0.02);
        assert_eq!(label, 1); // modal category
    }

    #[test]
    fn classify_rejects_continuous_target() {
        let params = two_col_params(0.0, 0.0);
        let ds = MixedDataset::from_cells(
            params.schema().to_vec(),
            vec![Cell::Cont(0.0), Cell::Cat(1)],
        )
        .unwrap();
        let omega = DMatrix::identity(2, 2);
        assert!(classify_row(0, 0, &ds, &params, &omega, &GibbsConfig::default()).is_err());
    }

    #[test]
    fn classify_rejects_singular_omega() {
        let params = two_col_params(0.0, 0.0);
        let ds = MixedDataset::from_cells(
            params.schema().to_vec(),
            vec![Cell::Cont(0.0), Cell::Missing],
        )
        .unwrap();
        let omega = DMatrix::zeros(2, 2);
        assert!(classify_row(0, 1, &ds, &params, &omega, &GibbsConfig::default()).is_err());
    }

    #[test]
    fn impute_complete_dataset_is_identity() {
        let params = two_col_params(0.5, 0.0);
        let ds = MixedDataset::from_cells(
            params.schema().to_vec(),
            vec![Cell::Cont(0.5), Cell::Cat(1), Cell::Cont(-0.2), Cell::Cat(0)],
        )
        .unwrap();
        let out = impute_dataset(&ds, &params, &GibbsConfig::default(), 3).unwrap();
        assert_eq!(out.len(), 3);
        for d in out {
            assert_eq!(d, ds);
        }
    }

    #[test]
    fn impute_binary_marginal_frequency() {
        // One missing binary cell under independence: imputed level 1 with
        // probability 1 - Phi(cut).
        let cut = 0.3;
        let params = two_col_params(0.0, cut);
        let ds = MixedDataset::from_cells(
            params.schema().to_vec(),
            vec![Cell::Cont(2.0), Cell::Missing],
        )
        .unwrap();
        let draws = 10_000;
        let cfg = GibbsConfig { burn_in: 20, keep: 1, seed: 31, ..Default::default() };
        let out = impute_dataset(&ds, &params, &cfg, draws).unwrap();
        let ones = out
            .iter()
            .filter(|d| d.cell(0, 1) == Cell::Cat(1))
            .count() as f64;
        let expect = 1.0 - normal_cdf(cut);
        let stderr = (expect * (1.0 - expect) / draws as f64).sqrt();
        assert_abs_diff_eq!(ones / draws as f64, expect, epsilon = 3.0 * stderr);
        // Observed cells never altered.
        for d in &out {
            assert_eq!(d.cell(0, 0), Cell::Cont(2.0));
        }
    }

    #[test]
    fn impute_continuous_conditional_mean() {
        // Missing continuous cell with the other coordinate observed at 1.0
        // under rho = 0.8: imputed mean tends to 0.8.
        let schema = vec![
            VariableSchema::continuous("x"),
            VariableSchema::continuous("z"),
        ];
        let thr = Thresholds::new(&schema, vec![None, None]).unwrap();
        let params = LatentParams::new(
            MeanVector::zeros(2),
            CovMatrix::new(dmatrix![1.0, 0.8; 0.8, 1.0]).unwrap(),
            thr,
            schema.clone(),
        )
        .unwrap();
        let ds = MixedDataset::from_cells(
            schema,
            vec![Cell::Missing, Cell::Cont(1.0)],
        )
        .unwrap();
        let draws = 10_000;
        let cfg = GibbsConfig { burn_in: 20, keep: 1, seed: 77, ..Default::default() };
        let out = impute_dataset(&ds, &params, &cfg, draws).unwrap();
        let mean: f64 = out
            .iter()
            .map(|d| match d.cell(0, 0) {
                Cell::Cont(v) => v,
                _ => panic!("cell not imputed"),
            })
            .sum::<f64>()
            / draws as f64;
        assert_abs_diff_eq!(mean, 0.8, epsilon = 0.02);
    }

    #[test]
    fn error_rate_of_constant_majority_predictor_is_half_on_balanced_labels() {
        let actual: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let predicted = vec![0usize; 100];
        assert_eq!(error_rate(&predicted, &actual), 0.5);
    }

    #[test]
    fn leave_one_out_cv_runs_on_tiny_data_with_single_class_folds() {
        // n = folds = 8 with a lone level-1 label: the fold holding it out
        // trains on a single class (warned, still runs) and every test fold
        // has size one.
        let schema = vec![
            VariableSchema::continuous("x"),
            VariableSchema::categorical("y", 2).unwrap(),
        ];
        let mut cells = Vec::new();
        for i in 0..8 {
            cells.push(Cell::Cont(i as f64 * 0.3 - 1.0));
            cells.push(Cell::Cat(usize::from(i == 3)));
        }
        let ds = MixedDataset::from_cells(schema, cells).unwrap();
        let mut cfg = crate::em::EmConfig::default();
        cfg.max_iters = 2;
        cfg.gibbs.burn_in = 5;
        cfg.gibbs.keep = 16;
        let table = cross_validate(
            &ds,
            1,
            None,
            3,
            SparseMethod::Glasso,
            8,
            &cfg,
            99,
        )
        .unwrap();
        assert_eq!(table.rows.len(), 3);
        for row in &table.rows {
            assert!(row.mean_error.is_finite());
            assert!((0.0..=1.0).contains(&row.mean_error));
        }
    }

    #[test]
    fn classify_label_invariant_under_column_permutation() {
        // Three columns, clear signal toward level 1; permuting the
        // non-target columns (consistently across data, covariance and
        // thresholds) must not change the label.
        let schema = vec![
            VariableSchema::continuous("a"),
            VariableSchema::continuous("b"),
            VariableSchema::categorical("y", 2).unwrap(),
        ];
        let sigma = nalgebra::dmatrix![
            1.0, 0.2, 0.7;
            0.2, 1.0, 0.4;
            0.7, 0.4, 1.0
        ];
        let thr = Thresholds::new(
            &schema,
            vec![None, None, Some(vec![f64::NEG_INFINITY, -0.1, f64::INFINITY])],
        )
        .unwrap();
        let params = LatentParams::new(
            MeanVector::zeros(3),
            CovMatrix::new(sigma.clone()).unwrap(),
            thr,
            schema.clone(),
        )
        .unwrap();
        let ds = MixedDataset::from_cells(
            schema.clone(),
            vec![Cell::Cont(1.2), Cell::Cont(0.4), Cell::Missing],
        )
        .unwrap();
        let omega = sigma.clone().try_inverse().unwrap();
        let cfg = GibbsConfig { burn_in: 100, keep: 4000, seed: 12, ..Default::default() };
        let (label, probs) = classify_row(0, 2, &ds, &params, &omega, &cfg).unwrap();

        // Permutation swapping the two feature columns: (a, b, y) -> (b, a, y).
        let perm = [1usize, 0, 2];
        let schema_p: Vec<VariableSchema> = perm.iter().map(|&j| schema[j].clone()).collect();
        let sigma_p =
            nalgebra::DMatrix::from_fn(3, 3, |r, c| sigma[(perm[r], perm[c])]);
        let thr_p = Thresholds::new(
            &schema_p,
            vec![None, None, Some(vec![f64::NEG_INFINITY, -0.1, f64::INFINITY])],
        )
        .unwrap();
        let params_p = LatentParams::new(
            MeanVector::zeros(3),
            CovMatrix::new(sigma_p.clone()).unwrap(),
            thr_p,
            schema_p.clone(),
        )
        .unwrap();
        let ds_p = MixedDataset::from_cells(
            schema_p,
            vec![Cell::Cont(0.4), Cell::Cont(1.2), Cell::Missing],
        )
        .unwrap();
        let omega_p = sigma_p.try_inverse().unwrap();
        let (label_p, probs_p) = classify_row(0, 2, &ds_p, &params_p, &omega_p, &cfg).unwrap();

        assert_eq!(label, label_p);
        // The probabilities agree up to Monte-Carlo noise (different scan
        // order, same conditional law).
        assert_abs_diff_eq!(probs[1], probs_p[1], epsilon = 0.05);
    }
}
