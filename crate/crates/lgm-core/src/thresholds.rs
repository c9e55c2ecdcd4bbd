//! Threshold estimation for categorical columns from marginal empirical
//! distributions.
//!
//! For column `j` with `n_j` levels the cut estimate is
//! `C_jk = quantile(fraction of observed cells with value < k)`, computed
//! over observed cells only; the endpoints come out as -inf / +inf because
//! the fractions are exactly 0 and 1. An entirely unobserved extreme level
//! therefore yields an infinite interior cut (a zero-probability category).

use crate::data::{Cell, MixedDataset, Thresholds, VarKind};
use crate::error::{Error, Result};
use crate::numerics::quantile_total;

/// Estimates thresholds for every categorical column of the dataset.
pub fn estimate_thresholds(ds: &MixedDataset) -> Result<Thresholds> {
    let mut cuts: Vec<Option<Vec<f64>>> = Vec::with_capacity(ds.n_cols());
    for (j, col) in ds.schema().iter().enumerate() {
        match col.kind {
            VarKind::Continuous => cuts.push(None),
            VarKind::Categorical { levels } => {
                let mut counts = vec![0usize; levels];
                let mut observed = 0usize;
                for i in 0..ds.n_rows() {
                    match ds.cell(i, j) {
                        Cell::Cat(l) => {
                            counts[l] += 1;
                            observed += 1;
                        }
                        Cell::Missing => {}
                        Cell::Cont(_) => unreachable!("validated at load"),
                    }
                }
                if observed == 0 {
                    return Err(Error::column(
                        col.name.clone(),
                        "categorical column is entirely missing; cannot estimate thresholds",
                    ));
                }
                let mut c = Vec::with_capacity(levels + 1);
                let mut below = 0usize;
                for k in 0..=levels {
                    let frac = below as f64 / observed as f64;
                    c.push(quantile_total(frac));
                    if k < levels {
                        below += counts[k];
                    }
                }
                cuts.push(Some(c));
            }
        }
    }
    Thresholds::new(ds.schema(), cuts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VariableSchema;
    use crate::numerics::{normal_cdf, normal_quantile, standard_normal};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn binary_column(cells: Vec<Cell>) -> MixedDataset {
        let schema = vec![VariableSchema::categorical("y", 2).unwrap()];
        MixedDataset::from_cells(schema, cells).unwrap()
    }

    #[test]
    fn balanced_binary_gives_zero_cut() {
        let ds = binary_column(vec![Cell::Cat(0), Cell::Cat(1), Cell::Cat(0), Cell::Cat(1)]);
        let thr = estimate_thresholds(&ds).unwrap();
        let c = thr.for_column(0).unwrap();
        assert_eq!(c, &[f64::NEG_INFINITY, 0.0, f64::INFINITY]);
    }

    #[test]
    fn unobserved_top_level_gives_infinite_cut() {
        let ds = binary_column(vec![Cell::Cat(0), Cell::Cat(0), Cell::Cat(0)]);
        let thr = estimate_thresholds(&ds).unwrap();
        let c = thr.for_column(0).unwrap();
        assert_eq!(c[1], f64::INFINITY);
    }

    #[test]
    fn fully_missing_column_errors() {
        let ds = binary_column(vec![Cell::Missing, Cell::Missing]);
        let err = estimate_thresholds(&ds).unwrap_err();
        assert!(err.to_string().contains('y'), "{err}");
    }

    #[test]
    fn three_level_quartiles() {
        // Proportions (0.25, 0.50, 0.25) over 8 observed cells.
        let cells = vec![
            Cell::Cat(0),
            Cell::Cat(1),
            Cell::Cat(1),
            Cell::Cat(1),
            Cell::Cat(1),
            Cell::Cat(2),
            Cell::Cat(2),
            Cell::Cat(0),
        ];
        let schema = vec![VariableSchema::categorical("y", 3).unwrap()];
        let ds = MixedDataset::from_cells(schema, cells).unwrap();
        let thr = estimate_thresholds(&ds).unwrap();
        let c = thr.for_column(0).unwrap();
        assert_abs_diff_eq!(c[1], -0.6744898, epsilon = 1e-6);
        assert_abs_diff_eq!(c[2], 0.6744898, epsilon = 1e-6);
    }

    #[test]
    fn missing_cells_are_excluded_from_the_fraction() {
        let ds = binary_column(vec![
            Cell::Cat(0),
            Cell::Missing,
            Cell::Cat(1),
            Cell::Missing,
        ]);
        let thr = estimate_thresholds(&ds).unwrap();
        assert_eq!(thr.for_column(0).unwrap()[1], 0.0);
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = crate::seed::rng_from(5);
        let cells: Vec<Cell> = (0..100)
            .map(|_| match rng.random_range(0..3u8) {
                0 => Cell::Cat(0),
                1 => Cell::Cat(1),
                _ => Cell::Missing,
            })
            .collect();
        let mut shuffled = cells.clone();
        // Fisher-Yates with the crate RNG.
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let a = estimate_thresholds(&binary_column(cells)).unwrap();
        let b = estimate_thresholds(&binary_column(shuffled)).unwrap();
        assert_eq!(a, b);
    }

    /// Seeded consistency check: discretize a standard normal column at a
    /// known cut and verify the estimate error shrinks with n.
    #[test]
    fn consistency_with_sample_size() {
        let true_cut = 0.3;
        let mean_abs_err = |n: usize| -> f64 {
            let mut total = 0.0;
            for rep in 0..50u64 {
                let mut rng = crate::seed::rng_from(crate::seed::derive_seed(99, &[rep, n as u64]));
                let cells: Vec<Cell> = (0..n)
                    .map(|_| {
                        let w = standard_normal(&mut rng);
                        Cell::Cat(usize::from(w > true_cut))
                    })
                    .collect();
                let thr = estimate_thresholds(&binary_column(cells)).unwrap();
                total += (thr.for_column(0).unwrap()[1] - true_cut).abs();
            }
            total / 50.0
        };
        let small = mean_abs_err(200);
        let large = mean_abs_err(20_000);
        assert!(large < small, "error did not decrease: {small} -> {large}");
        assert!(large <= 0.05, "error at n=20000 too large: {large}");
    }

    #[test]
    fn estimator_agrees_with_direct_quantile() {
        // Cross-check against the public quantile on a 4-level column.
        let mut cells = Vec::new();
        for (level, count) in [(0usize, 10), (1, 20), (2, 30), (3, 40)] {
            cells.extend(std::iter::repeat_n(Cell::Cat(level), count));
        }
        let schema = vec![VariableSchema::categorical("y", 4).unwrap()];
        let ds = MixedDataset::from_cells(schema, cells).unwrap();
        let thr = estimate_thresholds(&ds).unwrap();
        let c = thr.for_column(0).unwrap();
        assert_eq!(c[1], normal_quantile(0.1).unwrap());
        assert_eq!(c[2], normal_quantile(0.3).unwrap());
        assert_eq!(c[3], normal_quantile(0.6).unwrap());
        // And the fractions round-trip through the cdf.
        assert_abs_diff_eq!(normal_cdf(c[2]), 0.3, epsilon = 1e-12);
    }
}
