//! Command-line pipeline: simulate benchmark data, fit the latent Gaussian
//! model, compute sparse precision paths, classify, impute, cross-validate,
//! and score precision estimates against ground truth.
//!
//! Every subcommand funnels its randomness through one `--seed`; repeated
//! runs with the same flags produce byte-identical artifacts regardless of
//! `--threads`. Exit codes: 0 success, 1 usage error, 2 runtime error (with
//! partial outputs removed).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use lgm_core::data::{load_csv, load_csv_with_schema, write_csv, write_schema, VarKind};
use lgm_core::em::{em_fit, load_model, save_model, thresholds_json, EmConfig};
use lgm_core::gibbs::GibbsConfig;
use lgm_core::numerics::matrix_norms;
use lgm_core::predict::{classify_dataset, cross_validate, impute_dataset};
use lgm_core::seed::derive_seed;
use lgm_core::sim::{apply_mar_missingness, generate_omega, generate_scenario, ScenarioSpec};
use lgm_core::sparse::{default_lambda_grid, edge_list, precision_path, SparseMethod};
use lgm_core::thresholds::estimate_thresholds;

#[derive(Parser)]
#[command(
    name = "lgm",
    version,
    about = "Latent Gaussian graphical models for mixed data with missing values"
)]
struct Cli {
    /// Cap on worker threads (default: all cores). Outputs do not depend on
    /// this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GibbsOpts {
    /// Discarded sweeps per sampler run.
    #[arg(long, default_value_t = 100)]
    burn_in: usize,
    /// Retained sweeps per sampler run.
    #[arg(long, default_value_t = 500)]
    keep: usize,
}

impl GibbsOpts {
    fn config(&self, seed: u64) -> GibbsConfig {
        GibbsConfig { burn_in: self.burn_in, keep: self.keep, seed, ..Default::default() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic benchmark dataset plus ground-truth files.
    Simulate {
        /// Data-generating layout (1-4).
        #[arg(long)]
        scenario: u8,
        /// Number of rows.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Apply the logistic missing-at-random mechanism.
        #[arg(long, overrides_with = "no_missing")]
        missing: bool,
        /// Keep the dataset fully observed (default).
        #[arg(long = "no-missing")]
        no_missing: bool,
        /// Columns to make missing when --missing is set.
        #[arg(long, default_value_t = 10)]
        missing_cols: usize,
        /// Target missing rate over the selected columns.
        #[arg(long, default_value_t = 0.4)]
        missing_rate: f64,
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate thresholds and fit the latent mean/covariance by EM.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[command(flatten)]
        gibbs: GibbsOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Start from a seed-driven random covariance instead of the identity.
        #[arg(long)]
        random_init: bool,
    },
    /// Sparse precision path over a descending lambda grid.
    Path {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        method: String,
        /// Explicit comma-separated lambda values (descending).
        #[arg(long)]
        lambdas: Option<String>,
        /// Size of the default log-spaced grid when --lambdas is absent.
        #[arg(long, default_value_t = 20)]
        grid: usize,
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify a categorical target column for every row of a dataset.
    Classify {
        #[arg(long)]
        model: PathBuf,
        /// Matrix file holding the sparse precision estimate.
        #[arg(long)]
        omega: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Target column (name, or 0-based index).
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        gibbs: GibbsOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw completed datasets by sampling the missing cells.
    Impute {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Number of completed datasets.
        #[arg(long, default_value_t = 1)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        gibbs: GibbsOpts,
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated prediction error over the lambda grid.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Target column (name, or 0-based index).
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value = "glasso")]
        method: String,
        /// Explicit comma-separated lambda values (descending).
        #[arg(long)]
        lambdas: Option<String>,
        #[arg(long, default_value_t = 20)]
        grid: usize,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[command(flatten)]
        gibbs: GibbsOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV of per-lambda errors to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Frobenius and spectral norm of (estimate - truth).
    EvalOmega {
        /// Matrix file of the estimate.
        #[arg(long)]
        estimate: PathBuf,
        /// Matrix file of the ground truth.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            std::process::exit(2);
        }
    }
    let mut guard = OutputGuard::default();
    match run(cli.command, &mut guard) {
        Ok(()) => guard.disarm(),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

/// Removes everything written by a failed run so no partial artifacts
/// survive.
#[derive(Default)]
struct OutputGuard {
    files: Vec<PathBuf>,
    disarmed: bool,
}

impl OutputGuard {
    fn track(&mut self, path: PathBuf) -> PathBuf {
        self.files.push(path.clone());
        path
    }

    fn disarm(mut self) {
        self.disarmed = true;
        self.files.clear();
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.disarmed {
            for f in &self.files {
                let _ = fs::remove_file(f);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix files
// ---------------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct MatrixFile {
    version: u32,
    p: usize,
    /// Row-major.
    matrix: Vec<Vec<f64>>,
}

fn write_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let dto = MatrixFile {
        version: 1,
        p: m.nrows(),
        matrix: (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&dto)?)?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read matrix file {}", path.display()))?;
    let dto: MatrixFile = serde_json::from_str(&text)
        .with_context(|| format!("malformed matrix file {}", path.display()))?;
    if dto.version != 1 {
        bail!("unsupported matrix file version {}", dto.version);
    }
    if dto.matrix.len() != dto.p || dto.matrix.iter().any(|r| r.len() != dto.p) {
        bail!("matrix file {} has inconsistent dimensions", path.display());
    }
    Ok(DMatrix::from_fn(dto.p, dto.p, |i, j| dto.matrix[i][j]))
}

fn parse_lambdas(spec: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = spec
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("bad lambda `{t}`")))
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        bail!("empty lambda list");
    }
    Ok(vals)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

fn run(command: Command, guard: &mut OutputGuard) -> Result<()> {
    match command {
        Command::Simulate {
            scenario,
            n,
            seed,
            missing,
            no_missing: _,
            missing_cols,
            missing_rate,
            out,
        } => {
            ensure_dir(&out)?;
            let spec = ScenarioSpec::new(scenario, n, derive_seed(seed, &[1]))?;
            let (omega, sigma) = generate_omega(spec.p, 0.15, 1.0, spec.seed)?;
            let (complete, thresholds, latent) = generate_scenario(&spec, &sigma)?;
            let (ds, mar) = if missing {
                let (ds, info) =
                    apply_mar_missingness(&complete, missing_cols, missing_rate, derive_seed(seed, &[2]))?;
                (ds, Some(info))
            } else {
                (complete, None)
            };

            write_csv(&ds, &guard.track(out.join("data.csv")))?;
            write_schema(ds.schema(), &guard.track(out.join("schema.txt")))?;
            write_matrix(&omega, &guard.track(out.join("truth_omega.json")))?;
            write_matrix(sigma.matrix(), &guard.track(out.join("truth_sigma.json")))?;
            fs::write(
                guard.track(out.join("truth_thresholds.json")),
                serde_json::to_string_pretty(&thresholds_json(&thresholds))?,
            )?;
            let mut latent_csv = String::new();
            let names: Vec<&str> = ds.schema().iter().map(|c| c.name.as_str()).collect();
            writeln!(latent_csv, "{}", names.join(",")).unwrap();
            for i in 0..latent.nrows() {
                for j in 0..latent.ncols() {
                    if j > 0 {
                        latent_csv.push(',');
                    }
                    write!(latent_csv, "{}", latent[(i, j)]).unwrap();
                }
                latent_csv.push('\n');
            }
            fs::write(guard.track(out.join("latent.csv")), latent_csv)?;
            if let Some(info) = mar {
                let json = serde_json::json!({
                    "columns": info.columns,
                    "beta": info.beta,
                    "realized_rate": info.realized_rate,
                });
                fs::write(
                    guard.track(out.join("mar.json")),
                    serde_json::to_string_pretty(&json)?,
                )?;
            }
            println!("wrote scenario {scenario} dataset ({n} rows) to {}", out.display());
            Ok(())
        }

        Command::Fit { data, schema, out, max_iters, tol, gibbs, seed, random_init } => {
            let ds = load_csv(&data, &schema)?;
            let thresholds = estimate_thresholds(&ds)?;
            let cfg = EmConfig {
                max_iters,
                param_tol: tol,
                gibbs: gibbs.config(seed),
                seed,
                random_init,
            };
            let (params, trace) = em_fit(&ds, &thresholds, &cfg)?;
            save_model(&params, &guard.track(out.clone()))?;
            let last = trace.iterations.last().expect("at least one iteration");
            println!(
                "fit {} rows x {} columns in {} iterations (final change {:.3e}); model at {}",
                ds.n_rows(),
                ds.n_cols(),
                trace.iterations.len(),
                last.max_param_change,
                out.display()
            );
            Ok(())
        }

        Command::Path { model, method, lambdas, grid, out } => {
            let params = load_model(&model)?;
            let method: SparseMethod = method.parse()?;
            let grid_vals = match lambdas {
                Some(spec) => parse_lambdas(&spec)?,
                None => default_lambda_grid(params.sigma(), grid),
            };
            ensure_dir(&out)?;
            let path = precision_path(params.sigma(), &grid_vals, method)?;
            let mut index = String::from("index,lambda,omega_file,edges_file,nnz_offdiag\n");
            for (k, omega) in path.omegas.iter().enumerate() {
                let omega_name = format!("omega_{k:03}.json");
                let edges_name = format!("edges_{k:03}.csv");
                write_matrix(omega, &guard.track(out.join(&omega_name)))?;
                let mut edges = String::from("i,j,value\n");
                for (i, j, v) in edge_list(omega) {
                    writeln!(edges, "{i},{j},{v}").unwrap();
                }
                fs::write(guard.track(out.join(&edges_name)), edges)?;
                writeln!(
                    index,
                    "{k},{},{omega_name},{edges_name},{}",
                    path.lambdas[k],
                    path.nnz_offdiag(k)
                )
                .unwrap();
            }
            fs::write(guard.track(out.join("index.csv")), index)?;
            println!(
                "wrote {} {method} path entries to {}",
                path.lambdas.len(),
                out.display()
            );
            Ok(())
        }

        Command::Classify { model, omega, data, target, out, gibbs, seed } => {
            let params = load_model(&model)?;
            let omega = read_matrix(&omega)?;
            // The data file must match the model schema.
            let ds = load_csv_with_schema(&data, params.schema().to_vec())?;
            let target_ix = ds.resolve_column(&target)?;
            let levels = match params.schema()[target_ix].kind {
                VarKind::Categorical { levels } => levels,
                VarKind::Continuous => bail!("target column `{target}` is continuous"),
            };
            let rows = classify_dataset(&ds, target_ix, &params, &omega, &gibbs.config(0), seed)?;
            let mut csv = String::from("row,label");
            for k in 0..levels {
                write!(csv, ",p{k}").unwrap();
            }
            csv.push('\n');
            for (i, (label, probs)) in rows.into_iter().enumerate() {
                write!(csv, "{i},{label}").unwrap();
                for p in probs {
                    write!(csv, ",{p}").unwrap();
                }
                csv.push('\n');
            }
            fs::write(guard.track(out.clone()), csv)?;
            println!("classified {} rows; predictions at {}", ds.n_rows(), out.display());
            Ok(())
        }

        Command::Impute { model, data, draws, seed, gibbs, out } => {
            let params = load_model(&model)?;
            let ds = load_csv_with_schema(&data, params.schema().to_vec())?;
            ensure_dir(&out)?;
            let cfg = gibbs.config(derive_seed(seed, &[4]));
            let completed = impute_dataset(&ds, &params, &cfg, draws)?;
            for (d, dataset) in completed.iter().enumerate() {
                let name = format!("imputed_{:03}.csv", d + 1);
                write_csv(dataset, &guard.track(out.join(name)))?;
            }
            println!("wrote {draws} completed datasets to {}", out.display());
            Ok(())
        }

        Command::Cv {
            data,
            schema,
            target,
            folds,
            method,
            lambdas,
            grid,
            max_iters,
            tol,
            gibbs,
            seed,
            out,
        } => {
            let ds = load_csv(&data, &schema)?;
            let target_ix = ds.resolve_column(&target)?;
            let method: SparseMethod = method.parse()?;
            let lambda_list = lambdas.map(|s| parse_lambdas(&s)).transpose()?;
            let em_cfg = EmConfig {
                max_iters,
                param_tol: tol,
                gibbs: gibbs.config(seed),
                seed,
                random_init: false,
            };
            let table = cross_validate(&ds, target_ix, lambda_list, grid, method, folds, &em_cfg, seed)?;
            let mut csv = String::from("lambda,mean_error,sd_error,selected\n");
            for row in &table.rows {
                writeln!(
                    csv,
                    "{},{},{},{}",
                    row.lambda,
                    row.mean_error,
                    row.sd_error,
                    u8::from(row.lambda == table.best_lambda)
                )
                .unwrap();
            }
            fs::write(guard.track(out.clone()), csv)?;
            println!(
                "cross-validated {} lambdas over {folds} folds; best lambda {}; table at {}",
                table.rows.len(),
                table.best_lambda,
                out.display()
            );
            Ok(())
        }

        Command::EvalOmega { estimate, truth, out } => {
            let est = read_matrix(&estimate)?;
            let tru = read_matrix(&truth)?;
            if est.nrows() != tru.nrows() {
                bail!(
                    "dimension mismatch: estimate is {}, truth is {}",
                    est.nrows(),
                    tru.nrows()
                );
            }
            let diff = est - tru;
            let (frob, spectral) = matrix_norms(&diff);
            fs::write(
                guard.track(out.clone()),
                format!("frobenius,spectral\n{frob},{spectral}\n"),
            )?;
            println!("frobenius {frob} spectral {spectral}; norms at {}", out.display());
            Ok(())
        }
    }
}

