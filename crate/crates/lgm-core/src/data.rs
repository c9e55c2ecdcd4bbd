//! Mixed-type datasets with missingness, and the translation of observed
//! cells into latent-value interval constraints.
//!
//! A categorical cell with level `k` pins its latent Gaussian coordinate to
//! the interval between thresholds `k` and `k+1`; an observed continuous cell
//! pins it exactly; a missing cell leaves it unbounded. Intervals are treated
//! as half-open `(a, b]` when sampling and discretizing, which only matters
//! on measure-zero boundaries but keeps the two directions consistent.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Column kind: continuous, or categorical with a fixed number of levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Categorical { levels: usize },
}

impl VarKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, VarKind::Categorical { .. })
    }

    pub fn levels(&self) -> Option<usize> {
        match self {
            VarKind::Continuous => None,
            VarKind::Categorical { levels } => Some(*levels),
        }
    }
}

/// Declared name and kind of one column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSchema {
    pub name: String,
    pub kind: VarKind,
}

impl VariableSchema {
    pub fn continuous(name: impl Into<String>) -> Self {
        VariableSchema { name: name.into(), kind: VarKind::Continuous }
    }

    pub fn categorical(name: impl Into<String>, levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Schema(format!(
                "categorical column needs at least 2 levels, got {levels}"
            )));
        }
        Ok(VariableSchema { name: name.into(), kind: VarKind::Categorical { levels } })
    }
}

/// One cell of a mixed dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Cont(f64),
    Cat(usize),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

/// Immutable column-typed table with a per-cell missingness mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDataset {
    schema: Vec<VariableSchema>,
    cells: Vec<Cell>, // row-major n x p
    n_rows: usize,
}

impl MixedDataset {
    /// Builds a dataset from row-major cells, validating each against the
    /// schema.
    pub fn from_cells(schema: Vec<VariableSchema>, cells: Vec<Cell>) -> Result<Self> {
        let p = schema.len();
        if p == 0 {
            return Err(Error::Schema("schema has no columns".into()));
        }
        if cells.len() % p != 0 {
            return Err(Error::Schema(format!(
                "cell count {} is not a multiple of column count {p}",
                cells.len()
            )));
        }
        let n_rows = cells.len() / p;
        let ds = MixedDataset { schema, cells, n_rows };
        for i in 0..n_rows {
            for j in 0..p {
                ds.validate_cell(i, j)?;
            }
        }
        Ok(ds)
    }

    fn validate_cell(&self, i: usize, j: usize) -> Result<()> {
        let col = &self.schema[j];
        match (self.cell(i, j), col.kind) {
            (Cell::Missing, _) => Ok(()),
            (Cell::Cont(v), VarKind::Continuous) if v.is_finite() => Ok(()),
            (Cell::Cont(v), VarKind::Continuous) => Err(Error::parse(
                i + 1,
                col.name.clone(),
                format!("non-finite continuous value {v}"),
            )),
            (Cell::Cat(l), VarKind::Categorical { levels }) if l < levels => Ok(()),
            (Cell::Cat(l), VarKind::Categorical { levels }) => Err(Error::parse(
                i + 1,
                col.name.clone(),
                format!("level {l} out of range for {levels}-level column"),
            )),
            (c, _) => Err(Error::parse(
                i + 1,
                col.name.clone(),
                format!("cell {c:?} does not match column kind {:?}", col.kind),
            )),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[VariableSchema] {
        &self.schema
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.schema.len() + col]
    }

    pub fn row(&self, row: usize) -> &[Cell] {
        let p = self.schema.len();
        &self.cells[row * p..(row + 1) * p]
    }

    pub fn has_missing(&self) -> bool {
        self.cells.iter().any(Cell::is_missing)
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_missing()).count()
    }

    /// Copy of the selected rows (used for cross-validation folds).
    pub fn subset(&self, rows: &[usize]) -> MixedDataset {
        let p = self.schema.len();
        let mut cells = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            cells.extend_from_slice(self.row(r));
        }
        MixedDataset { schema: self.schema.clone(), cells, n_rows: rows.len() }
    }

    pub(crate) fn set_cell_unchecked(&mut self, row: usize, col: usize, cell: Cell) {
        let p = self.schema.len();
        self.cells[row * p + col] = cell;
    }

    /// Index of a column by name, or by numeric index when `key` parses as
    /// one and no column carries that exact name.
    pub fn resolve_column(&self, key: &str) -> Result<usize> {
        if let Some(ix) = self.schema.iter().position(|c| c.name == key) {
            return Ok(ix);
        }
        if let Ok(ix) = key.parse::<usize>() {
            if ix < self.schema.len() {
                return Ok(ix);
            }
        }
        Err(Error::Schema(format!("unknown column `{key}`")))
    }
}

// ---------------------------------------------------------------------------
// Thresholds
// ---------------------------------------------------------------------------

/// Per categorical column `j`, the cut vector `C_j` of length `n_j + 1` with
/// -inf / +inf endpoints. Interior cuts are nondecreasing; two equal cuts
/// denote a level of probability zero (e.g. a level never observed).
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    cuts: Vec<Option<Vec<f64>>>,
}

impl Thresholds {
    pub fn new(schema: &[VariableSchema], cuts: Vec<Option<Vec<f64>>>) -> Result<Self> {
        if cuts.len() != schema.len() {
            return Err(Error::Schema(format!(
                "thresholds cover {} columns, schema has {}",
                cuts.len(),
                schema.len()
            )));
        }
        for (j, (col, cut)) in schema.iter().zip(&cuts).enumerate() {
            match (col.kind, cut) {
                (VarKind::Continuous, None) => {}
                (VarKind::Continuous, Some(_)) => {
                    return Err(Error::Schema(format!(
                        "continuous column {j} ({}) must not carry thresholds",
                        col.name
                    )));
                }
                (VarKind::Categorical { levels }, Some(c)) => {
                    if c.len() != levels + 1 {
                        return Err(Error::Schema(format!(
                            "column {j} ({}): expected {} thresholds, got {}",
                            col.name,
                            levels + 1,
                            c.len()
                        )));
                    }
                    if c[0] != f64::NEG_INFINITY || c[levels] != f64::INFINITY {
                        return Err(Error::Schema(format!(
                            "column {j} ({}): threshold endpoints must be -inf/+inf",
                            col.name
                        )));
                    }
                    if c.windows(2).any(|w| !(w[0] <= w[1])) {
                        return Err(Error::Schema(format!(
                            "column {j} ({}): thresholds must be nondecreasing",
                            col.name
                        )));
                    }
                }
                (VarKind::Categorical { .. }, None) => {
                    return Err(Error::Schema(format!(
                        "categorical column {j} ({}) is missing thresholds",
                        col.name
                    )));
                }
            }
        }
        Ok(Thresholds { cuts })
    }

    pub fn n_cols(&self) -> usize {
        self.cuts.len()
    }

    pub fn for_column(&self, j: usize) -> Option<&[f64]> {
        self.cuts[j].as_deref()
    }

    pub fn columns(&self) -> &[Option<Vec<f64>>] {
        &self.cuts
    }

    /// Latent interval `(C_{j,k}, C_{j,k+1}]` of level `k` in column `j`.
    pub fn level_interval(&self, j: usize, k: usize) -> (f64, f64) {
        let c = self.cuts[j].as_ref().expect("categorical column");
        (c[k], c[k + 1])
    }
}

/// Maps a latent value to its level under the `(a, b]` convention.
pub fn discretize(cuts: &[f64], w: f64) -> usize {
    let n = cuts.len() - 1;
    for k in 0..n - 1 {
        if w <= cuts[k + 1] {
            return k;
        }
    }
    n - 1
}

// ---------------------------------------------------------------------------
// Cell constraints
// ---------------------------------------------------------------------------

/// Interval `[lo, hi]` constraining one latent coordinate. Point constraints
/// have `lo == hi`; missing cells are unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellConstraint {
    pub lo: f64,
    pub hi: f64,
}

impl CellConstraint {
    pub fn point(v: f64) -> Self {
        CellConstraint { lo: v, hi: v }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        CellConstraint { lo, hi }
    }

    pub fn unbounded() -> Self {
        CellConstraint { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, w: f64) -> bool {
        self.lo <= w && w <= self.hi
    }
}

/// Latent-value constraints of one observation, one entry per column.
pub fn constraints_for_row(
    row: usize,
    ds: &MixedDataset,
    thr: &Thresholds,
) -> Result<Vec<CellConstraint>> {
    if thr.n_cols() != ds.n_cols() {
        return Err(Error::Schema(format!(
            "thresholds cover {} columns, dataset has {}",
            thr.n_cols(),
            ds.n_cols()
        )));
    }
    let mut out = Vec::with_capacity(ds.n_cols());
    for j in 0..ds.n_cols() {
        out.push(match ds.cell(row, j) {
            Cell::Missing => CellConstraint::unbounded(),
            Cell::Cont(v) => CellConstraint::point(v),
            Cell::Cat(k) => {
                let (lo, hi) = thr.level_interval(j, k);
                CellConstraint::interval(lo, hi)
            }
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV / schema files
// ---------------------------------------------------------------------------

/// Missing-value token, case-sensitive.
pub const NA_TOKEN: &str = "NA";

/// Parses the sidecar schema file: one `name,kind[,levels]` line per column.
pub fn load_schema(path: &Path) -> Result<Vec<VariableSchema>> {
    let text = std::fs::read_to_string(path)?;
    let mut schema = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |msg: String| Error::Schema(format!("{}:{}: {msg}", path.display(), lineno + 1));
        match parts.as_slice() {
            [name, "continuous"] => schema.push(VariableSchema::continuous(*name)),
            [name, "categorical", levels] => {
                let levels: usize = levels
                    .parse()
                    .map_err(|_| bad(format!("invalid level count `{levels}`")))?;
                schema.push(
                    VariableSchema::categorical(*name, levels)
                        .map_err(|e| bad(e.to_string()))?,
                );
            }
            _ => {
                return Err(bad(format!(
                    "expected `name,kind[,levels]`, got `{line}`"
                )))
            }
        }
    }
    if schema.is_empty() {
        return Err(Error::Schema(format!("{}: empty schema", path.display())));
    }
    Ok(schema)
}

/// Writes the schema in the same `name,kind[,levels]` format.
pub fn write_schema(schema: &[VariableSchema], path: &Path) -> Result<()> {
    let mut out = String::new();
    for col in schema {
        match col.kind {
            VarKind::Continuous => writeln!(out, "{},continuous", col.name).unwrap(),
            VarKind::Categorical { levels } => {
                writeln!(out, "{},categorical,{}", col.name, levels).unwrap()
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads a CSV data file against a schema file. The header row must match
/// the schema column names; `NA` parses as missing.
pub fn load_csv(data_path: &Path, schema_path: &Path) -> Result<MixedDataset> {
    let schema = load_schema(schema_path)?;
    load_csv_with_schema(data_path, schema)
}

pub fn load_csv_with_schema(data_path: &Path, schema: Vec<VariableSchema>) -> Result<MixedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(data_path)?;
    {
        let headers = reader.headers()?;
        if headers.len() != schema.len() {
            return Err(Error::Schema(format!(
                "data has {} columns, schema declares {}",
                headers.len(),
                schema.len()
            )));
        }
        for (j, (h, col)) in headers.iter().zip(&schema).enumerate() {
            if h != col.name {
                return Err(Error::Schema(format!(
                    "unknown column `{h}` at position {j}; schema declares `{}`",
                    col.name
                )));
            }
        }
    }
    let mut cells = Vec::new();
    let mut n_rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != schema.len() {
            return Err(Error::parse(
                i + 1,
                format!("{}", record.len()),
                format!("row has {} fields, expected {}", record.len(), schema.len()),
            ));
        }
        for (j, field) in record.iter().enumerate() {
            let col = &schema[j];
            let cell = if field == NA_TOKEN {
                Cell::Missing
            } else {
                match col.kind {
                    VarKind::Continuous => {
                        let v: f64 = field.parse().map_err(|_| {
                            Error::parse(i + 1, col.name.clone(), format!("unparseable token `{field}`"))
                        })?;
                        if !v.is_finite() {
                            return Err(Error::parse(
                                i + 1,
                                col.name.clone(),
                                format!("non-finite value `{field}`"),
                            ));
                        }
                        Cell::Cont(v)
                    }
                    VarKind::Categorical { levels } => {
                        let l: usize = field.parse().map_err(|_| {
                            Error::parse(i + 1, col.name.clone(), format!("unparseable token `{field}`"))
                        })?;
                        if l >= levels {
                            return Err(Error::parse(
                                i + 1,
                                col.name.clone(),
                                format!("level {l} out of range for {levels}-level column"),
                            ));
                        }
                        Cell::Cat(l)
                    }
                }
            };
            cells.push(cell);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::Schema(format!(
            "{}: zero rows of data",
            data_path.display()
        )));
    }
    MixedDataset::from_cells(schema, cells)
}

/// Writes a dataset as CSV with a header row; missing cells become `NA`.
pub fn write_csv(ds: &MixedDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let names: Vec<&str> = ds.schema().iter().map(|c| c.name.as_str()).collect();
    writeln!(out, "{}", names.join(",")).unwrap();
    for i in 0..ds.n_rows() {
        for j in 0..ds.n_cols() {
            if j > 0 {
                out.push(',');
            }
            match ds.cell(i, j) {
                Cell::Cont(v) => write!(out, "{v}").unwrap(),
                Cell::Cat(l) => write!(out, "{l}").unwrap(),
                Cell::Missing => out.push_str(NA_TOKEN),
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
