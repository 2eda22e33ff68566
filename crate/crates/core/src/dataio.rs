//! Dataset ingestion, the train/validation/test protocol and synthetic
//! benchmark problems.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::seed::{derive_seed, rng_from};

pub const MIN_ROWS: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}, column '{column}': cannot parse '{value}' as a number")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column '{column}': non-finite value '{value}'")]
    NonFinite {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column '{column}': '{value}' is not a YYYY-MM-DD date")]
    Date {
        line: u64,
        column: String,
        value: String,
    },
    #[error("no column named '{0}'")]
    UnknownColumn(String),
    #[error("column index {index} out of range ({columns} columns)")]
    ColumnIndex { index: usize, columns: usize },
    #[error("target has zero variance")]
    ZeroVarianceTarget,
    #[error("need at least {MIN_ROWS} rows, got {0}")]
    TooFewRows(usize),
    #[error("rows have inconsistent lengths (row {row} has {got}, expected {expected})")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("{x_rows} feature rows but {y_rows} targets")]
    TargetLength { x_rows: usize, y_rows: usize },
    #[error("unknown synthetic problem '{0}'")]
    UnknownProblem(String),
}

/// Column-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    columns: Vec<Vec<f64>>,
    rows: usize,
}

impl DataMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let rows = columns.first().map_or(0, Vec::len);
        if let Some((i, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != rows) {
            return Err(DataError::Ragged {
                row: i,
                expected: rows,
                got: c.len(),
            });
        }
        Ok(Self { columns, rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let width = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(rows.len()); width];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(DataError::Ragged {
                    row: r,
                    expected: width,
                    got: row.len(),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                columns[c].push(v);
            }
        }
        Ok(Self {
            columns,
            rows: rows.len(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, f: usize) -> &[f64] {
        &self.columns[f]
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).collect())
                .collect(),
            rows: idx.len(),
        }
    }
}

/// Features and targets for one subset of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: DataMatrix,
    pub y: Vec<f64>,
}

impl Samples {
    pub fn new(x: DataMatrix, y: Vec<f64>) -> Result<Self, DataError> {
        if x.rows() != y.len() {
            return Err(DataError::TargetLength {
                x_rows: x.rows(),
                y_rows: y.len(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DataMatrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub provenance: String,
}

impl Dataset {
    /// Builds a dataset, checking finiteness, row count and target variance.
    pub fn new(
        x: DataMatrix,
        y: Vec<f64>,
        feature_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        if x.rows() != y.len() {
            return Err(DataError::TargetLength {
                x_rows: x.rows(),
                y_rows: y.len(),
            });
        }
        if y.len() < MIN_ROWS {
            return Err(DataError::TooFewRows(y.len()));
        }
        let check = |v: f64, line: usize, column: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(DataError::NonFinite {
                    line: line as u64,
                    column: column.to_string(),
                    value: v.to_string(),
                })
            }
        };
        for (f, name) in feature_names.iter().enumerate().take(x.features()) {
            for (r, &v) in x.column(f).iter().enumerate() {
                check(v, r + 1, name)?;
            }
        }
        for (r, &v) in y.iter().enumerate() {
            check(v, r + 1, "target")?;
        }
        if !(variance(&y) > 0.0) {
            return Err(DataError::ZeroVarianceTarget);
        }
        Ok(Self {
            x,
            y,
            feature_names,
            provenance: provenance.into(),
        })
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn features(&self) -> usize {
        self.x.features()
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance (divides by N).
pub(crate) fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Name(n) => f.write_str(n),
            ColumnRef::Index(i) => write!(f, "{i}"),
        }
    }
}

/// How to turn a CSV file into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub target: ColumnRef,
    /// Columns ignored entirely.
    pub drop: Vec<ColumnRef>,
    /// `YYYY-MM-DD` columns converted to day of year (1..=366).
    pub day_of_year: Vec<ColumnRef>,
}

impl CsvOptions {
    pub fn target(target: ColumnRef) -> Self {
        Self {
            target,
            drop: Vec::new(),
            day_of_year: Vec::new(),
        }
    }

    /// Preprocessing for the daily Bike Sharing table: the date becomes a
    /// day-of-year feature, and the row id and the two count columns that sum
    /// to the target are dropped.
    pub fn bike_sharing() -> Self {
        let name = |s: &str| ColumnRef::Name(s.to_string());
        Self {
            target: name("cnt"),
            drop: vec![name("instant"), name("casual"), name("registered")],
            day_of_year: vec![name("dteday")],
        }
    }
}

fn resolve(headers: &[String], col: &ColumnRef) -> Result<usize, DataError> {
    match col {
        ColumnRef::Index(i) if *i < headers.len() => Ok(*i),
        ColumnRef::Index(i) => Err(DataError::ColumnIndex {
            index: *i,
            columns: headers.len(),
        }),
        ColumnRef::Name(n) => headers
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| DataError::UnknownColumn(n.clone())),
    }
}

/// Reads a comma-separated file with a header row.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, opts, &path.display().to_string())
}

pub fn read_csv(
    reader: impl std::io::Read,
    opts: &CsvOptions,
    provenance: &str,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let target = resolve(&headers, &opts.target)?;
    let mut skip = vec![false; headers.len()];
    for d in &opts.drop {
        skip[resolve(&headers, d)?] = true;
    }
    let mut dates = vec![false; headers.len()];
    for d in &opts.day_of_year {
        dates[resolve(&headers, d)?] = true;
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != target && !skip[c])
        .collect();

    let mut columns = vec![Vec::new(); feature_cols.len()];
    let mut y = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |c: usize| -> Result<f64, DataError> {
            let raw = record.get(c).unwrap_or("");
            let column = headers[c].clone();
            let v = if dates[c] {
                NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                    .map(|d| d.ordinal() as f64)
                    .map_err(|_| DataError::Date {
                        line,
                        column: column.clone(),
                        value: raw.to_string(),
                    })?
            } else {
                raw.parse::<f64>().map_err(|_| DataError::Parse {
                    line,
                    column: column.clone(),
                    value: raw.to_string(),
                })?
            };
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    line,
                    column,
                    value: raw.to_string(),
                });
            }
            Ok(v)
        };
        for (k, &c) in feature_cols.iter().enumerate() {
            columns[k].push(cell(c)?);
        }
        y.push(cell(target)?);
    }
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    Dataset::new(DataMatrix::from_columns(columns)?, y, names, provenance)
}

/// Hold-out and cross-validation protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub test_fraction: f64,
    pub folds: usize,
    pub repeats: usize,
    pub master_seed: u64,
}

impl SplitPlan {
    pub fn new(master_seed: u64) -> Self {
        Self {
            test_fraction: 0.25,
            folds: 5,
            repeats: 6,
            master_seed,
        }
    }

    pub fn runs(&self) -> usize {
        self.folds * self.repeats
    }
}

/// Row indices and seed for one run of the protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSplit {
    pub run: usize,
    pub fold: usize,
    pub repeat: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// All runs of `plan` over `rows` rows: one fixed test set, then every fold
/// of the remainder as validation, repeated with distinct run seeds.
///
/// The test set has `floor(test_fraction * rows)` rows; fold sizes differ
/// by at most one.
pub fn make_splits(rows: usize, plan: &SplitPlan) -> Vec<RunSplit> {
    assert!(plan.folds >= 1, "need at least one fold");
    let mut rng = rng_from(derive_seed(plan.master_seed, 0x5917));
    let mut perm: Vec<usize> = (0..rows).collect();
    perm.shuffle(&mut rng);
    let n_test = (plan.test_fraction * rows as f64).floor() as usize;
    let mut test = perm[..n_test].to_vec();
    test.sort_unstable();
    let rest = &perm[n_test..];
    let m = rest.len();
    let fold_of = |k: usize| -> Vec<usize> {
        let mut v = rest[k * m / plan.folds..(k + 1) * m / plan.folds].to_vec();
        v.sort_unstable();
        v
    };
    let mut out = Vec::with_capacity(plan.runs());
    for repeat in 0..plan.repeats {
        for fold in 0..plan.folds {
            let run = repeat * plan.folds + fold;
            let validation = fold_of(fold);
            let mut train: Vec<usize> = (0..plan.folds)
                .filter(|&k| k != fold)
                .flat_map(fold_of)
                .collect();
            train.sort_unstable();
            out.push(RunSplit {
                run,
                fold,
                repeat,
                seed: derive_seed(plan.master_seed, run as u64 + 1),
                train,
                validation,
                test: test.clone(),
            });
        }
    }
    out
}

/// Names accepted by [`synth_problem`].
pub const SYNTHETIC_PROBLEMS: &[&str] = &["sin_plus_sqrt", "friedman1", "quartic"];

/// Generates a labelled synthetic problem.
///
/// * `sin_plus_sqrt`: five features uniform on [-3, 3],
///   `y = sin(x0) + sqrt(|x1|)`; x2..x4 are distractors.
/// * `friedman1`: five features uniform on [0, 1],
///   `y = 10 sin(pi x0 x1) + 20 (x2 - 0.5)^2 + 10 x3 + 5 x4`.
/// * `quartic`: one feature uniform on [-1, 1], `y = x^4 + x^3 + x^2 + x`.
///
/// With `noise > 0`, Gaussian noise with standard deviation
/// `noise * std(y)` is added to the targets.
pub fn synth_problem(name: &str, rows: usize, noise: f64, seed: u64) -> Result<Dataset, DataError> {
    let mut rng = rng_from(derive_seed(seed, 0x5717));
    let (features, lo, hi): (usize, f64, f64) = match name {
        "sin_plus_sqrt" => (5, -3.0, 3.0),
        "friedman1" => (5, 0.0, 1.0),
        "quartic" => (1, -1.0, 1.0),
        _ => return Err(DataError::UnknownProblem(name.to_string())),
    };
    let rows_x: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..features).map(|_| rng.random_range(lo..hi)).collect())
        .collect();
    let mut y: Vec<f64> = rows_x
        .iter()
        .map(|x| match name {
            "sin_plus_sqrt" => x[0].sin() + x[1].abs().sqrt(),
            "friedman1" => {
                10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.5).powi(2)
                    + 10.0 * x[3]
                    + 5.0 * x[4]
            }
            _ => x[0].powi(4) + x[0].powi(3) + x[0].powi(2) + x[0],
        })
        .collect();
    if noise > 0.0 && rows > 0 {
        let sd = noise * variance(&y).sqrt();
        let normal = Normal::new(0.0, sd).expect("finite standard deviation");
        for v in &mut y {
            *v += normal.sample(&mut rng);
        }
    }
    let names = (0..features).map(|f| format!("x{f}")).collect();
    Dataset::new(
        DataMatrix::from_rows(&rows_x)?,
        y,
        names,
        format!("synthetic:{name}:n={rows}:noise={noise}:seed={seed}"),
    )
}
