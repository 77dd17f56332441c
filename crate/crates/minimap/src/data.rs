//! Observation matrices and the sample correlation statistics every other
//! module consumes.

use std::path::Path;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// An n×p matrix of real observations with one name per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
    names: Vec<String>,
}

impl Dataset {
    /// Wraps a matrix and column names, validating shape and finiteness.
    ///
    /// Requires n ≥ 2 rows, p ≥ 2 columns, distinct names, and no NaN or
    /// infinite entries.
    pub fn new(values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::invalid(
                "dataset",
                format!("need at least 2 rows, got {}", values.nrows()),
            ));
        }
        if values.ncols() < 2 {
            return Err(Error::invalid(
                "dataset",
                format!("need at least 2 columns, got {}", values.ncols()),
            ));
        }
        if names.len() != values.ncols() {
            return Err(Error::invalid(
                "dataset",
                format!(
                    "{} names for {} columns",
                    names.len(),
                    values.ncols()
                ),
            ));
        }
        for (idx, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::invalid("dataset", format!("column {idx} has an empty name")));
            }
            if names[..idx].contains(name) {
                return Err(Error::invalid("dataset", format!("duplicate column name {name:?}")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset", "non-finite entry"));
        }
        Ok(Dataset { values, names })
    }

    /// Convenience constructor with names `X1..Xp`.
    pub fn with_default_names(values: DMatrix<f64>) -> Result<Self> {
        let names = default_names(values.ncols());
        Dataset::new(values, names)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Reads a dataset from CSV: header row of column names, then one
    /// observation per row, decimal floats, no missing values.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let names: Vec<String> = reader
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let p = names.len();
        let mut rows: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for record in reader.records() {
            let record = record?;
            if record.len() != p {
                return Err(Error::invalid(
                    "dataset",
                    format!("row {} has {} fields, expected {p}", n + 1, record.len()),
                ));
            }
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::invalid("dataset", format!("cannot parse {field:?} as a float"))
                })?;
                rows.push(v);
            }
            n += 1;
        }
        let values = DMatrix::from_row_slice(n, p, &rows);
        Dataset::new(values, names)
    }

    /// Writes the dataset in the same CSV layout `read_csv` accepts.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(&self.names)?;
        for i in 0..self.n() {
            let row: Vec<f64> = (0..self.p()).map(|j| self.values[(i, j)]).collect();
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Names `X1..Xp`.
pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("X{i}")).collect()
}

/// Sample correlation matrix plus the counts needed by tests and scores.
///
/// Everything downstream (CI tests, BGe scores) works on the correlation
/// scale, i.e. on data standardized column-wise by the sample mean and the
/// (n−1)-denominator standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    corr: DMatrix<f64>,
    n: usize,
}

impl SuffStats {
    /// Wraps a correlation-like matrix directly. Used by tests that score
    /// population quantities; `compute_suffstats` is the normal entry point.
    pub fn from_correlation(corr: DMatrix<f64>, n: usize) -> Result<Self> {
        if corr.nrows() != corr.ncols() {
            return Err(Error::invalid("suffstats", "correlation matrix not square"));
        }
        if corr.nrows() < 2 {
            return Err(Error::invalid("suffstats", "need p >= 2"));
        }
        if n < 2 {
            return Err(Error::invalid("suffstats", "need n >= 2"));
        }
        for i in 0..corr.nrows() {
            for j in 0..corr.ncols() {
                let v = corr[(i, j)];
                if !v.is_finite() || v < -1.0 - 1e-12 || v > 1.0 + 1e-12 {
                    return Err(Error::invalid(
                        "suffstats",
                        format!("entry ({i},{j}) = {v} outside [-1, 1]"),
                    ));
                }
            }
        }
        Ok(SuffStats { corr, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.corr.nrows()
    }

    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }

    /// Adds `eps` to the diagonal. A crude regularizer for near-collinear
    /// data; off by default everywhere, opt-in from the CLI.
    pub fn apply_ridge(&mut self, eps: f64) {
        for i in 0..self.corr.nrows() {
            self.corr[(i, i)] += eps;
        }
    }
}

/// Computes the sample correlation matrix of the centered data.
///
/// Errors with [`Error::ZeroVarianceColumn`] if any column is (numerically)
/// constant.
pub fn compute_suffstats(data: &Dataset) -> Result<SuffStats> {
    let n = data.n();
    let p = data.p();
    let x = data.values();

    let mut means = vec![0.0; p];
    for j in 0..p {
        means[j] = x.column(j).sum() / n as f64;
    }
    let mut sds = vec![0.0; p];
    for j in 0..p {
        let mut ss = 0.0;
        for i in 0..n {
            let d = x[(i, j)] - means[j];
            ss += d * d;
        }
        let sd = (ss / (n - 1) as f64).sqrt();
        // Constant columns leave only rounding noise after centering; treat
        // anything at that scale as zero variance.
        if sd <= 1e-12 * means[j].abs().max(1.0) {
            return Err(Error::ZeroVarianceColumn(data.names()[j].clone()));
        }
        sds[j] = sd;
    }

    let mut corr = DMatrix::identity(p, p);
    for a in 0..p {
        for b in (a + 1)..p {
            let mut s = 0.0;
            for i in 0..n {
                s += (x[(i, a)] - means[a]) * (x[(i, b)] - means[b]);
            }
            let r = (s / (n - 1) as f64 / (sds[a] * sds[b])).clamp(-1.0, 1.0);
            corr[(a, b)] = r;
            corr[(b, a)] = r;
        }
    }
    SuffStats::from_correlation(corr, n)
}
