//! Standardization, correlation, PCA and the session-clustered path model.

mod hypothesis;
mod path;
mod pca;
mod simulate;

pub use hypothesis::{hypothesis_report, HypothesisReport, HypothesisVerdict, PathVerdict, Verdict, DEFAULT_ALPHA};
pub use path::{fit_path_model, PathEstimate, PathModelFit, PathModelSpec, OUTCOMES, PREDICTORS};
pub use pca::{component_scores, pca, scree, PcaResult, ScreePoint};
pub use simulate::{simulate_path_data, PathSimConfig, PlantedPath};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("column {0:?} is constant")]
    ConstantColumn(String),
    #[error("column {0:?} has non-finite values")]
    NonFinite(String),
    #[error("need more rows: {0}")]
    TooFewRows(String),
    #[error("column mismatch: {0}")]
    ColumnMismatch(String),
    #[error("requested {requested} components, rank is {rank}")]
    TooManyComponents { requested: usize, rank: usize },
    #[error("design matrix is singular")]
    Singular,
    #[error("need at least 2 clusters, got {0}")]
    SingleCluster(usize),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("missing path {0}")]
    MissingPath(String),
}

/// Named columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl DataMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        if names.len() != columns.len() {
            return Err(StatsError::ColumnMismatch(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, Vec::len);
        if let Some(i) = columns.iter().position(|c| c.len() != n) {
            return Err(StatsError::ColumnMismatch(format!("column {:?} has a different length", names[i])));
        }
        Ok(DataMatrix { names, columns })
    }

    /// Builds from row-major data.
    pub fn from_rows(names: &[&str], rows: &[Vec<f64>]) -> Result<Self, StatsError> {
        let p = names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(StatsError::ColumnMismatch(format!("row of length {} for {p} names", r.len())));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        DataMatrix::new(names.iter().map(|s| s.to_string()).collect(), columns)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Keeps the named columns in the given order.
    pub fn select(&self, names: &[&str]) -> Result<DataMatrix, StatsError> {
        let columns = names
            .iter()
            .map(|n| {
                self.column(n)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| StatsError::ColumnMismatch(format!("no column {n:?}")))
            })
            .collect::<Result<_, _>>()?;
        DataMatrix::new(names.iter().map(|s| s.to_string()).collect(), columns)
    }

    /// Keeps rows where `keep` is true.
    pub fn filter_rows(&self, keep: &[bool]) -> DataMatrix {
        let columns = self
            .columns
            .iter()
            .map(|c| c.iter().zip(keep).filter(|(_, k)| **k).map(|(v, _)| *v).collect())
            .collect();
        DataMatrix {
            names: self.names.clone(),
            columns,
        }
    }
}

/// Z-scored columns with the transform retained.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedMatrix {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    /// Sample standard deviations (n - 1 denominator).
    pub sds: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
}

impl StandardizedMatrix {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Maps standardized values back to the original scale.
    pub fn inverse(&self) -> Vec<Vec<f64>> {
        self.columns
            .iter()
            .enumerate()
            .map(|(j, c)| c.iter().map(|z| z * self.sds[j] + self.means[j]).collect())
            .collect()
    }
}

pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn standardize(m: &DataMatrix) -> Result<StandardizedMatrix, StatsError> {
    if m.n_rows() < 2 {
        return Err(StatsError::TooFewRows(format!("{} rows", m.n_rows())));
    }
    let mut out = StandardizedMatrix {
        names: m.names.clone(),
        means: Vec::new(),
        sds: Vec::new(),
        columns: Vec::new(),
    };
    for (name, col) in m.names.iter().zip(&m.columns) {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(name.clone()));
        }
        let first = col[0];
        if col.iter().all(|v| *v == first) {
            return Err(StatsError::ConstantColumn(name.clone()));
        }
        let (mean, sd) = mean_sd(col);
        out.means.push(mean);
        out.sds.push(sd);
        out.columns.push(col.iter().map(|v| (v - mean) / sd).collect());
    }
    Ok(out)
}

/// Pairwise Pearson correlations with an exact unit diagonal.
pub fn correlation_matrix(m: &DataMatrix) -> Result<DMatrix<f64>, StatsError> {
    if m.n_rows() < 3 {
        return Err(StatsError::TooFewRows(format!("{} rows, need 3", m.n_rows())));
    }
    let z = standardize(m)?;
    Ok(correlation_of_standardized(&z))
}

pub(crate) fn correlation_of_standardized(z: &StandardizedMatrix) -> DMatrix<f64> {
    let p = z.columns.len();
    let n = z.n_rows() as f64;
    let mut r = DMatrix::identity(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let v: f64 = z.columns[i].iter().zip(&z.columns[j]).map(|(a, b)| a * b).sum::<f64>() / (n - 1.0);
            let v = v.clamp(-1.0, 1.0);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}
