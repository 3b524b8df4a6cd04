//! Agreement statistics and the model-versus-human validation report.

mod metrics;
mod report;
mod sample;

pub use metrics::{f1_binary, icc_2k, mean_squares, pearson, IccResult, MeanSquares, RatingMatrix};
pub use report::{
    read_annotations, synth_annotations, validate, write_annotations, AnnotationRecord,
    ReliabilityReport, ReportRow,
};
pub use sample::{stratified_sample, SampledTarget};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReliabilityError {
    #[error("matrix needs n >= 2 subjects and k >= 2 raters, got n={n}, k={k}")]
    TooSmall { n: usize, k: usize },
    #[error("row {row} has {len} cells, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("missing rating at row {row}, column {col}")]
    IncompleteMatrix { row: usize, col: usize },
    #[error("non-finite rating at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("too few observations: {0}")]
    TooFew(usize),
    #[error("stratum {stratum:?} has {available} candidates, {requested} requested")]
    Underpopulated {
        stratum: String,
        available: usize,
        requested: usize,
    },
    #[error("annotations line {line}: {message}")]
    Annotation { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
