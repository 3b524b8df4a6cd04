use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::ReliabilityError;

/// Complete subjects × raters matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    n: usize,
    k: usize,
    cells: Vec<f64>,
}

impl RatingMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ReliabilityError> {
        let opt: Vec<Vec<Option<f64>>> = rows.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
        Self::from_optional_rows(&opt)
    }

    /// Missing cells are rejected; ICC(2,k) needs a complete design.
    pub fn from_optional_rows(rows: &[Vec<Option<f64>>]) -> Result<Self, ReliabilityError> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if n < 2 || k < 2 {
            return Err(ReliabilityError::TooSmall { n, k });
        }
        let mut cells = Vec::with_capacity(n * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(ReliabilityError::Ragged { row: i, len: row.len(), expected: k });
            }
            for (j, v) in row.iter().enumerate() {
                match v {
                    Some(x) if x.is_finite() => cells.push(*x),
                    Some(_) => return Err(ReliabilityError::NonFinite { row: i, col: j }),
                    None => return Err(ReliabilityError::IncompleteMatrix { row: i, col: j }),
                }
            }
        }
        Ok(RatingMatrix { n, k, cells })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.k + j]
    }
}

/// Two-way ANOVA mean squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSquares {
    pub rows: f64,
    pub cols: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccResult {
    pub icc: f64,
    /// 95% interval; `None` when the F approximation is undefined.
    pub ci95: Option<[f64; 2]>,
    pub n: usize,
    pub k: usize,
    pub ms: MeanSquares,
}

pub fn mean_squares(m: &RatingMatrix) -> MeanSquares {
    let (n, k) = (m.n, m.k);
    let nf = n as f64;
    let kf = k as f64;
    let grand = m.cells.iter().sum::<f64>() / (nf * kf);
    let mut row_means = vec![0.0; n];
    let mut col_means = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            let v = m.get(i, j);
            row_means[i] += v / kf;
            col_means[j] += v / nf;
        }
    }
    let ss_rows = kf * row_means.iter().map(|r| (r - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|c| (c - grand).powi(2)).sum::<f64>();
    let mut ss_err = 0.0;
    for i in 0..n {
        for j in 0..k {
            ss_err += (m.get(i, j) - row_means[i] - col_means[j] + grand).powi(2);
        }
    }
    MeanSquares {
        rows: ss_rows / (nf - 1.0),
        cols: ss_cols / (kf - 1.0),
        error: ss_err / ((nf - 1.0) * (kf - 1.0)),
    }
}

/// ICC(2,k): two-way random effects, absolute agreement, mean of k raters.
///
/// The interval is the F-based approximation for ICC(2,1) (Satterthwaite
/// degrees of freedom) stepped up to k raters with Spearman-Brown.
pub fn icc_2k(m: &RatingMatrix) -> Result<IccResult, ReliabilityError> {
    let mean = m.cells.iter().sum::<f64>() / m.cells.len() as f64;
    let ss_total: f64 = m.cells.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_total <= 1e-12 * (1.0 + mean * mean) * m.cells.len() as f64 {
        return Err(ReliabilityError::Undefined("zero total variance".into()));
    }
    let ms = mean_squares(m);
    let nf = m.n as f64;
    let agree = (0..m.n).all(|i| (1..m.k).all(|j| m.get(i, j) == m.get(i, 0)));
    if agree {
        // Rater and residual sums of squares vanish; avoid rounding residue.
        let ms = MeanSquares { cols: 0.0, error: 0.0, ..ms };
        return Ok(IccResult { icc: 1.0, ci95: Some([1.0, 1.0]), n: m.n, k: m.k, ms });
    }
    let denom = ms.rows + (ms.cols - ms.error) / nf;
    if denom <= 0.0 {
        return Err(ReliabilityError::Undefined("non-positive ICC denominator".into()));
    }
    let icc = (ms.rows - ms.error) / denom;
    let ci95 = icc_2k_ci(ms, m.n, m.k, 0.05);
    Ok(IccResult {
        icc,
        ci95,
        n: m.n,
        k: m.k,
        ms,
    })
}

fn icc_2k_ci(ms: MeanSquares, n: usize, k: usize, alpha: f64) -> Option<[f64; 2]> {
    let (nf, kf) = (n as f64, k as f64);
    if ms.error <= 0.0 {
        // No residual noise: the estimate is exact.
        let icc = (ms.rows - ms.error) / (ms.rows + (ms.cols - ms.error) / nf);
        return Some([icc, icc]);
    }
    let icc1 = (ms.rows - ms.error) / (ms.rows + (kf - 1.0) * ms.error + kf * (ms.cols - ms.error) / nf);
    let fj = ms.cols / ms.error;
    let a = kf * icc1 * fj + nf * (1.0 + (kf - 1.0) * icc1) - kf * icc1;
    let vn = (kf - 1.0) * (nf - 1.0) * a * a;
    let b = nf * (1.0 + (kf - 1.0) * icc1) - kf * icc1;
    let vd = (nf - 1.0) * kf * kf * icc1 * icc1 * fj * fj + b * b;
    let v = vn / vd;
    if !(v.is_finite() && v > 0.0) {
        return None;
    }
    let q = 1.0 - alpha / 2.0;
    let f_upper = FisherSnedecor::new(nf - 1.0, v).ok()?.inverse_cdf(q);
    let f_lower = FisherSnedecor::new(v, nf - 1.0).ok()?.inverse_cdf(q);
    let denom_core = kf * ms.cols + (kf * nf - kf - nf) * ms.error;
    let lo = nf * (ms.rows - f_upper * ms.error) / (f_upper * denom_core + nf * ms.rows);
    let hi = nf * (f_lower * ms.rows - ms.error) / (denom_core + nf * f_lower * ms.rows);
    // Spearman-Brown diverges at -1/(k-1); below it the k-rater bound is
    // unbounded and no finite interval is reported.
    let floor = -1.0 / (kf - 1.0);
    if lo <= floor || hi <= floor {
        return None;
    }
    let step_up = |r: f64| r * kf / (1.0 + r * (kf - 1.0));
    let (lo, hi) = (step_up(lo), step_up(hi));
    (lo.is_finite() && hi.is_finite()).then_some([lo, hi])
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, ReliabilityError> {
    if x.len() != y.len() {
        return Err(ReliabilityError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(ReliabilityError::TooFew(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ReliabilityError::Undefined("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// F1 of the positive label; 0 when precision + recall is 0.
pub fn f1_binary<T: PartialEq>(gold: &[T], pred: &[T], positive: &T) -> Result<f64, ReliabilityError> {
    if gold.len() != pred.len() {
        return Err(ReliabilityError::LengthMismatch(gold.len(), pred.len()));
    }
    if gold.is_empty() {
        return Err(ReliabilityError::TooFew(0));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        match (g == positive, p == positive) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}
