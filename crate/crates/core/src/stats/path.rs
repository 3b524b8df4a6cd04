use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{standardize, DataMatrix, StatsError};

pub const OUTCOMES: [&str; 4] = ["self_directed", "outward_directed", "surprise", "disclosure"];
pub const PREDICTORS: [&str; 4] = ["log_session", "rapport_prev", "exploration", "empathy"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathModelSpec {
    pub outcomes: Vec<String>,
    pub predictors: Vec<String>,
}

impl Default for PathModelSpec {
    fn default() -> Self {
        PathModelSpec {
            outcomes: OUTCOMES.iter().map(|s| s.to_string()).collect(),
            predictors: PREDICTORS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl PathModelSpec {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.outcomes.is_empty() || self.predictors.is_empty() {
            return Err(StatsError::InvalidSpec("outcomes and predictors must be non-empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in self.outcomes.iter().chain(&self.predictors) {
            if !seen.insert(name) {
                return Err(StatsError::InvalidSpec(format!("{name:?} listed twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub outcome: String,
    pub predictor: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

impl PathEstimate {
    pub fn new(outcome: &str, predictor: &str, estimate: f64, se: f64) -> Self {
        let (z, p) = z_and_p(estimate, se);
        PathEstimate {
            outcome: outcome.into(),
            predictor: predictor.into(),
            estimate,
            se,
            z,
            p,
        }
    }

    /// 95% normal-approximation interval.
    pub fn ci95(&self) -> [f64; 2] {
        let h = 1.959963984540054 * self.se;
        [self.estimate - h, self.estimate + h]
    }
}

fn z_and_p(estimate: f64, se: f64) -> (f64, f64) {
    if se > 0.0 {
        let z = estimate / se;
        (z, erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0))
    } else if estimate == 0.0 {
        (0.0, 1.0)
    } else {
        (f64::INFINITY.copysign(estimate), 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathModelFit {
    pub spec: PathModelSpec,
    pub n: usize,
    pub n_clusters: usize,
    /// Outcome-major, predictors in spec order. Intercepts are not listed.
    pub paths: Vec<PathEstimate>,
    pub r_squared: Vec<f64>,
    /// Residual correlations across outcomes, in spec order.
    pub residual_correlation: Vec<Vec<f64>>,
}

impl PathModelFit {
    /// Wraps externally supplied estimates.
    pub fn from_estimates(spec: PathModelSpec, paths: Vec<PathEstimate>) -> Self {
        let m = spec.outcomes.len();
        let residual_correlation = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        PathModelFit {
            spec,
            n: 0,
            n_clusters: 0,
            paths,
            r_squared: vec![f64::NAN; m],
            residual_correlation,
        }
    }

    pub fn path(&self, outcome: &str, predictor: &str) -> Option<&PathEstimate> {
        self.paths.iter().find(|p| p.outcome == outcome && p.predictor == predictor)
    }
}

/// Least squares per outcome on z-scored variables, with CR1 sandwich
/// standard errors clustered on `clusters`.
pub fn fit_path_model(
    data: &DataMatrix,
    clusters: &[String],
    spec: &PathModelSpec,
) -> Result<PathModelFit, StatsError> {
    spec.validate()?;
    let n = data.n_rows();
    if clusters.len() != n {
        return Err(StatsError::ColumnMismatch(format!("{} cluster ids for {n} rows", clusters.len())));
    }
    let predictors: Vec<&str> = spec.predictors.iter().map(String::as_str).collect();
    let outcomes: Vec<&str> = spec.outcomes.iter().map(String::as_str).collect();
    let k = predictors.len() + 1;
    if n <= k {
        return Err(StatsError::TooFewRows(format!("{n} rows for {k} coefficients")));
    }
    let zx = standardize(&data.select(&predictors)?)?;
    let zy = standardize(&data.select(&outcomes)?)?;

    let mut index = BTreeMap::new();
    let cluster_of: Vec<usize> = clusters
        .iter()
        .map(|c| {
            let next = index.len();
            *index.entry(c.as_str()).or_insert(next)
        })
        .collect();
    let g = index.len();
    if g < 2 {
        return Err(StatsError::SingleCluster(g));
    }

    let x_at = |i: usize, j: usize| if j == 0 { 1.0 } else { zx.columns[j - 1][i] };
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        for a in 0..k {
            let xa = x_at(i, a);
            for b in a..k {
                xtx[(a, b)] += xa * x_at(i, b);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let eig = SymmetricEigen::new(xtx.clone());
    let max = eig.eigenvalues.max();
    if eig.eigenvalues.min() <= 1e-10 * max {
        return Err(StatsError::Singular);
    }
    let bread = xtx.cholesky().ok_or(StatsError::Singular)?.inverse();
    let scale = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64));

    let mut paths = Vec::with_capacity(outcomes.len() * predictors.len());
    let mut r_squared = Vec::with_capacity(outcomes.len());
    let mut residuals = Vec::with_capacity(outcomes.len());
    for (o, outcome) in outcomes.iter().enumerate() {
        let y = &zy.columns[o];
        let mut xty = DVector::<f64>::zeros(k);
        for (i, yi) in y.iter().enumerate() {
            for a in 0..k {
                xty[a] += x_at(i, a) * yi;
            }
        }
        let beta = &bread * xty;
        let mut score = vec![DVector::<f64>::zeros(k); g];
        let mut resid = Vec::with_capacity(n);
        let (mut sse, mut sst) = (0.0, 0.0);
        for (i, yi) in y.iter().enumerate() {
            let fitted: f64 = (0..k).map(|a| x_at(i, a) * beta[a]).sum();
            let e = yi - fitted;
            sse += e * e;
            sst += yi * yi;
            let s = &mut score[cluster_of[i]];
            for a in 0..k {
                s[a] += x_at(i, a) * e;
            }
            resid.push(e);
        }
        let mut meat = DMatrix::<f64>::zeros(k, k);
        for s in &score {
            meat.ger(1.0, s, s, 1.0);
        }
        let vcov = (&bread * meat * &bread) * scale;
        for (j, predictor) in predictors.iter().enumerate() {
            let se = vcov[(j + 1, j + 1)].max(0.0).sqrt();
            paths.push(PathEstimate::new(outcome, predictor, beta[j + 1], se));
        }
        r_squared.push(1.0 - sse / sst);
        residuals.push(resid);
    }

    Ok(PathModelFit {
        spec: spec.clone(),
        n,
        n_clusters: g,
        paths,
        r_squared,
        residual_correlation: residual_correlation(&residuals),
    })
}

fn residual_correlation(residuals: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = residuals.len();
    let norms: Vec<f64> = residuals.iter().map(|r| r.iter().map(|e| e * e).sum::<f64>().sqrt()).collect();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        out[i][i] = 1.0;
        for j in (i + 1)..m {
            let denom = norms[i] * norms[j];
            let r = if denom > 0.0 {
                let dot: f64 = residuals[i].iter().zip(&residuals[j]).map(|(a, b)| a * b).sum();
                (dot / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn small_spec() -> PathModelSpec {
        PathModelSpec {
            outcomes: vec!["y1".into(), "y2".into()],
            predictors: vec!["x1".into(), "x2".into()],
        }
    }

    fn sample(n: usize, clusters: usize, seed: u64) -> (DataMatrix, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut ids = Vec::new();
        for i in 0..n {
            let g = i % clusters;
            let x1: f64 = StandardNormal.sample(&mut rng);
            let x2: f64 = 0.3 * x1 + rng.random::<f64>();
            let e: f64 = StandardNormal.sample(&mut rng);
            let y1 = 0.5 * x1 - 0.2 * x2 + e * (1.0 + x1.abs());
            let n2: f64 = StandardNormal.sample(&mut rng);
            let y2 = 0.1 * x2 + n2 + 0.3 * e;
            rows.push(vec![x1, x2, y1, y2]);
            ids.push(format!("s{g}"));
        }
        (DataMatrix::from_rows(&["x1", "x2", "y1", "y2"], &rows).unwrap(), ids)
    }

    /// Dense-matrix OLS with HC1 errors, written independently of the fitter.
    fn hc1_oracle(data: &DataMatrix, outcome: &str) -> (Vec<f64>, Vec<f64>) {
        let z = |name: &str| {
            let c = data.column(name).unwrap();
            let (m, s) = super::super::mean_sd(c);
            c.iter().map(|v| (v - m) / s).collect::<Vec<_>>()
        };
        let (x1, x2, y) = (z("x1"), z("x2"), z(outcome));
        let n = y.len();
        let x = DMatrix::from_fn(n, 3, |i, j| [1.0, x1[i], x2[i]][j]);
        let yv = DVector::from_vec(y);
        let beta = x.clone().svd(true, true).solve(&yv, 1e-14).unwrap();
        let e = &yv - &x * &beta;
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let d = DMatrix::from_diagonal(&e.map(|v| v * v));
        let v = &xtx_inv * x.transpose() * d * &x * &xtx_inv * (n as f64 / (n as f64 - 3.0));
        (
            vec![beta[1], beta[2]],
            vec![v[(1, 1)].sqrt(), v[(2, 2)].sqrt()],
        )
    }

    #[test]
    fn singleton_clusters_equal_hc1() {
        let (data, _) = sample(300, 1, 1);
        let ids: Vec<String> = (0..300).map(|i| format!("r{i}")).collect();
        let fit = fit_path_model(&data, &ids, &small_spec()).unwrap();
        for y in ["y1", "y2"] {
            let (beta, se) = hc1_oracle(&data, y);
            for (j, x) in ["x1", "x2"].iter().enumerate() {
                let p = fit.path(y, x).unwrap();
                assert_abs_diff_eq!(p.estimate, beta[j], epsilon = 1e-10);
                assert_abs_diff_eq!(p.se, se[j], epsilon = 1e-10);
            }
        }
    }

    fn naive_se(data: &DataMatrix, outcome: &str) -> Vec<f64> {
        let z = |name: &str| {
            let c = data.column(name).unwrap();
            let (m, s) = super::super::mean_sd(c);
            c.iter().map(|v| (v - m) / s).collect::<Vec<_>>()
        };
        let (x1, x2, y) = (z("x1"), z("x2"), z(outcome));
        let n = y.len();
        let x = DMatrix::from_fn(n, 3, |i, j| [1.0, x1[i], x2[i]][j]);
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let beta = &xtx_inv * x.transpose() * DVector::from_vec(y.clone());
        let e = DVector::from_vec(y) - &x * beta;
        let s2 = e.norm_squared() / (n as f64 - 3.0);
        vec![(s2 * xtx_inv[(1, 1)]).sqrt(), (s2 * xtx_inv[(2, 2)]).sqrt()]
    }

    fn doubled(data: &DataMatrix, ids: &[String]) -> (DataMatrix, Vec<String>) {
        let cols = data.columns().iter().map(|c| c.iter().chain(c).copied().collect()).collect();
        (
            DataMatrix::new(data.names().to_vec(), cols).unwrap(),
            ids.iter().chain(ids).cloned().collect(),
        )
    }

    #[test]
    fn duplicating_rows_keeps_beta_and_cluster_se() {
        let (data, ids) = sample(400, 40, 2);
        let fit = fit_path_model(&data, &ids, &small_spec()).unwrap();
        let (d2, i2) = doubled(&data, &ids);
        let fit2 = fit_path_model(&d2, &i2, &small_spec()).unwrap();
        for (a, b) in fit.paths.iter().zip(&fit2.paths) {
            assert_abs_diff_eq!(a.estimate, b.estimate, epsilon = 1e-12);
            assert!((b.se / a.se - 1.0).abs() < 0.01, "{} vs {}", a.se, b.se);
        }
        for (j, _) in ["x1", "x2"].iter().enumerate() {
            let ratio = naive_se(&d2, "y1")[j] / naive_se(&data, "y1")[j];
            assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01);
        }
    }

    #[test]
    fn rescaling_a_predictor_is_invisible() {
        let (data, ids) = sample(200, 20, 3);
        let cols = data
            .columns()
            .iter()
            .enumerate()
            .map(|(j, c)| c.iter().map(|v| if j == 0 { 7.5 * v + 3.0 } else { *v }).collect())
            .collect();
        let scaled = DataMatrix::new(data.names().to_vec(), cols).unwrap();
        let a = fit_path_model(&data, &ids, &small_spec()).unwrap();
        let b = fit_path_model(&scaled, &ids, &small_spec()).unwrap();
        for (p, q) in a.paths.iter().zip(&b.paths) {
            assert_abs_diff_eq!(p.estimate, q.estimate, epsilon = 1e-10);
            assert_abs_diff_eq!(p.se, q.se, epsilon = 1e-10);
        }
    }

    #[test]
    fn fit_invariants() {
        let (data, ids) = sample(500, 50, 4);
        let fit = fit_path_model(&data, &ids, &small_spec()).unwrap();
        assert_eq!((fit.n, fit.n_clusters), (500, 50));
        assert_eq!(fit.paths.len(), 4);
        for p in &fit.paths {
            assert!(p.se > 0.0 && (0.0..=1.0).contains(&p.p));
        }
        let r = &fit.residual_correlation;
        assert_eq!(r[0][1], r[1][0]);
        assert!(r[0][1].abs() <= 1.0);
        assert!(fit.r_squared.iter().all(|v| (0.0..=1.0).contains(v)));
        let x1 = fit.path("y1", "x1").unwrap();
        assert!(x1.estimate > 0.0 && x1.p < 0.001);
    }

    #[test]
    fn errors() {
        let (data, ids) = sample(100, 10, 5);
        let one: Vec<String> = vec!["s".into(); 100];
        assert_eq!(fit_path_model(&data, &one, &small_spec()), Err(StatsError::SingleCluster(1)));
        let cols = data
            .columns()
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 1 { vec![2.0; 100] } else { c.clone() })
            .collect();
        let flat = DataMatrix::new(data.names().to_vec(), cols).unwrap();
        assert_eq!(
            fit_path_model(&flat, &ids, &small_spec()),
            Err(StatsError::ConstantColumn("x2".into()))
        );
        let cols = data
            .columns()
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 1 { data.columns()[0].iter().map(|v| 2.0 * v).collect() } else { c.clone() })
            .collect();
        let collinear = DataMatrix::new(data.names().to_vec(), cols).unwrap();
        assert_eq!(fit_path_model(&collinear, &ids, &small_spec()), Err(StatsError::Singular));
        let mut bad = small_spec();
        bad.predictors.push("y1".into());
        assert!(matches!(fit_path_model(&data, &ids, &bad), Err(StatsError::InvalidSpec(_))));
    }

    #[test]
    fn p_values_from_normal_tail() {
        let p = PathEstimate::new("y", "x", 1.959963984540054, 1.0);
        assert_abs_diff_eq!(p.p, 0.05, epsilon = 1e-10);
        assert_eq!(PathEstimate::new("y", "x", 0.0, 0.0).p, 1.0);
        assert_eq!(PathEstimate::new("y", "x", -0.1, 0.0).p, 0.0);
        let ci = PathEstimate::new("y", "x", 0.5, 0.1).ci95();
        assert_abs_diff_eq!(ci[0], 0.5 - 0.1959963984540054, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            /// Affine changes of a variable and renaming of clusters leave the
            /// standardized fit unchanged up to the sign of a negated variable.
            #[test]
            fn affine_and_relabel_invariance(
                seed in any::<u64>(),
                scale in prop_oneof![-20.0f64..-0.05, 0.05f64..20.0],
                shift in -100.0f64..100.0,
                var in 0usize..4,
            ) {
                let (data, ids) = sample(120, 12, seed);
                let base = fit_path_model(&data, &ids, &small_spec()).unwrap();
                let cols = data
                    .columns()
                    .iter()
                    .enumerate()
                    .map(|(j, c)| if j == var { c.iter().map(|v| scale * v + shift).collect() } else { c.clone() })
                    .collect();
                let moved = DataMatrix::new(data.names().to_vec(), cols).unwrap();
                let renamed: Vec<String> = ids.iter().map(|g| format!("z-{g}")).collect();
                let fit = fit_path_model(&moved, &renamed, &small_spec()).unwrap();
                let name = &data.names()[var];
                for (a, b) in base.paths.iter().zip(&fit.paths) {
                    let flip = if (&a.outcome == name || &a.predictor == name) && scale < 0.0 { -1.0 } else { 1.0 };
                    prop_assert!((a.estimate - flip * b.estimate).abs() < 1e-9);
                    prop_assert!((a.se - b.se).abs() < 1e-9);
                    prop_assert!((a.p - b.p).abs() < 1e-9);
                }
            }
        }
    }
}
