use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use super::{correlation_of_standardized, standardize, DataMatrix, StatsError};

/// Unrotated principal components of the correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub variables: Vec<String>,
    /// Fitting-sample means and standard deviations, used for projection.
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// All eigenvalues, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Retained unit eigenvectors, one per component, in variable order.
    pub loadings: Vec<Vec<f64>>,
    /// Eigenvalue / number of variables, per retained component.
    pub variance_explained: Vec<f64>,
    pub cumulative_variance: Vec<f64>,
}

impl PcaResult {
    pub fn n_components(&self) -> usize {
        self.loadings.len()
    }

    pub fn loading(&self, component: usize, variable: &str) -> Option<f64> {
        let j = self.variables.iter().position(|v| v == variable)?;
        self.loadings.get(component).map(|l| l[j])
    }
}

pub fn pca(m: &DataMatrix, n_components: usize) -> Result<PcaResult, StatsError> {
    let p = m.n_cols();
    if m.n_rows() <= p {
        return Err(StatsError::TooFewRows(format!("{} rows for {p} variables", m.n_rows())));
    }
    let z = standardize(m)?;
    let corr = correlation_of_standardized(&z);
    if corr.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("correlation matrix".into()));
    }
    let eig = SymmetricEigen::new(corr);
    let mut order: Vec<usize> = (0..p).collect();
    // Ties broken by index for determinism.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let rank = eigenvalues.iter().filter(|&&l| l > 1e-10 * p as f64).count();
    if n_components == 0 || n_components > rank {
        return Err(StatsError::TooManyComponents {
            requested: n_components,
            rank,
        });
    }
    let loadings: Vec<Vec<f64>> = order[..n_components]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let anchor = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(j, _)| j)
                .unwrap_or(0);
            if v[anchor] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let total = p as f64;
    let variance_explained: Vec<f64> = eigenvalues[..n_components].iter().map(|l| l / total).collect();
    let cumulative_variance = variance_explained
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    Ok(PcaResult {
        variables: z.names,
        means: z.means,
        sds: z.sds,
        eigenvalues,
        loadings,
        variance_explained,
        cumulative_variance,
    })
}

/// Projects rows, standardized with the fitting-sample transform, onto the
/// retained loadings. Returns one score column per component.
pub fn component_scores(result: &PcaResult, m: &DataMatrix) -> Result<Vec<Vec<f64>>, StatsError> {
    if m.names() != result.variables.as_slice() {
        return Err(StatsError::ColumnMismatch(format!(
            "expected columns {:?}, got {:?}",
            result.variables,
            m.names()
        )));
    }
    let n = m.n_rows();
    let mut scores = vec![vec![0.0; n]; result.n_components()];
    for (j, col) in m.columns().iter().enumerate() {
        let (mu, sd) = (result.means[j], result.sds[j]);
        for (i, v) in col.iter().enumerate() {
            let z = (v - mu) / sd;
            for (c, load) in result.loadings.iter().enumerate() {
                scores[c][i] += z * load[j];
            }
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreePoint {
    pub component: usize,
    pub eigenvalue: f64,
    pub variance_explained: f64,
    pub cumulative: f64,
}

/// Every eigenvalue with its share of the total variance.
pub fn scree(result: &PcaResult) -> Vec<ScreePoint> {
    let p = result.eigenvalues.len() as f64;
    let mut cum = 0.0;
    result
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            cum += l / p;
            ScreePoint {
                component: i + 1,
                eigenvalue: l,
                variance_explained: l / p,
                cumulative: cum,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reliability::pearson;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, p: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let names: Vec<String> = (0..p).map(|i| format!("v{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        DataMatrix::from_rows(&refs, &rows).unwrap()
    }

    #[test]
    fn independent_columns_have_unit_eigenvalues() {
        let r = pca(&noise(20_000, 4, 1), 4).unwrap();
        for (l, v) in r.eigenvalues.iter().zip(&r.variance_explained) {
            assert_abs_diff_eq!(*l, 1.0, epsilon = 0.05);
            assert_abs_diff_eq!(*v, 0.25, epsilon = 0.0125);
        }
    }

    #[test]
    fn eigen_equation_and_trace() {
        let m = noise(300, 5, 2);
        let r = pca(&m, 3).unwrap();
        let corr = super::super::correlation_matrix(&m).unwrap();
        for (c, v) in r.loadings.iter().enumerate() {
            let v = nalgebra::DVector::from_vec(v.clone());
            let lhs = &corr * &v;
            for j in 0..5 {
                assert_abs_diff_eq!(lhs[j], r.eigenvalues[c] * v[j], epsilon = 1e-8);
            }
            assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(r.eigenvalues.iter().sum::<f64>(), 5.0, epsilon = 1e-8);
        assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(*r.cumulative_variance.last().unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn sign_convention_largest_loading_positive() {
        let r = pca(&noise(200, 6, 3), 6).unwrap();
        for l in &r.loadings {
            let max = l.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            assert!(max > 0.0);
        }
    }

    #[test]
    fn scores_centered_and_uncorrelated() {
        let m = noise(500, 4, 4);
        let r = pca(&m, 3).unwrap();
        let s = component_scores(&r, &m).unwrap();
        for a in 0..3 {
            assert_abs_diff_eq!(s[a].iter().sum::<f64>() / 500.0, 0.0, epsilon = 1e-10);
            for b in (a + 1)..3 {
                assert!(pearson(&s[a], &s[b]).unwrap().abs() < 1e-8);
            }
        }
        // a row at the variable means scores zero on every component
        let means = DataMatrix::from_rows(&["v0", "v1", "v2", "v3"], &[r.means.clone()]).unwrap();
        for c in component_scores(&r, &means).unwrap() {
            assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn projecting_a_correlation_image_scales_by_eigenvalue() {
        // z = R v_c has score lambda_c on component c and 0 elsewhere.
        let m = noise(400, 4, 5);
        let r = pca(&m, 4).unwrap();
        let corr = super::super::correlation_matrix(&m).unwrap();
        for c in 0..4 {
            let z = &corr * nalgebra::DVector::from_vec(r.loadings[c].clone());
            let row: Vec<f64> = (0..4).map(|j| z[j] * r.sds[j] + r.means[j]).collect();
            let dm = DataMatrix::from_rows(&["v0", "v1", "v2", "v3"], &[row]).unwrap();
            let s = component_scores(&r, &dm).unwrap();
            for (k, col) in s.iter().enumerate() {
                let want = if k == c { r.eigenvalues[c] } else { 0.0 };
                assert_abs_diff_eq!(col[0], want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn projecting_a_loading_vector_gives_unit_score() {
        let m = noise(300, 3, 7);
        let r = pca(&m, 3).unwrap();
        for c in 0..3 {
            let row: Vec<f64> = (0..3).map(|j| r.loadings[c][j] * r.sds[j] + r.means[j]).collect();
            let dm = DataMatrix::from_rows(&["v0", "v1", "v2"], &[row]).unwrap();
            let s = component_scores(&r, &dm).unwrap();
            for (k, col) in s.iter().enumerate() {
                assert_abs_diff_eq!(col[0], if k == c { 1.0 } else { 0.0 }, epsilon = 1e-9);
            }
        }
    }

    fn latent_rows(n: usize, pattern: &[Vec<f64>], noise_sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = pattern[0].len();
        (0..n)
            .map(|_| {
                let f: Vec<f64> = pattern.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
                (0..p)
                    .map(|j| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        pattern.iter().zip(&f).map(|(l, fv)| l[j] * fv).sum::<f64>() + noise_sd * e
                    })
                    .collect()
            })
            .collect()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn planted_two_factors_recovered() {
        let planted = vec![
            vec![0.8, 0.8, 0.8, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.8, 0.8, 0.8],
        ];
        let rows = latent_rows(5000, &planted, 0.2, 8);
        let m = DataMatrix::from_rows(&["a", "b", "c", "d", "e", "f"], &rows).unwrap();
        let r = pca(&m, 2).unwrap();
        // the two leading eigenvalues are equal in population, so compare the spans
        for p in &planted {
            let best = r.loadings.iter().map(|l| cosine(l, p).abs()).fold(0.0, f64::max);
            let proj: f64 = r.loadings.iter().map(|l| cosine(l, p).powi(2)).sum::<f64>().sqrt();
            assert!(proj >= 0.95, "span recovery {proj}");
            assert!(best >= 0.5);
        }
        // with unequal factor strength each component aligns individually
        let unequal = vec![
            vec![0.9, 0.9, 0.9, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.6, 0.6, 0.6],
        ];
        let rows = latent_rows(5000, &unequal, 0.2, 9);
        let m = DataMatrix::from_rows(&["a", "b", "c", "d", "e", "f"], &rows).unwrap();
        let r = pca(&m, 2).unwrap();
        for (l, p) in r.loadings.iter().zip(&unequal) {
            assert!(cosine(l, p) >= 0.95, "{l:?}");
        }
    }

    #[test]
    fn emotion_like_structure_isolates_surprise() {
        // anger contempt disgust enjoyment fear sadness surprise anxiety depression
        let pattern = vec![
            vec![0.2, 0.2, 0.2, -0.3, 0.8, 0.8, 0.0, 0.8, 0.8],
            vec![0.7, 0.7, 0.7, -0.2, 0.1, 0.1, 0.0, 0.1, 0.1],
            vec![0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.6, 0.0, 0.0],
        ];
        let rows = latent_rows(4000, &pattern, 0.4, 10);
        let names = crate::constructs::EMOTION_DIMS;
        let m = DataMatrix::from_rows(names, &rows).unwrap();
        let r = pca(&m, 3).unwrap();
        let surprise = names.iter().position(|n| *n == "surprise").unwrap();
        let top = r.loadings[2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        assert_eq!(top.0, surprise);
        assert!(*top.1 > 0.8);
    }

    #[test]
    fn errors() {
        assert!(matches!(pca(&noise(3, 4, 6), 2), Err(StatsError::TooFewRows(_))));
        assert!(matches!(pca(&noise(50, 3, 6), 4), Err(StatsError::TooManyComponents { .. })));
        let r = pca(&noise(50, 3, 6), 2).unwrap();
        assert!(component_scores(&r, &noise(5, 2, 1)).is_err());
        let p = scree(&r);
        assert_eq!(p.len(), 3);
        assert_abs_diff_eq!(p[2].cumulative, 1.0, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn spectral_invariants(seed in any::<u64>(), p in 2usize..7, extra in 1usize..60, mix in 0.0f64..2.0) {
                let n = p + extra;
                let base = noise(n, p, seed);
                // Mix in a shared factor so components are not all alike.
                let shared = base.columns()[0].clone();
                let cols = base
                    .columns()
                    .iter()
                    .map(|c| c.iter().zip(&shared).map(|(v, s)| v + mix * s).collect())
                    .collect();
                let m = DataMatrix::new(base.names().to_vec(), cols).unwrap();
                let k = 1 + (seed as usize) % p;
                let r = match pca(&m, k) {
                    Ok(r) => r,
                    Err(StatsError::TooManyComponents { .. }) => return Ok(()),
                    Err(e) => panic!("{e:?}"),
                };
                let total: f64 = r.eigenvalues.iter().sum();
                prop_assert!((total - p as f64).abs() < 1e-8);
                prop_assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
                for v in &r.loadings {
                    let norm: f64 = v.iter().map(|x| x * x).sum();
                    prop_assert!((norm - 1.0).abs() < 1e-10);
                    // Ties go to the lowest variable index.
                    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    let top = v.iter().copied().find(|x| x.abs() == max).unwrap();
                    prop_assert!(top > 0.0);
                }
                prop_assert!((r.cumulative_variance[k - 1] - r.variance_explained.iter().sum::<f64>()).abs() < 1e-12);
            }
        }
    }
}
