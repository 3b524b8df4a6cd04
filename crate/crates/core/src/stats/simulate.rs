use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataMatrix, StatsError, OUTCOMES, PREDICTORS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPath {
    pub outcome: String,
    pub predictor: String,
    pub beta: f64,
}

impl PlantedPath {
    pub fn new(outcome: &str, predictor: &str, beta: f64) -> Self {
        PlantedPath {
            outcome: outcome.into(),
            predictor: predictor.into(),
            beta,
        }
    }
}

/// Clustered data for the default path model. `log_session` and
/// `rapport_prev` are constant within a cluster; `exploration` and `empathy`
/// vary by row with a cluster component. Every variable has unit population
/// variance, so planted betas are standardized coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSimConfig {
    pub seed: u64,
    pub n_clusters: usize,
    pub rows_per_cluster: usize,
    pub paths: Vec<PlantedPath>,
    /// Share of row-level predictor variance that sits at the cluster level.
    pub predictor_cluster_share: f64,
    /// Share of outcome error variance that sits at the cluster level.
    pub outcome_cluster_share: f64,
    /// Share of outcome error variance common to all outcomes in a row.
    pub outcome_shared_share: f64,
    pub exploration_empathy_correlation: f64,
}

impl Default for PathSimConfig {
    fn default() -> Self {
        PathSimConfig {
            seed: 0,
            n_clusters: 500,
            rows_per_cluster: 100,
            paths: Vec::new(),
            predictor_cluster_share: 0.2,
            outcome_cluster_share: 0.05,
            outcome_shared_share: 0.2,
            exploration_empathy_correlation: 0.3,
        }
    }
}

impl PathSimConfig {
    fn beta(&self, outcome: &str, predictor: &str) -> f64 {
        self.paths
            .iter()
            .filter(|p| p.outcome == outcome && p.predictor == predictor)
            .map(|p| p.beta)
            .sum()
    }

    fn validate(&self) -> Result<(), StatsError> {
        for p in &self.paths {
            if !OUTCOMES.contains(&p.outcome.as_str()) || !PREDICTORS.contains(&p.predictor.as_str()) {
                return Err(StatsError::InvalidSpec(format!("unknown path {} -> {}", p.predictor, p.outcome)));
            }
        }
        let shares = [self.predictor_cluster_share, self.outcome_cluster_share, self.outcome_shared_share];
        if shares.iter().any(|s| !(0.0..1.0).contains(s)) || self.outcome_cluster_share + self.outcome_shared_share >= 1.0 {
            return Err(StatsError::InvalidSpec("variance shares must lie in [0, 1)".into()));
        }
        if self.exploration_empathy_correlation.abs() >= 1.0 {
            return Err(StatsError::InvalidSpec("predictor correlation must lie in (-1, 1)".into()));
        }
        if self.n_clusters < 2 || self.rows_per_cluster == 0 {
            return Err(StatsError::InvalidSpec("need >= 2 clusters with >= 1 row".into()));
        }
        Ok(())
    }
}

pub fn simulate_path_data(cfg: &PathSimConfig) -> Result<(DataMatrix, Vec<String>), StatsError> {
    cfg.validate()?;
    let rho = cfg.exploration_empathy_correlation;
    let betas: Vec<[f64; 4]> = OUTCOMES
        .iter()
        .map(|o| [0, 1, 2, 3].map(|j| cfg.beta(o, PREDICTORS[j])))
        .collect();
    let mut error_sd = Vec::with_capacity(OUTCOMES.len());
    for (o, b) in OUTCOMES.iter().zip(&betas) {
        let explained = b.iter().map(|v| v * v).sum::<f64>() + 2.0 * rho * b[2] * b[3];
        if explained >= 1.0 {
            return Err(StatsError::InvalidSpec(format!("planted paths explain all variance of {o}")));
        }
        error_sd.push((1.0 - explained).sqrt());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let n = cfg.n_clusters * cfg.rows_per_cluster;
    let mut columns = vec![Vec::with_capacity(n); PREDICTORS.len() + OUTCOMES.len()];
    let mut clusters = Vec::with_capacity(n);
    let (pc, oc, os) = (cfg.predictor_cluster_share, cfg.outcome_cluster_share, cfg.outcome_shared_share);
    let orth = (1.0 - rho * rho).sqrt();
    for g in 0..cfg.n_clusters {
        let id = format!("c{g:04}");
        let session = [normal(), normal()];
        let u1 = normal();
        let u2 = rho * u1 + orth * normal();
        let cluster_err: Vec<f64> = (0..OUTCOMES.len()).map(|_| normal()).collect();
        for _ in 0..cfg.rows_per_cluster {
            let e1 = normal();
            let e2 = rho * e1 + orth * normal();
            let x = [
                session[0],
                session[1],
                pc.sqrt() * u1 + (1.0 - pc).sqrt() * e1,
                pc.sqrt() * u2 + (1.0 - pc).sqrt() * e2,
            ];
            let shared = normal();
            for (j, v) in x.iter().enumerate() {
                columns[j].push(*v);
            }
            for (o, b) in betas.iter().enumerate() {
                let err = oc.sqrt() * cluster_err[o] + os.sqrt() * shared + (1.0 - oc - os).sqrt() * normal();
                let y: f64 = b.iter().zip(&x).map(|(bj, xj)| bj * xj).sum::<f64>() + error_sd[o] * err;
                columns[PREDICTORS.len() + o].push(y);
            }
            clusters.push(id.clone());
        }
    }
    let names = PREDICTORS.iter().chain(OUTCOMES.iter()).map(|s| s.to_string()).collect();
    Ok((DataMatrix::new(names, columns)?, clusters))
}
