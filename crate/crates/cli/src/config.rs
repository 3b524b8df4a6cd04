use std::path::{Path, PathBuf};

use alliance_core::backend::{HttpConfig, RetryPolicy, DEFAULT_COMPLETIONS, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TEMPERATURE};
use alliance_core::constructs::ConstructId;
use alliance_core::pipeline::{ReflectionAggregation, ScoreConfig};
use serde::{Deserialize, Serialize};

/// Environment variable holding the provider API key. Never read from or
/// written to config files or manifests.
pub const API_KEY_ENV: &str = "ALLIANCE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Mock,
    Http {
        #[serde(default = "default_base_url")]
        base_url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        max_tokens: Option<u32>,
        #[serde(default)]
        tokens_per_minute: Option<u64>,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

fn default_base_url() -> String {
    HttpConfig::default().base_url
}

fn default_timeout() -> u64 {
    HttpConfig::default().timeout_secs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub backend: BackendConfig,
    pub model_name: String,
    pub temperature: f64,
    pub completions: u32,
    pub parallelism: usize,
    pub constructs: Vec<ConstructId>,
    pub reflection_aggregation: ReflectionAggregation,
    pub summary: String,
    pub cache: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            output_dir: None,
            backend: BackendConfig::Mock,
            model_name: "gpt-4o-mini".into(),
            temperature: DEFAULT_TEMPERATURE,
            completions: DEFAULT_COMPLETIONS,
            parallelism: DEFAULT_MAX_IN_FLIGHT,
            constructs: ConstructId::ALL.to_vec(),
            reflection_aggregation: ReflectionAggregation::Fraction,
            summary: String::new(),
            cache: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.completions == 0 {
            anyhow::bail!("completions must be >= 1");
        }
        if self.parallelism == 0 {
            anyhow::bail!("parallelism must be >= 1");
        }
        if self.constructs.is_empty() {
            anyhow::bail!("at least one construct is required");
        }
        match &self.corpus {
            None => anyhow::bail!("no corpus given (config `corpus` or --corpus)"),
            Some(p) if !p.is_file() => anyhow::bail!("corpus {} not found", p.display()),
            _ => {}
        }
        if self.output_dir.is_none() {
            anyhow::bail!("no output directory given (config `output_dir` or --out)");
        }
        Ok(())
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig {
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            completions: self.completions,
            parallelism: self.parallelism,
            constructs: self.constructs.clone(),
            reflection_aggregation: self.reflection_aggregation,
            summary: self.summary.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_http_configs() {
        let c: RunConfig = serde_json::from_str(r#"{"corpus": "c.jsonl", "completions": 1}"#).unwrap();
        assert_eq!(c.backend, BackendConfig::Mock);
        assert_eq!(c.completions, 1);
        assert_eq!(c.constructs.len(), 5);
        let c: RunConfig = serde_json::from_str(
            r#"{"backend": {"kind": "http", "base_url": "http://localhost:9/v1"}, "constructs": ["rapport"]}"#,
        )
        .unwrap();
        match c.backend {
            BackendConfig::Http { base_url, timeout_secs, .. } => {
                assert_eq!(base_url, "http://localhost:9/v1");
                assert_eq!(timeout_secs, 120);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(c.constructs, [ConstructId::Rapport]);
    }

    #[test]
    fn rejects_unknown_fields_and_api_keys() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"api_key": "sk-x"}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"backend": {"kind": "http", "api_key": "x"}}"#).is_err());
    }

    #[test]
    fn validation() {
        let c = RunConfig {
            completions: 0,
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("completions"));
        let c = RunConfig::default();
        assert!(c.validate().unwrap_err().to_string().contains("corpus"));
    }
}
