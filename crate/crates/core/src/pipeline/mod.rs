//! Corpus scoring and derivation of session-level analysis variables.

mod rows;
mod store;

pub use rows::{
    build_analysis_rows, write_rows_csv, AnalysisRow, Coverage, RowOptions, ROW_COLUMNS,
};
pub use store::{
    ConstructScore, Failure, FailureStage, ReflectionAggregation, RunMetadata, ScoreStore,
    TargetId, TargetKind, FAILURES_FILE, META_FILE, SCORES_FILE,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, CompletionRequest, DEFAULT_COMPLETIONS, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TEMPERATURE};
use crate::constructs::{render_prompt, template_checksums, ConstructId};
use crate::corpus::{context_for, Corpus, Session, Speaker, SEGMENTS_PER_SESSION};
use crate::parser::{aggregate, majority_reflection, parse_response, RawScore, ReflectionLabel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("duplicate score record for {0}")]
    DuplicateRecord(String),
    #[error("session {0} has no parsed rapport segment")]
    NoRapport(String),
    #[error("score store: {0}")]
    Store(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub model_name: String,
    pub temperature: f64,
    pub completions: u32,
    /// Upper bound on concurrent backend calls.
    pub parallelism: usize,
    pub constructs: Vec<ConstructId>,
    pub reflection_aggregation: ReflectionAggregation,
    /// Session background for the self-disclosure prompt.
    pub summary: String,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            model_name: "gpt-4o-mini".into(),
            temperature: DEFAULT_TEMPERATURE,
            completions: DEFAULT_COMPLETIONS,
            parallelism: DEFAULT_MAX_IN_FLIGHT,
            constructs: ConstructId::ALL.to_vec(),
            reflection_aggregation: ReflectionAggregation::Fraction,
            summary: String::new(),
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.completions == 0 {
            return Err(PipelineError::InvalidConfig("completions must be >= 1".into()));
        }
        if self.parallelism == 0 {
            return Err(PipelineError::InvalidConfig("parallelism must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(PipelineError::InvalidConfig("temperature must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn metadata(&self, backend_id: String) -> RunMetadata {
        let mut constructs = self.constructs.clone();
        constructs.sort();
        constructs.dedup();
        RunMetadata {
            backend_id,
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            completions: self.completions,
            reflection_aggregation: self.reflection_aggregation,
            constructs,
            template_checksums: template_checksums()
                .into_iter()
                .map(|(f, h)| (f.to_string(), h))
                .collect(),
        }
    }
}

/// Work items in corpus order: utterance constructs by speaker, then the
/// segments of sessions long enough to segment.
pub fn work_items(corpus: &Corpus, constructs: &[ConstructId]) -> Vec<(TargetId, ConstructId)> {
    let wanted = |c: ConstructId| constructs.contains(&c);
    let mut items = Vec::new();
    for session in corpus.sessions() {
        for u in &session.utterances {
            let per_speaker: &[ConstructId] = match u.speaker {
                Speaker::Client => &[ConstructId::SelfDisclosure, ConstructId::Emotion],
                Speaker::Therapist => &[ConstructId::EmpathyEpitome, ConstructId::EmpathyReflection],
            };
            for &c in per_speaker.iter().filter(|c| wanted(**c)) {
                items.push((TargetId::utterance(&session.session_id, u.index), c));
            }
        }
        if wanted(ConstructId::Rapport) && session.is_scorable() {
            for s in 0..SEGMENTS_PER_SESSION {
                items.push((TargetId::segment(&session.session_id, s), ConstructId::Rapport));
            }
        }
    }
    items
}

/// Scores every work item. Failures of single items go to the store's
/// failure ledger; the run itself only fails on invalid configuration.
pub fn score_corpus(
    corpus: &Corpus,
    backend: &dyn Backend,
    config: &ScoreConfig,
) -> Result<ScoreStore, PipelineError> {
    config.validate()?;
    let items = work_items(corpus, &config.constructs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    let results: Vec<Result<ConstructScore, Failure>> = pool.install(|| {
        items
            .par_iter()
            .map(|(target, construct)| {
                let session = corpus
                    .session(&target.session_id)
                    .expect("work items come from the corpus");
                score_item(session, target, *construct, backend, config)
            })
            .collect()
    });
    let mut store = ScoreStore::new(config.metadata(backend.id()));
    let mut n_failed = 0;
    for r in results {
        match r {
            Ok(score) => store.insert(score)?,
            Err(f) => {
                n_failed += 1;
                log::warn!("{} {}: {:?} failure: {}", f.target, f.construct, f.stage, f.message);
                store.record_failure(f);
            }
        }
    }
    log::info!("scored {} items, {} failed", store.len(), n_failed);
    Ok(store)
}

fn score_item(
    session: &Session,
    target: &TargetId,
    construct: ConstructId,
    backend: &dyn Backend,
    config: &ScoreConfig,
) -> Result<ConstructScore, Failure> {
    let fail = |stage, completion_index, message: String| Failure {
        target: target.clone(),
        construct,
        stage,
        completion_index,
        message,
    };
    let window = context_for(construct, session, target.target_ref())
        .map_err(|e| fail(FailureStage::Window, None, e.to_string()))?;
    let prompt = render_prompt(construct, &window, Some(&config.summary))
        .map_err(|e| fail(FailureStage::Render, None, e.to_string()))?;
    let base = CompletionRequest {
        system_message: prompt.system_message,
        user_message: prompt.user_message,
        model_name: config.model_name.clone(),
        temperature: config.temperature,
        completion_index: 0,
    };
    let mut completions = Vec::with_capacity(config.completions as usize);
    for i in 0..config.completions {
        let text = backend
            .complete(&base.with_index(i))
            .map_err(|e| fail(FailureStage::Backend, Some(i), e.to_string()))?;
        let raw = parse_response(construct, &text)
            .map_err(|e| fail(FailureStage::Parse, Some(i), e.to_string()))?;
        completions.push(raw);
    }
    let values = aggregate_completions(&completions, config.reflection_aggregation)
        .map_err(|e| fail(FailureStage::Parse, None, e.to_string()))?;
    Ok(ConstructScore {
        target: target.clone(),
        construct,
        values,
        completions,
    })
}

fn aggregate_completions(
    raws: &[RawScore],
    reflection: ReflectionAggregation,
) -> Result<Vec<f64>, crate::parser::ParseError> {
    let is_reflection = raws.first().map(RawScore::construct) == Some(ConstructId::EmpathyReflection);
    if is_reflection && reflection == ReflectionAggregation::Majority {
        let label = majority_reflection(raws)
            .ok_or_else(|| crate::parser::ParseError::Aggregate("no reflection labels".into()))?;
        return Ok(vec![if label == ReflectionLabel::Reflection { 1.0 } else { 0.0 }]);
    }
    aggregate(raws)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionRapportRule {
    /// Mean of the segment overall ratings.
    #[default]
    Mean,
    /// Overall rating of the last parsed segment.
    LastSegment,
    Max,
}

/// Session-level rapport from the parsed segment overall ratings.
pub fn session_rapport(
    store: &ScoreStore,
    session_id: &str,
    rule: SessionRapportRule,
) -> Result<f64, PipelineError> {
    let overall: Vec<f64> = (0..SEGMENTS_PER_SESSION)
        .filter_map(|s| store.get(&TargetId::segment(session_id, s), ConstructId::Rapport))
        .filter_map(|score| score.value("overall"))
        .collect();
    if overall.is_empty() {
        return Err(PipelineError::NoRapport(session_id.to_string()));
    }
    Ok(match rule {
        SessionRapportRule::Mean => overall.iter().sum::<f64>() / overall.len() as f64,
        SessionRapportRule::LastSegment => *overall.last().unwrap(),
        SessionRapportRule::Max => overall.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
