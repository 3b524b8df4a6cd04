use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::constructs::ConstructId;
use crate::corpus::TargetRef;
use crate::parser::RawScore;

pub const SCORES_FILE: &str = "scores.jsonl";
pub const META_FILE: &str = "scores.meta.json";
pub const FAILURES_FILE: &str = "failures.jsonl";

/// Scored unit: an utterance or a segment of a session.
///
/// The string form is `{session_id}#u{index}` or `{session_id}#s{segment}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetId {
    pub session_id: String,
    pub kind: TargetKind,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetKind {
    Utterance,
    Segment,
}

impl TargetId {
    pub fn utterance(session_id: &str, index: usize) -> Self {
        TargetId {
            session_id: session_id.to_string(),
            kind: TargetKind::Utterance,
            index,
        }
    }

    pub fn segment(session_id: &str, index: usize) -> Self {
        TargetId {
            session_id: session_id.to_string(),
            kind: TargetKind::Segment,
            index,
        }
    }

    pub fn target_ref(&self) -> TargetRef {
        match self.kind {
            TargetKind::Utterance => TargetRef::Utterance(self.index),
            TargetKind::Segment => TargetRef::Segment(self.index),
        }
    }
}

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            TargetKind::Utterance => 'u',
            TargetKind::Segment => 's',
        };
        write!(f, "{}#{}{}", self.session_id, tag, self.index)
    }
}

impl FromStr for TargetId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (session, rest) = s
            .rsplit_once('#')
            .ok_or_else(|| format!("target id {s:?} lacks '#'"))?;
        let kind = match rest.chars().next() {
            Some('u') => TargetKind::Utterance,
            Some('s') => TargetKind::Segment,
            _ => return Err(format!("target id {s:?}: expected 'u' or 's' after '#'")),
        };
        let index = rest[1..]
            .parse()
            .map_err(|_| format!("target id {s:?}: bad index"))?;
        if session.is_empty() {
            return Err(format!("target id {s:?}: empty session id"));
        }
        Ok(TargetId {
            session_id: session.to_string(),
            kind,
            index,
        })
    }
}

impl Serialize for TargetId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TargetId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Aggregated score of one target on one construct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructScore {
    pub target: TargetId,
    pub construct: ConstructId,
    /// Aggregate per dimension, in the construct's dimension order.
    pub values: Vec<f64>,
    pub completions: Vec<RawScore>,
}

impl ConstructScore {
    pub fn value(&self, dimension: &str) -> Option<f64> {
        let i = self.construct.dimensions().iter().position(|d| *d == dimension)?;
        self.values.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Window,
    Render,
    Backend,
    Parse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub target: TargetId,
    pub construct: ConstructId,
    pub stage: FailureStage,
    /// Which completion failed, when the failure is per completion.
    pub completion_index: Option<u32>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionAggregation {
    /// Fraction of completions labelled Reflection.
    #[default]
    Fraction,
    /// Majority label coded 0/1, ties to Non-Reflection.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub backend_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub completions: u32,
    pub reflection_aggregation: ReflectionAggregation,
    pub constructs: Vec<ConstructId>,
    /// `(file, sha256)` pairs of the embedded prompt templates.
    pub template_checksums: Vec<(String, String)>,
}

/// Scores of one run, keyed by (target, construct).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStore {
    pub meta: RunMetadata,
    scores: BTreeMap<(TargetId, ConstructId), ConstructScore>,
    failures: Vec<Failure>,
}

impl ScoreStore {
    pub fn new(meta: RunMetadata) -> Self {
        ScoreStore {
            meta,
            scores: BTreeMap::new(),
            failures: Vec::new(),
        }
    }

    /// Adds a record; a second record for the same key is rejected.
    pub fn insert(&mut self, score: ConstructScore) -> Result<(), PipelineError> {
        let key = (score.target.clone(), score.construct);
        if self.scores.contains_key(&key) {
            return Err(PipelineError::DuplicateRecord(format!("{} {}", key.0, key.1)));
        }
        self.scores.insert(key, score);
        Ok(())
    }

    pub fn record_failure(&mut self, failure: Failure) {
        self.failures.push(failure);
        self.failures
            .sort_by(|a, b| (&a.target, a.construct).cmp(&(&b.target, b.construct)));
    }

    pub fn get(&self, target: &TargetId, construct: ConstructId) -> Option<&ConstructScore> {
        self.scores.get(&(target.clone(), construct))
    }

    pub fn scores(&self) -> impl Iterator<Item = &ConstructScore> {
        self.scores.values()
    }

    pub fn scores_for(&self, construct: ConstructId) -> impl Iterator<Item = &ConstructScore> {
        self.scores.values().filter(move |s| s.construct == construct)
    }

    pub fn failures(&self) -> &[Failure] {
        &self.failures
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn count(&self, construct: ConstructId) -> usize {
        self.scores_for(construct).count()
    }

    /// Writes the three store files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir)?;
        let mut meta = serde_json::to_string_pretty(&self.meta)?;
        meta.push('\n');
        std::fs::write(dir.join(META_FILE), meta)?;
        write_jsonl(&dir.join(SCORES_FILE), self.scores.values())?;
        write_jsonl(&dir.join(FAILURES_FILE), self.failures.iter())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let meta: RunMetadata = serde_json::from_str(&std::fs::read_to_string(dir.join(META_FILE))?)?;
        let mut store = ScoreStore::new(meta);
        for s in read_jsonl::<ConstructScore>(&dir.join(SCORES_FILE))? {
            store.insert(s)?;
        }
        let failures = dir.join(FAILURES_FILE);
        if failures.exists() {
            for f in read_jsonl::<Failure>(&failures)? {
                store.record_failure(f);
            }
        }
        Ok(store)
    }
}

fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl Iterator<Item = &'a T>,
) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            PipelineError::Store(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}
