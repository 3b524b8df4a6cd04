//! Speaker-turn transcripts: parsing, validation, segmentation and context windows.
//!
//! Transcripts are stored as JSONL, one utterance per line:
//!
//! ```text
//! {"client_id":"c01","session_id":"c01-s01","session_order":1,"index":0,"speaker":"T","text":"Hello."}
//! ```
//!
//! Lines may appear in any order; utterances are grouped by `session_id` and
//! sorted by `index`. Blank lines are ignored.

mod segment;
mod synth;
mod window;

pub use segment::{segment_session, Segment, SEGMENTS_PER_SESSION};
pub use synth::{synth_corpus, synth_corpus_with, SynthOptions};
pub use window::{context_for, ContextWindow, TargetRef, WindowTarget};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: field `speaker`: unknown speaker tag {value:?} (expected \"C\" or \"T\")")]
    UnknownSpeaker { line: usize, value: String },
    #[error("line {line}: field `text`: empty after trimming")]
    EmptyText { line: usize },
    #[error("line {line}: field `{field}` disagrees with earlier records of session {session_id}")]
    InconsistentSession {
        line: usize,
        session_id: String,
        field: &'static str,
    },
    #[error("client {client_id}: duplicate session_order {session_order}")]
    DuplicateSessionOrder { client_id: String, session_order: u32 },
    #[error("client {client_id}: session_order values must be 1..K without gaps (expected {expected}, found {found})")]
    SessionOrderGap {
        client_id: String,
        expected: u32,
        found: u32,
    },
    #[error("session {session_id}: utterance indices not contiguous (expected {expected}, found {found})")]
    NonContiguous {
        session_id: String,
        expected: usize,
        found: usize,
    },
    #[error("session {session_id}: {len} utterances, at least {min} required")]
    SessionTooShort {
        session_id: String,
        len: usize,
        min: usize,
    },
    #[error("session {session_id}: no utterance at index {index}")]
    TargetNotFound { session_id: String, index: usize },
    #[error("{0}")]
    WindowShape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "C")]
    Client,
    #[serde(rename = "T")]
    Therapist,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::Client => "C",
            Speaker::Therapist => "T",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "C" => Some(Speaker::Client),
            "T" => Some(Speaker::Therapist),
            _ => None,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One speaking turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub session_id: String,
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    /// `"C: text"` / `"T: text"`, the serialization used inside prompts.
    pub fn dialogue_line(&self) -> String {
        format!("{}: {}", self.speaker.tag(), self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub client_id: String,
    /// 1-based chronological rank of this session among the client's sessions.
    pub session_order: u32,
    pub utterances: Vec<Utterance>,
}

impl Session {
    /// At least two utterances and both speakers present.
    pub fn is_scorable(&self) -> bool {
        self.utterances.len() >= 2
            && self.utterances.iter().any(|u| u.speaker == Speaker::Client)
            && self.utterances.iter().any(|u| u.speaker == Speaker::Therapist)
    }

    pub fn utterance(&self, index: usize) -> Option<&Utterance> {
        self.utterances.get(index)
    }
}

/// Sessions sorted by `(client_id, session_order)`. Immutable once parsed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    sessions: Vec<Session>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Validates and sorts; same checks as [`parse_corpus`] except line numbers.
    pub fn from_sessions(mut sessions: Vec<Session>) -> Result<Self, CorpusError> {
        for s in &mut sessions {
            s.utterances.sort_by_key(|u| u.index);
            check_contiguous(&s.session_id, &s.utterances)?;
        }
        sessions.sort_by(|a, b| {
            (a.client_id.as_str(), a.session_order).cmp(&(b.client_id.as_str(), b.session_order))
        });
        check_session_orders(&sessions)?;
        let by_id = sessions
            .iter()
            .enumerate()
            .map(|(i, s)| (s.session_id.clone(), i))
            .collect();
        Ok(Corpus { sessions, by_id })
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.by_id.get(session_id).map(|&i| &self.sessions[i])
    }

    /// The same client's session with `session_order - 1`, if any.
    pub fn previous_session(&self, session: &Session) -> Option<&Session> {
        if session.session_order <= 1 {
            return None;
        }
        self.sessions.iter().find(|s| {
            s.client_id == session.client_id && s.session_order == session.session_order - 1
        })
    }

    pub fn n_utterances(&self) -> usize {
        self.sessions.iter().map(|s| s.utterances.len()).sum()
    }

    pub fn n_clients(&self) -> usize {
        let mut ids: Vec<&str> = self.sessions.iter().map(|s| s.client_id.as_str()).collect();
        ids.dedup();
        ids.len()
    }

    pub fn speaker_counts(&self) -> (usize, usize) {
        let mut client = 0;
        let mut therapist = 0;
        for u in self.sessions.iter().flat_map(|s| &s.utterances) {
            match u.speaker {
                Speaker::Client => client += 1,
                Speaker::Therapist => therapist += 1,
            }
        }
        (client, therapist)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    client_id: String,
    session_id: String,
    session_order: u32,
    index: usize,
    speaker: String,
    text: String,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    client_id: &'a str,
    session_id: &'a str,
    session_order: u32,
    index: usize,
    speaker: &'static str,
    text: &'a str,
}

/// Parses a JSONL transcript stream into a validated [`Corpus`].
pub fn parse_corpus<R: BufRead>(source: R) -> Result<Corpus, CorpusError> {
    struct Pending {
        client_id: String,
        session_order: u32,
        first_line: usize,
        utterances: Vec<(usize, Utterance)>,
    }
    let mut pending: BTreeMap<String, Pending> = BTreeMap::new();

    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let speaker = Speaker::from_tag(&rec.speaker).ok_or_else(|| CorpusError::UnknownSpeaker {
            line: line_no,
            value: rec.speaker.clone(),
        })?;
        if rec.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { line: line_no });
        }
        if rec.session_order == 0 {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "session_order is 1-based".into(),
            });
        }
        let entry = pending.entry(rec.session_id.clone()).or_insert_with(|| Pending {
            client_id: rec.client_id.clone(),
            session_order: rec.session_order,
            first_line: line_no,
            utterances: Vec::new(),
        });
        if entry.client_id != rec.client_id {
            return Err(CorpusError::InconsistentSession {
                line: line_no,
                session_id: rec.session_id,
                field: "client_id",
            });
        }
        if entry.session_order != rec.session_order {
            return Err(CorpusError::InconsistentSession {
                line: line_no,
                session_id: rec.session_id,
                field: "session_order",
            });
        }
        entry.utterances.push((
            line_no,
            Utterance {
                session_id: rec.session_id,
                index: rec.index,
                speaker,
                text: rec.text,
            },
        ));
    }

    let mut sessions: Vec<(usize, Session)> = pending
        .into_iter()
        .map(|(session_id, p)| {
            let mut utts = p.utterances;
            utts.sort_by_key(|(_, u)| u.index);
            (
                p.first_line,
                Session {
                    session_id,
                    client_id: p.client_id,
                    session_order: p.session_order,
                    utterances: utts.into_iter().map(|(_, u)| u).collect(),
                },
            )
        })
        .collect();
    sessions.sort_by_key(|(line, _)| *line);
    Corpus::from_sessions(sessions.into_iter().map(|(_, s)| s).collect())
}

/// Writes the corpus back out as JSONL, in corpus order, LF-terminated.
pub fn serialize_corpus<W: Write>(corpus: &Corpus, mut out: W) -> Result<(), CorpusError> {
    for s in corpus.sessions() {
        for u in &s.utterances {
            let rec = RecordOut {
                client_id: &s.client_id,
                session_id: &s.session_id,
                session_order: s.session_order,
                index: u.index,
                speaker: u.speaker.tag(),
                text: &u.text,
            };
            serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn check_contiguous(session_id: &str, utterances: &[Utterance]) -> Result<(), CorpusError> {
    for (expected, u) in utterances.iter().enumerate() {
        if u.index != expected {
            return Err(CorpusError::NonContiguous {
                session_id: session_id.to_string(),
                expected,
                found: u.index,
            });
        }
    }
    Ok(())
}

// `sessions` must already be sorted by (client_id, session_order).
fn check_session_orders(sessions: &[Session]) -> Result<(), CorpusError> {
    let mut prev: Option<(&str, u32)> = None;
    for s in sessions {
        let expected = match prev {
            Some((client, order)) if client == s.client_id => {
                if order == s.session_order {
                    return Err(CorpusError::DuplicateSessionOrder {
                        client_id: s.client_id.clone(),
                        session_order: s.session_order,
                    });
                }
                order + 1
            }
            _ => 1,
        };
        if s.session_order != expected {
            return Err(CorpusError::SessionOrderGap {
                client_id: s.client_id.clone(),
                expected,
                found: s.session_order,
            });
        }
        prev = Some((&s.client_id, s.session_order));
    }
    Ok(())
}
