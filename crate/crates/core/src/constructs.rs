//! Construct registry, rating scales and prompt templates.
//!
//! Prompt texts live in `assets/prompts/` (one system and one user file per
//! construct) and are embedded at compile time. `assets/prompts/SHA256SUMS`
//! pins their digests; [`verify_template_checksums`] detects drift.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{ContextWindow, Utterance, WindowTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructId {
    EmpathyEpitome,
    EmpathyReflection,
    SelfDisclosure,
    Emotion,
    Rapport,
}

impl ConstructId {
    pub const ALL: [ConstructId; 5] = [
        ConstructId::EmpathyEpitome,
        ConstructId::EmpathyReflection,
        ConstructId::SelfDisclosure,
        ConstructId::Emotion,
        ConstructId::Rapport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConstructId::EmpathyEpitome => "empathy_epitome",
            ConstructId::EmpathyReflection => "empathy_reflection",
            ConstructId::SelfDisclosure => "self_disclosure",
            ConstructId::Emotion => "emotion",
            ConstructId::Rapport => "rapport",
        }
    }

    pub fn entry(self) -> &'static RegistryEntry {
        REGISTRY
            .iter()
            .find(|e| e.id == self)
            .expect("every construct is registered")
    }

    pub fn context_rule(self) -> ContextRule {
        self.entry().context_rule
    }

    pub fn level(self) -> Level {
        self.entry().level
    }

    pub fn dimensions(self) -> &'static [&'static str] {
        self.entry().scale.dimensions
    }

    pub fn template(self) -> &'static PromptTemplate {
        &TEMPLATES[self as usize]
    }
}

impl fmt::Display for ConstructId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstructId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConstructId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown construct {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Utterance,
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextRule {
    /// The N most recent client turns before the target.
    PriorClientUtterances(usize),
    /// The N turns immediately before the target, any speaker.
    PriorUtterances(usize),
    /// The target segment itself; no extra context.
    WholeSegment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleKind {
    /// Three mechanisms, each 0..=2.
    Ordinal3Mechanisms,
    Binary,
    /// General / Medium / High.
    OrdinalGmh,
    /// Nine emotions, each 1..=5.
    Likert5x9,
    /// Four bond aspects plus overall, each 1..=7.
    Likert7x5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatingScale {
    pub kind: ScaleKind,
    pub min: f64,
    pub max: f64,
    pub dimensions: &'static [&'static str],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegistryEntry {
    pub id: ConstructId,
    pub scale: RatingScale,
    pub level: Level,
    pub context_rule: ContextRule,
}

pub const EPITOME_DIMS: &[&str] = &["emotional_reactions", "interpretations", "explorations"];
pub const REFLECTION_DIMS: &[&str] = &["reflection"];
pub const DISCLOSURE_DIMS: &[&str] = &["disclosure"];
pub const EMOTION_DIMS: &[&str] = &[
    "anger",
    "contempt",
    "disgust",
    "enjoyment",
    "fear",
    "sadness",
    "surprise",
    "anxiety",
    "depression",
];
pub const RAPPORT_DIMS: &[&str] = &["liking", "confidence", "appreciation", "trust", "overall"];

static REGISTRY: [RegistryEntry; 5] = [
    RegistryEntry {
        id: ConstructId::EmpathyEpitome,
        scale: RatingScale {
            kind: ScaleKind::Ordinal3Mechanisms,
            min: 0.0,
            max: 2.0,
            dimensions: EPITOME_DIMS,
        },
        level: Level::Utterance,
        context_rule: ContextRule::PriorClientUtterances(2),
    },
    RegistryEntry {
        id: ConstructId::EmpathyReflection,
        scale: RatingScale {
            kind: ScaleKind::Binary,
            min: 0.0,
            max: 1.0,
            dimensions: REFLECTION_DIMS,
        },
        level: Level::Utterance,
        context_rule: ContextRule::PriorClientUtterances(2),
    },
    RegistryEntry {
        id: ConstructId::SelfDisclosure,
        scale: RatingScale {
            kind: ScaleKind::OrdinalGmh,
            min: 1.0,
            max: 3.0,
            dimensions: DISCLOSURE_DIMS,
        },
        level: Level::Utterance,
        context_rule: ContextRule::PriorUtterances(2),
    },
    RegistryEntry {
        id: ConstructId::Emotion,
        scale: RatingScale {
            kind: ScaleKind::Likert5x9,
            min: 1.0,
            max: 5.0,
            dimensions: EMOTION_DIMS,
        },
        level: Level::Utterance,
        context_rule: ContextRule::PriorUtterances(5),
    },
    RegistryEntry {
        id: ConstructId::Rapport,
        scale: RatingScale {
            kind: ScaleKind::Likert7x5,
            min: 1.0,
            max: 7.0,
            dimensions: RAPPORT_DIMS,
        },
        level: Level::Segment,
        context_rule: ContextRule::WholeSegment,
    },
];

pub fn registry() -> &'static [RegistryEntry] {
    &REGISTRY
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("placeholder {{{0}}} has no value")]
    MissingDatum(&'static str),
    #[error("value supplied for unknown placeholder {0:?}")]
    UnknownPlaceholder(String),
    #[error("{construct} cannot be rendered from this window: {reason}")]
    WrongWindow {
        construct: ConstructId,
        reason: &'static str,
    },
}

/// System message plus a user template with `{name}` placeholders.
#[derive(Debug)]
pub struct PromptTemplate {
    pub construct: ConstructId,
    pub system_message: &'static str,
    pub user_template: &'static str,
    pub placeholders: &'static [&'static str],
    pub system_file: &'static str,
    pub user_file: &'static str,
}

macro_rules! template {
    ($id:expr, $name:literal, [$($ph:literal),*]) => {
        PromptTemplate {
            construct: $id,
            system_message: include_str!(concat!("../assets/prompts/", $name, ".system.txt")),
            user_template: include_str!(concat!("../assets/prompts/", $name, ".user.txt")),
            placeholders: &[$($ph),*],
            system_file: concat!($name, ".system.txt"),
            user_file: concat!($name, ".user.txt"),
        }
    };
}

// Indexed by `ConstructId as usize`.
static TEMPLATES: [PromptTemplate; 5] = [
    template!(ConstructId::EmpathyEpitome, "epitome", ["client_speech", "therapist_response"]),
    template!(ConstructId::EmpathyReflection, "reflection", ["client_utt", "therapist_utt"]),
    template!(ConstructId::SelfDisclosure, "disclosure", ["summary", "utterance"]),
    template!(ConstructId::Emotion, "emotion", ["context", "text"]),
    template!(ConstructId::Rapport, "rapport", ["conversation_log"]),
];

const CHECKSUM_MANIFEST: &str = include_str!("../assets/prompts/SHA256SUMS");

impl PromptTemplate {
    /// Substitutes every placeholder exactly once in a single left-to-right
    /// pass, so substituted values are never re-scanned.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, RenderError> {
        for (name, _) in values {
            if !self.placeholders.contains(name) {
                return Err(RenderError::UnknownPlaceholder((*name).to_string()));
            }
        }
        let mut spans: Vec<(usize, &'static str)> = Vec::with_capacity(self.placeholders.len());
        for ph in self.placeholders {
            let tag = format!("{{{ph}}}");
            let pos = self
                .user_template
                .find(&tag)
                .expect("placeholders listed for a template occur in it");
            spans.push((pos, ph));
        }
        spans.sort_unstable();

        let mut out = String::with_capacity(self.user_template.len() + 256);
        let mut cursor = 0;
        for (pos, ph) in spans {
            let value = values
                .iter()
                .find(|(n, _)| n == &ph)
                .map(|(_, v)| *v)
                .ok_or(RenderError::MissingDatum(ph))?;
            out.push_str(&self.user_template[cursor..pos]);
            out.push_str(value);
            cursor = pos + ph.len() + 2;
        }
        out.push_str(&self.user_template[cursor..]);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_message: String,
    pub user_message: String,
}

/// Serializes utterances as `C: ...` / `T: ...` lines joined by `\n`.
pub fn dialogue_log(utterances: &[Utterance]) -> String {
    utterances
        .iter()
        .map(Utterance::dialogue_line)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders the prompt for `construct` from a context window.
///
/// * Empathy constructs: the client slot holds the prior client turns in
///   session order (auxiliary then primary) joined by a space.
/// * Self-disclosure: `summary` is required (may be empty). The two prior
///   turns follow the summary in the background slot as dialogue lines.
/// * Emotion: prior turns as dialogue lines; the central utterance as text.
/// * Rapport: the segment as dialogue lines.
pub fn render_prompt(
    construct: ConstructId,
    window: &ContextWindow,
    summary: Option<&str>,
) -> Result<RenderedPrompt, RenderError> {
    if window.construct != construct {
        return Err(RenderError::WrongWindow {
            construct,
            reason: "window was built for a different construct",
        });
    }
    let template = construct.template();
    let user_message = match (construct, &window.target) {
        (ConstructId::Rapport, WindowTarget::Segment { utterances, .. }) => {
            template.render(&[("conversation_log", &dialogue_log(utterances))])?
        }
        (ConstructId::Rapport, _) => {
            return Err(RenderError::WrongWindow {
                construct,
                reason: "needs a segment target",
            })
        }
        (_, WindowTarget::Segment { .. }) => {
            return Err(RenderError::WrongWindow {
                construct,
                reason: "needs an utterance target",
            })
        }
        (ConstructId::EmpathyEpitome, WindowTarget::Utterance(target)) => {
            let client = client_speech(window);
            template.render(&[("client_speech", &client), ("therapist_response", &target.text)])?
        }
        (ConstructId::EmpathyReflection, WindowTarget::Utterance(target)) => {
            let client = client_speech(window);
            template.render(&[("client_utt", &client), ("therapist_utt", &target.text)])?
        }
        (ConstructId::SelfDisclosure, WindowTarget::Utterance(target)) => {
            let summary = summary.ok_or(RenderError::MissingDatum("summary"))?;
            let background = disclosure_background(summary, &window.context);
            template.render(&[("summary", &background), ("utterance", &target.text)])?
        }
        (ConstructId::Emotion, WindowTarget::Utterance(target)) => {
            template.render(&[("context", &dialogue_log(&window.context)), ("text", &target.text)])?
        }
    };
    Ok(RenderedPrompt {
        system_message: template.system_message.to_string(),
        user_message,
    })
}

fn client_speech(window: &ContextWindow) -> String {
    window
        .context
        .iter()
        .map(|u| u.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn disclosure_background(summary: &str, context: &[Utterance]) -> String {
    let log = dialogue_log(context);
    match (summary.is_empty(), log.is_empty()) {
        (_, true) => summary.to_string(),
        (true, false) => log,
        (false, false) => format!("{summary}\n{log}"),
    }
}

/// `(file name, sha256 hex)` for every embedded template file.
pub fn template_checksums() -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    for t in &TEMPLATES {
        out.push((t.system_file, sha256_hex(t.system_message)));
        out.push((t.user_file, sha256_hex(t.user_template)));
    }
    out.sort();
    out
}

/// Compares embedded templates against the checksum manifest.
pub fn verify_template_checksums() -> Result<(), Vec<String>> {
    let mut problems = Vec::new();
    let actual = template_checksums();
    for line in CHECKSUM_MANIFEST.lines().filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let (Some(digest), Some(file)) = (parts.next(), parts.next()) else {
            problems.push(format!("malformed manifest line {line:?}"));
            continue;
        };
        match actual.iter().find(|(f, _)| *f == file) {
            Some((_, d)) if d == digest => {}
            Some((_, d)) => problems.push(format!("{file}: expected {digest}, embedded {d}")),
            None => problems.push(format!("{file}: listed in manifest but not embedded")),
        }
    }
    for (file, _) in &actual {
        if !CHECKSUM_MANIFEST.contains(file) {
            problems.push(format!("{file}: embedded but missing from manifest"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{context_for, Session, Speaker, TargetRef};

    fn session(turns: &[(Speaker, &str)]) -> Session {
        Session {
            session_id: "s".into(),
            client_id: "c".into(),
            session_order: 1,
            utterances: turns
                .iter()
                .enumerate()
                .map(|(i, (sp, t))| Utterance {
                    session_id: "s".into(),
                    index: i,
                    speaker: *sp,
                    text: (*t).into(),
                })
                .collect(),
        }
    }

    #[test]
    fn registry_shape() {
        let reg = registry();
        assert_eq!(reg.len(), 5);
        let segment_level: Vec<_> = reg.iter().filter(|e| e.level == Level::Segment).collect();
        assert_eq!(segment_level.len(), 1);
        assert_eq!(segment_level[0].id, ConstructId::Rapport);
        assert_eq!(
            ConstructId::Emotion.context_rule(),
            ContextRule::PriorUtterances(5)
        );
        assert_eq!(ConstructId::Emotion.dimensions().len(), 9);
    }

    #[test]
    fn template_table_indexed_by_id() {
        for c in ConstructId::ALL {
            assert_eq!(c.template().construct, c);
        }
    }

    #[test]
    fn every_placeholder_occurs_exactly_once() {
        for c in ConstructId::ALL {
            let t = c.template();
            for ph in t.placeholders {
                assert_eq!(t.user_template.matches(&format!("{{{ph}}}")).count(), 1, "{c} {ph}");
            }
        }
    }

    #[test]
    fn render_identity_with_own_tags() {
        for c in ConstructId::ALL {
            let t = c.template();
            let tags: Vec<String> = t.placeholders.iter().map(|p| format!("{{{p}}}")).collect();
            let values: Vec<(&str, &str)> =
                t.placeholders.iter().zip(&tags).map(|(p, v)| (*p, v.as_str())).collect();
            assert_eq!(t.render(&values).unwrap(), t.user_template);
        }
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = ConstructId::Emotion.template();
        let out = t.render(&[("context", "{text}"), ("text", "X")]).unwrap();
        assert!(out.contains("(could be empty):\n{text}\n"));
        assert!(out.contains("central utterance:\nX\n"));
    }

    #[test]
    fn missing_and_unknown_placeholders() {
        let t = ConstructId::Rapport.template();
        assert_eq!(t.render(&[]), Err(RenderError::MissingDatum("conversation_log")));
        assert!(matches!(
            t.render(&[("conversation_log", ""), ("bogus", "")]),
            Err(RenderError::UnknownPlaceholder(_))
        ));
    }

    #[test]
    fn disclosure_rubric_and_summary_requirement() {
        let s = session(&[(Speaker::Client, "The weather has been nice lately.")]);
        let w = context_for(ConstructId::SelfDisclosure, &s, TargetRef::Utterance(0)).unwrap();
        assert_eq!(
            render_prompt(ConstructId::SelfDisclosure, &w, None),
            Err(RenderError::MissingDatum("summary"))
        );
        let p = render_prompt(ConstructId::SelfDisclosure, &w, Some("")).unwrap();
        assert!(p.user_message.contains("1. G (General, No Disclosure)"));
        assert!(p
            .user_message
            .contains("Session Background: \nClient: \"The weather has been nice lately.\""));
    }

    #[test]
    fn emotion_with_empty_context() {
        let s = session(&[(Speaker::Client, "I feel fine.")]);
        let w = context_for(ConstructId::Emotion, &s, TargetRef::Utterance(0)).unwrap();
        let p = render_prompt(ConstructId::Emotion, &w, None).unwrap();
        let t = ConstructId::Emotion.template().user_template;
        let expected = t.replace("{context}", "").replace("{text}", "I feel fine.");
        assert_eq!(p.user_message, expected);
    }

    #[test]
    fn rapport_log_lines() {
        let s = session(&[(Speaker::Therapist, "Hello."), (Speaker::Client, "Hi.")]);
        let w = crate::corpus::ContextWindow {
            construct: ConstructId::Rapport,
            target: WindowTarget::Segment {
                segment: crate::corpus::Segment {
                    session_id: "s".into(),
                    segment_index: 0,
                    start: 0,
                    end: 2,
                },
                utterances: s.utterances.clone(),
            },
            context: vec![],
        };
        let p = render_prompt(ConstructId::Rapport, &w, None).unwrap();
        assert!(p.user_message.contains("Conversation log:\nT: Hello.\nC: Hi.\n\nProvide"));
    }

    #[test]
    fn wrong_construct_window_rejected() {
        let s = session(&[(Speaker::Client, "x")]);
        let w = context_for(ConstructId::Emotion, &s, TargetRef::Utterance(0)).unwrap();
        assert!(matches!(
            render_prompt(ConstructId::SelfDisclosure, &w, Some("")),
            Err(RenderError::WrongWindow { .. })
        ));
    }

    #[test]
    fn checksums_match_manifest() {
        verify_template_checksums().unwrap();
        assert_eq!(template_checksums().len(), 10);
    }
}
