//! Offline keyword scorer.
//!
//! The construct is recognised from the system message, the target text is
//! cut out of the rendered user message, and a fixed rule table maps
//! phrases to ratings. Output uses the same layout the prompts request, so
//! the real parser is exercised. The result depends only on the request.

use once_cell::sync::Lazy;
use regex::Regex;

use super::{Backend, BackendError, CompletionRequest};
use crate::constructs::ConstructId;
use crate::parser::{format_raw, DisclosureLevel, Likert5, Likert7, Mechanism, RawScore, ReflectionLabel};

#[derive(Debug, Clone, Default)]
pub struct MockBackend;

impl Backend for MockBackend {
    fn id(&self) -> String {
        "mock-v1".into()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        mock_complete(request)
    }
}

pub fn mock_complete(request: &CompletionRequest) -> Result<String, BackendError> {
    let construct = ConstructId::ALL
        .into_iter()
        .find(|c| c.template().system_message == request.system_message)
        .ok_or_else(|| BackendError::Refusal {
            status: 400,
            message: "unrecognised system message".into(),
        })?;
    let user = request.user_message.as_str();
    let note = format!("keyword rules, sample {}", request.completion_index);
    let raw = match construct {
        ConstructId::EmpathyEpitome => {
            let t = between(user, "Therapist's Response: \"", "\"\n\nEvaluation Output Format")?.to_lowercase();
            let er = if has_any(&t, &["i feel really", "sad for you"]) {
                2
            } else if has_any(&t, &["sounds tough", "will be fine", "sorry to hear"]) {
                1
            } else {
                0
            };
            let ip = if has_any(&t, &["must be", "i also have"]) {
                2
            } else if t.contains("i understand") {
                1
            } else {
                0
            };
            let ex = if t.contains('?') && has_any(&t, &["feeling", "do you feel"]) {
                2
            } else if t.contains('?') {
                1
            } else {
                0
            };
            RawScore::Epitome {
                emotional_reactions: Mechanism::new(er).unwrap(),
                interpretations: Mechanism::new(ip).unwrap(),
                explorations: Mechanism::new(ex).unwrap(),
                explanation: note,
            }
        }
        ConstructId::EmpathyReflection => {
            let t = between(user, "herapist's Response: \"", "\"\n\nOutput Format")?.to_lowercase();
            let starts = ["it sounds like", "so you", "you're saying", "you feel", "what i'm hearing"];
            let label = if starts.iter().any(|p| t.starts_with(p)) {
                ReflectionLabel::Reflection
            } else {
                ReflectionLabel::NonReflection
            };
            RawScore::Reflection { label, reasoning: note }
        }
        ConstructId::SelfDisclosure => {
            let t = between_last(user, "\nClient: \"", "\"\n\nOutput Format")?.to_lowercase();
            let high = ["never told anyone", "ashamed", "my marriage", "hurt myself", "can't stop thinking"];
            let medium = [
                "i started", "my job", "my sister", "last week", "i'm planning", "we moved", "pottery",
            ];
            let level = if has_any(&t, &high) {
                DisclosureLevel::H
            } else if has_any(&t, &medium) {
                DisclosureLevel::M
            } else {
                DisclosureLevel::G
            };
            RawScore::Disclosure { level, reasoning: note }
        }
        ConstructId::Emotion => {
            let t = between(user, "Analyze the following central utterance:\n", "\n\nTake a deep breath")?
                .to_lowercase();
            let mut ratings = [Likert5::new(1).unwrap(); 9];
            for (slot, re) in ratings.iter_mut().zip(EMOTION_LEXICON.iter()) {
                *slot = Likert5::new(lexicon_rating(&t, re)).unwrap();
            }
            RawScore::Emotion { ratings, rationale: note }
        }
        ConstructId::Rapport => {
            let t = between(user, "Conversation log:\n", "\n\nProvide a overall rating")?.to_lowercase();
            let pos = count_any(&t, &["thank you", "i trust you", "glad i came", "that helps"]);
            let neg = count_any(&t, &["not helping", "don't think this is helping", "waste of time"]);
            let v = (4 + pos as i64 - neg as i64).clamp(1, 7) as u8;
            let r = Likert7::new(v).unwrap();
            RawScore::Rapport {
                liking: r,
                confidence: r,
                appreciation: r,
                trust: r,
                overall: r,
                rationale: note,
            }
        }
    };
    Ok(format_raw(&raw))
}

// One pattern per emotion dimension, in dimension order.
static EMOTION_LEXICON: Lazy<Vec<Regex>> = Lazy::new(|| {
    [
        r"angry",
        r"contempt",
        r"disgusted",
        r"enjoyed|fun",
        r"scared|afraid",
        r"sad|crying",
        r"surprised|unexpected",
        r"anxious|worried",
        r"hopeless",
    ]
    .iter()
    .map(|p| Regex::new(&format!(r"(?:\b(really|very|so)\s+)?\b(?:{p})\b")).unwrap())
    .collect()
});

fn lexicon_rating(text: &str, re: &Regex) -> u8 {
    let mut best = 1;
    for c in re.captures_iter(text) {
        best = best.max(if c.get(1).is_some() { 5 } else { 4 });
    }
    best
}

fn has_any(text: &str, needles: &[&str]) -> bool {
    needles.iter().any(|n| text.contains(n))
}

fn count_any(text: &str, needles: &[&str]) -> usize {
    needles.iter().map(|n| text.matches(n).count()).sum()
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Result<&'a str, BackendError> {
    let from = text.find(start).ok_or_else(|| missing(start))? + start.len();
    let to = text[from..].rfind(end).ok_or_else(|| missing(end))? + from;
    Ok(&text[from..to])
}

fn between_last<'a>(text: &'a str, start: &str, end: &str) -> Result<&'a str, BackendError> {
    let from = text.rfind(start).ok_or_else(|| missing(start))? + start.len();
    let to = text[from..].rfind(end).ok_or_else(|| missing(end))? + from;
    Ok(&text[from..to])
}

fn missing(marker: &str) -> BackendError {
    BackendError::Refusal {
        status: 400,
        message: format!("prompt lacks marker {marker:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructs::render_prompt;
    use crate::corpus::{context_for, Session, Speaker, TargetRef, Utterance};
    use crate::parser::parse_response;

    fn session(texts: &[(Speaker, &str)]) -> Session {
        Session {
            session_id: "s".into(),
            client_id: "c".into(),
            session_order: 1,
            utterances: texts
                .iter()
                .enumerate()
                .map(|(i, (sp, t))| Utterance {
                    session_id: "s".into(),
                    index: i,
                    speaker: *sp,
                    text: t.to_string(),
                })
                .collect(),
        }
    }

    fn run(construct: ConstructId, s: &Session, target: TargetRef) -> RawScore {
        let w = context_for(construct, s, target).unwrap();
        let p = render_prompt(construct, &w, Some("")).unwrap();
        let req = CompletionRequest {
            system_message: p.system_message,
            user_message: p.user_message,
            model_name: "mock".into(),
            temperature: 0.7,
            completion_index: 0,
        };
        parse_response(construct, &MockBackend.complete(&req).unwrap()).unwrap()
    }

    #[test]
    fn epitome_rules() {
        use Speaker::*;
        let s = session(&[
            (Client, "I lost my job."),
            (Therapist, "This must be terrifying. Are you feeling alone?"),
        ]);
        assert_eq!(run(ConstructId::EmpathyEpitome, &s, TargetRef::Utterance(1)).values(), vec![0.0, 2.0, 2.0]);
    }

    #[test]
    fn reflection_rules() {
        use Speaker::*;
        let s = session(&[(Client, "x"), (Therapist, "So you felt left out.")]);
        assert_eq!(run(ConstructId::EmpathyReflection, &s, TargetRef::Utterance(1)).values(), vec![1.0]);
    }

    #[test]
    fn disclosure_and_emotion_rules() {
        use Speaker::*;
        let s = session(&[
            (Therapist, "Hi."),
            (Client, "My marriage is over and I feel really sad. It was unexpected."),
        ]);
        assert_eq!(run(ConstructId::SelfDisclosure, &s, TargetRef::Utterance(1)).values(), vec![3.0]);
        let e = run(ConstructId::Emotion, &s, TargetRef::Utterance(1)).values();
        assert_eq!(e, vec![1.0, 1.0, 1.0, 1.0, 1.0, 5.0, 4.0, 1.0, 1.0]);
    }

    #[test]
    fn unknown_system_message_refused() {
        let req = CompletionRequest {
            system_message: "nope".into(),
            user_message: String::new(),
            model_name: "m".into(),
            temperature: 0.7,
            completion_index: 0,
        };
        assert!(matches!(MockBackend.complete(&req), Err(BackendError::Refusal { .. })));
    }
}
