use super::{segment_session, CorpusError, Segment, Session, Speaker, Utterance};
use crate::constructs::{ConstructId, ContextRule};

/// What a context window is built around.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRef {
    Utterance(usize),
    Segment(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowTarget {
    Utterance(Utterance),
    Segment {
        segment: Segment,
        utterances: Vec<Utterance>,
    },
}

/// A target plus the prior utterances handed to the rater with it.
///
/// `context` is in session order and strictly precedes the target. For the
/// empathy constructs it holds only client utterances: the last one is the
/// primary client turn, an earlier one (if any) is auxiliary.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub construct: ConstructId,
    pub target: WindowTarget,
    pub context: Vec<Utterance>,
}

impl ContextWindow {
    pub fn target_utterance(&self) -> Option<&Utterance> {
        match &self.target {
            WindowTarget::Utterance(u) => Some(u),
            WindowTarget::Segment { .. } => None,
        }
    }

    /// Most recent prior client turn for the empathy constructs.
    pub fn primary_client(&self) -> Option<&Utterance> {
        self.context.iter().rev().find(|u| u.speaker == Speaker::Client)
    }
}

/// Builds the construct-specific context window. Windows truncate silently
/// at the start of the session.
pub fn context_for(
    construct: ConstructId,
    session: &Session,
    target: TargetRef,
) -> Result<ContextWindow, CorpusError> {
    let rule = construct.context_rule();
    match (rule, target) {
        (ContextRule::WholeSegment, TargetRef::Segment(idx)) => {
            let segs = segment_session(session)?;
            let segment = segs.into_iter().nth(idx).ok_or_else(|| {
                CorpusError::WindowShape(format!("segment index {idx} out of range"))
            })?;
            let utterances = session.utterances[segment.start..segment.end].to_vec();
            Ok(ContextWindow {
                construct,
                target: WindowTarget::Segment {
                    segment,
                    utterances,
                },
                context: Vec::new(),
            })
        }
        (ContextRule::WholeSegment, TargetRef::Utterance(_)) => Err(CorpusError::WindowShape(
            format!("{construct} is scored per segment, got an utterance target"),
        )),
        (_, TargetRef::Segment(_)) => Err(CorpusError::WindowShape(format!(
            "{construct} is scored per utterance, got a segment target"
        ))),
        (rule, TargetRef::Utterance(index)) => {
            let target = session
                .utterance(index)
                .ok_or_else(|| CorpusError::TargetNotFound {
                    session_id: session.session_id.clone(),
                    index,
                })?
                .clone();
            let prior = &session.utterances[..index];
            let context: Vec<Utterance> = match rule {
                ContextRule::PriorClientUtterances(n) => {
                    let mut picked: Vec<Utterance> = prior
                        .iter()
                        .rev()
                        .filter(|u| u.speaker == Speaker::Client)
                        .take(n)
                        .cloned()
                        .collect();
                    picked.reverse();
                    picked
                }
                ContextRule::PriorUtterances(n) => prior[prior.len().saturating_sub(n)..].to_vec(),
                ContextRule::WholeSegment => unreachable!(),
            };
            Ok(ContextWindow {
                construct,
                target: WindowTarget::Utterance(target),
                context,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn session_from(speakers: &str) -> Session {
        Session {
            session_id: "s".into(),
            client_id: "c".into(),
            session_order: 1,
            utterances: speakers
                .chars()
                .enumerate()
                .map(|(i, ch)| Utterance {
                    session_id: "s".into(),
                    index: i,
                    speaker: if ch == 'C' { Speaker::Client } else { Speaker::Therapist },
                    text: format!("u{i}"),
                })
                .collect(),
        }
    }

    fn indices(w: &ContextWindow) -> Vec<usize> {
        w.context.iter().map(|u| u.index).collect()
    }

    #[test]
    fn emotion_truncates_at_start() {
        let s = session_from("TCTCTCTC");
        let w = context_for(ConstructId::Emotion, &s, TargetRef::Utterance(2)).unwrap();
        assert_eq!(indices(&w), vec![0, 1]);
        let w = context_for(ConstructId::Emotion, &s, TargetRef::Utterance(0)).unwrap();
        assert!(w.context.is_empty());
        let w = context_for(ConstructId::Emotion, &s, TargetRef::Utterance(7)).unwrap();
        assert_eq!(indices(&w), vec![2, 3, 4, 5, 6]);
    }

    #[test]
    fn empathy_uses_two_most_recent_client_turns() {
        // client turns at 2 and 4, therapist target at 5
        let s = session_from("TTCTCT");
        for c in [ConstructId::EmpathyEpitome, ConstructId::EmpathyReflection] {
            let w = context_for(c, &s, TargetRef::Utterance(5)).unwrap();
            assert_eq!(indices(&w), vec![2, 4]);
            assert_eq!(w.primary_client().unwrap().index, 4);
        }
    }

    #[test]
    fn disclosure_uses_two_prior_of_any_speaker() {
        let s = session_from("TCTCTC");
        let w = context_for(ConstructId::SelfDisclosure, &s, TargetRef::Utterance(5)).unwrap();
        assert_eq!(indices(&w), vec![3, 4]);
    }

    #[test]
    fn rapport_segment_three_of_twenty() {
        let s = session_from(&"TC".repeat(10));
        let w = context_for(ConstructId::Rapport, &s, TargetRef::Segment(3)).unwrap();
        match &w.target {
            WindowTarget::Segment { utterances, .. } => {
                assert_eq!(utterances.iter().map(|u| u.index).collect::<Vec<_>>(), vec![6, 7]);
            }
            _ => panic!("expected segment"),
        }
        assert!(w.context.is_empty());
    }

    #[test]
    fn shape_mismatch_errors() {
        let s = session_from(&"TC".repeat(10));
        assert!(context_for(ConstructId::Rapport, &s, TargetRef::Utterance(1)).is_err());
        assert!(context_for(ConstructId::Emotion, &s, TargetRef::Segment(1)).is_err());
        assert!(matches!(
            context_for(ConstructId::Emotion, &s, TargetRef::Utterance(99)),
            Err(CorpusError::TargetNotFound { index: 99, .. })
        ));
    }

    proptest! {
        #[test]
        fn context_strictly_precedes_target(
            speakers in proptest::collection::vec(prop_oneof![Just('C'), Just('T')], 1..60),
            pick in any::<proptest::sample::Index>(),
        ) {
            let text: String = speakers.iter().collect();
            let s = session_from(&text);
            let idx = pick.index(speakers.len());
            for c in [ConstructId::EmpathyEpitome, ConstructId::EmpathyReflection,
                      ConstructId::SelfDisclosure, ConstructId::Emotion] {
                let w = context_for(c, &s, TargetRef::Utterance(idx)).unwrap();
                prop_assert!(w.context.iter().all(|u| u.index < idx));
                prop_assert!(w.context.windows(2).all(|p| p[0].index < p[1].index));
            }
        }
    }
}
