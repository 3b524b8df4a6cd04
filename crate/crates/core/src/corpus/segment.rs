use serde::{Deserialize, Serialize};

use super::{CorpusError, Session};

pub const SEGMENTS_PER_SESSION: usize = 10;

/// A 10% slice of a session by utterance count. `start..end` indexes the
/// session's utterances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub session_id: String,
    pub segment_index: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Splits a session into ten contiguous segments. When the length is not a
/// multiple of ten the first `len % 10` segments get one extra utterance.
pub fn segment_session(session: &Session) -> Result<Vec<Segment>, CorpusError> {
    let len = session.utterances.len();
    if len < SEGMENTS_PER_SESSION {
        return Err(CorpusError::SessionTooShort {
            session_id: session.session_id.clone(),
            len,
            min: SEGMENTS_PER_SESSION,
        });
    }
    let base = len / SEGMENTS_PER_SESSION;
    let extra = len % SEGMENTS_PER_SESSION;
    let mut start = 0;
    Ok((0..SEGMENTS_PER_SESSION)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let seg = Segment {
                session_id: session.session_id.clone(),
                segment_index: i,
                start,
                end: start + size,
            };
            start += size;
            seg
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Speaker, Utterance};
    use proptest::prelude::*;

    fn session(n: usize) -> Session {
        Session {
            session_id: "s".into(),
            client_id: "c".into(),
            session_order: 1,
            utterances: (0..n)
                .map(|i| Utterance {
                    session_id: "s".into(),
                    index: i,
                    speaker: if i % 2 == 0 { Speaker::Therapist } else { Speaker::Client },
                    text: format!("u{i}"),
                })
                .collect(),
        }
    }

    fn sizes(n: usize) -> Vec<usize> {
        segment_session(&session(n)).unwrap().iter().map(Segment::len).collect()
    }

    #[test]
    fn exact_division() {
        assert_eq!(sizes(20), vec![2; 10]);
    }

    #[test]
    fn remainder_goes_first() {
        assert_eq!(sizes(23), vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn typical_session_length() {
        let s = sizes(151);
        assert_eq!(s.iter().sum::<usize>(), 151);
        assert_eq!(s[0], 16);
        assert!(s[1..].iter().all(|&x| x == 15));
        assert_eq!(s.iter().max().unwrap() - s.iter().min().unwrap(), 1);
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            segment_session(&session(9)),
            Err(CorpusError::SessionTooShort { len: 9, .. })
        ));
    }

    proptest! {
        #[test]
        fn segmentation_is_a_partition(n in 10usize..2000) {
            let segs = segment_session(&session(n)).unwrap();
            prop_assert_eq!(segs.len(), SEGMENTS_PER_SESSION);
            prop_assert_eq!(segs[0].start, 0);
            prop_assert_eq!(segs[9].end, n);
            for w in segs.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
                prop_assert!(w[0].len() >= w[1].len());
            }
            let max = segs.iter().map(Segment::len).max().unwrap();
            let min = segs.iter().map(Segment::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
