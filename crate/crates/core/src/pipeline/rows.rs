use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{session_rapport, PipelineError, ScoreStore, SessionRapportRule, TargetId};
use crate::constructs::ConstructId;
use crate::corpus::{Corpus, Speaker};

/// One client utterance aligned with the most recent preceding therapist
/// turn of the same session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub client_id: String,
    pub session_id: String,
    pub session_order: u32,
    pub utterance_index: usize,
    pub therapist_index: usize,
    pub disclosure: f64,
    /// Emotion means in dimension order.
    pub emotions: [f64; 9],
    pub er: f64,
    pub ip: f64,
    pub ex: f64,
    pub reflection: f64,
    pub rapport_prev: Option<f64>,
    pub log_session: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Coverage {
    pub client_utterances: usize,
    /// Client turns with no earlier therapist turn in the session.
    pub no_prior_therapist: usize,
    /// Aligned turns dropped because a required score is missing.
    pub missing_scores: usize,
    pub rows: usize,
    pub rows_without_rapport_prev: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RowOptions {
    pub rapport_rule: SessionRapportRule,
}

pub const ROW_COLUMNS: [&str; 23] = [
    "client_id",
    "session_id",
    "session_order",
    "utterance_index",
    "therapist_index",
    "disclosure",
    "anger",
    "contempt",
    "disgust",
    "enjoyment",
    "fear",
    "sadness",
    "surprise",
    "anxiety",
    "depression",
    "er",
    "ip",
    "ex",
    "reflection",
    "rapport_prev",
    "log_session",
    "has_rapport_prev",
    "cluster",
];

pub fn build_analysis_rows(
    store: &ScoreStore,
    corpus: &Corpus,
    options: RowOptions,
) -> (Vec<AnalysisRow>, Coverage) {
    let mut rows = Vec::new();
    let mut cov = Coverage::default();
    for session in corpus.sessions() {
        let rapport_prev = corpus
            .previous_session(session)
            .and_then(|prev| session_rapport(store, &prev.session_id, options.rapport_rule).ok());
        let mut last_therapist: Option<usize> = None;
        for u in &session.utterances {
            match u.speaker {
                Speaker::Therapist => last_therapist = Some(u.index),
                Speaker::Client => {
                    cov.client_utterances += 1;
                    let Some(t) = last_therapist else {
                        cov.no_prior_therapist += 1;
                        continue;
                    };
                    let client = TargetId::utterance(&session.session_id, u.index);
                    let therapist = TargetId::utterance(&session.session_id, t);
                    let scores = (
                        store.get(&client, ConstructId::SelfDisclosure),
                        store.get(&client, ConstructId::Emotion),
                        store.get(&therapist, ConstructId::EmpathyEpitome),
                        store.get(&therapist, ConstructId::EmpathyReflection),
                    );
                    let (Some(d), Some(e), Some(ep), Some(rf)) = scores else {
                        cov.missing_scores += 1;
                        continue;
                    };
                    let mut emotions = [0.0; 9];
                    emotions.copy_from_slice(&e.values);
                    rows.push(AnalysisRow {
                        client_id: session.client_id.clone(),
                        session_id: session.session_id.clone(),
                        session_order: session.session_order,
                        utterance_index: u.index,
                        therapist_index: t,
                        disclosure: d.values[0],
                        emotions,
                        er: ep.values[0],
                        ip: ep.values[1],
                        ex: ep.values[2],
                        reflection: rf.values[0],
                        rapport_prev,
                        log_session: f64::from(session.session_order).ln(),
                    });
                    if rapport_prev.is_none() {
                        cov.rows_without_rapport_prev += 1;
                    }
                }
            }
        }
    }
    cov.rows = rows.len();
    (rows, cov)
}

/// CSV in [`ROW_COLUMNS`] order; a missing `rapport_prev` is an empty cell.
pub fn write_rows_csv<W: Write>(rows: &[AnalysisRow], out: W) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROW_COLUMNS)?;
    for r in rows {
        let mut rec: Vec<String> = vec![
            r.client_id.clone(),
            r.session_id.clone(),
            r.session_order.to_string(),
            r.utterance_index.to_string(),
            r.therapist_index.to_string(),
            r.disclosure.to_string(),
        ];
        rec.extend(r.emotions.iter().map(f64::to_string));
        rec.extend([r.er, r.ip, r.ex, r.reflection].iter().map(f64::to_string));
        rec.push(r.rapport_prev.map(|v| v.to_string()).unwrap_or_default());
        rec.push(r.log_session.to_string());
        rec.push(u8::from(r.rapport_prev.is_some()).to_string());
        rec.push(r.session_id.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::corpus::synth_corpus;
    use crate::pipeline::{score_corpus, ScoreConfig};

    fn scored(seed: u64, clients: usize, sessions: usize, len: usize) -> (Corpus, ScoreStore) {
        let corpus = synth_corpus(seed, clients, sessions, len);
        let store = score_corpus(&corpus, &MockBackend, &ScoreConfig::default()).unwrap();
        (corpus, store)
    }

    #[test]
    fn first_session_has_no_rapport_prev() {
        let (corpus, store) = scored(1, 1, 3, 20);
        let (rows, cov) = build_analysis_rows(&store, &corpus, RowOptions::default());
        assert!(rows.iter().filter(|r| r.session_order == 1).all(|r| r.rapport_prev.is_none()));
        assert!(rows.iter().filter(|r| r.session_order > 1).all(|r| r.rapport_prev.is_some()));
        assert_eq!(cov.rows_without_rapport_prev, 10);
        assert!(rows.iter().all(|r| (r.log_session - f64::from(r.session_order).ln()).abs() == 0.0));
    }

    #[test]
    fn rapport_prev_is_previous_session_rapport() {
        let (corpus, store) = scored(2, 2, 3, 20);
        let (rows, _) = build_analysis_rows(&store, &corpus, RowOptions::default());
        for r in rows.iter().filter(|r| r.session_order > 1) {
            let prev = format!("{}-s{:03}", r.client_id, r.session_order - 1);
            let want = session_rapport(&store, &prev, SessionRapportRule::Mean).unwrap();
            assert_eq!(r.rapport_prev, Some(want));
        }
    }

    #[test]
    fn client_first_utterance_yields_no_row() {
        use crate::corpus::{Session, Utterance};
        let mut utts = Vec::new();
        for i in 0..12 {
            utts.push(Utterance {
                session_id: "s".into(),
                index: i,
                speaker: if i % 2 == 0 { Speaker::Client } else { Speaker::Therapist },
                text: "What happened? I started a new job last week.".into(),
            });
        }
        let corpus = Corpus::from_sessions(vec![Session {
            session_id: "s".into(),
            client_id: "c".into(),
            session_order: 1,
            utterances: utts,
        }])
        .unwrap();
        let store = score_corpus(&corpus, &MockBackend, &ScoreConfig::default()).unwrap();
        let (rows, cov) = build_analysis_rows(&store, &corpus, RowOptions::default());
        assert!(rows.iter().all(|r| r.utterance_index != 0));
        assert_eq!(cov.no_prior_therapist, 1);
        assert_eq!(rows.len(), 5);
    }

    /// Independent re-walk: for each client turn scan backwards for the
    /// nearest therapist turn.
    #[test]
    fn alignment_matches_backward_scan_oracle() {
        let (corpus, store) = scored(3, 2, 2, 23);
        let (rows, cov) = build_analysis_rows(&store, &corpus, RowOptions::default());
        let mut expected = Vec::new();
        for s in corpus.sessions() {
            for (i, u) in s.utterances.iter().enumerate() {
                if u.speaker != Speaker::Client {
                    continue;
                }
                let prior = (0..i).rev().find(|&j| s.utterances[j].speaker == Speaker::Therapist);
                if let Some(j) = prior {
                    expected.push((s.session_id.clone(), i, j));
                }
            }
        }
        let got: Vec<_> = rows
            .iter()
            .map(|r| (r.session_id.clone(), r.utterance_index, r.therapist_index))
            .collect();
        assert_eq!(got, expected);
        assert_eq!(cov.rows, cov.client_utterances - cov.no_prior_therapist - cov.missing_scores);
        for r in &rows {
            let t = TargetId::utterance(&r.session_id, r.therapist_index);
            let ep = store.get(&t, ConstructId::EmpathyEpitome).unwrap();
            assert_eq!([r.er, r.ip, r.ex], [ep.values[0], ep.values[1], ep.values[2]]);
        }
    }

    #[test]
    fn csv_has_documented_columns() {
        let (corpus, store) = scored(4, 1, 2, 10);
        let (rows, _) = build_analysis_rows(&store, &corpus, RowOptions::default());
        let mut buf = Vec::new();
        write_rows_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), ROW_COLUMNS.join(","));
        assert_eq!(lines.count(), rows.len());
    }
}
