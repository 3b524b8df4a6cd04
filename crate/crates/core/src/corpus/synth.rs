//! Deterministic synthetic transcripts for fixtures and end-to-end runs.
//!
//! Text comes from a fixed phrase bank. Therapist turns combine an optional
//! empathic statement with an optional question; client turns combine a
//! disclosure statement with optional emotion and rapport cues. The phrase
//! bank includes quotes, non-ASCII text and a backslash so the JSONL
//! round-trip covers string escaping.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Corpus, Session, Speaker, Utterance};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    pub n_clients: usize,
    pub sessions_per_client: usize,
    pub utterances_per_session: usize,
    /// Strength of the dependence of client disclosure on the preceding
    /// therapist turn's empathy and exploration. Zero plants no effect.
    pub disclosure_effect: f64,
    /// Suppress all rapport cues so every segment rates the same.
    pub constant_rapport: bool,
}

impl SynthOptions {
    pub fn new(seed: u64, n_clients: usize, sessions_per_client: usize, utterances_per_session: usize) -> Self {
        SynthOptions {
            seed,
            n_clients,
            sessions_per_client,
            utterances_per_session,
            disclosure_effect: 0.0,
            constant_rapport: false,
        }
    }
}

pub fn synth_corpus(
    seed: u64,
    n_clients: usize,
    sessions_per_client: usize,
    utterances_per_session: usize,
) -> Corpus {
    synth_corpus_with(&SynthOptions::new(
        seed,
        n_clients,
        sessions_per_client,
        utterances_per_session,
    ))
}

const FILLERS: &[&str] = &["Okay.", "Mm-hmm.", "Go on.", "I see."];

const EMPATHY_WEAK: &[&str] = &[
    "I understand how you feel.",
    "That sounds tough.",
    "So you felt left out. That sounds tough.",
    "You're saying it hurt. I understand how you feel.",
];

const EMPATHY_STRONG: &[&str] = &[
    "It sounds like you've been carrying a lot. This must be terrifying, and I feel really sad for you.",
    "It sounds like that week was brutal. This must be exhausting for you.",
    "What I'm hearing is that nobody noticed. I feel really sad for you, I understand how you feel.",
];

const QUESTION_WEAK: &[&str] = &["What happened?", "Can you tell me more?", "How did that go?"];

const QUESTION_STRONG: &[&str] = &["Are you feeling alone?", "Do you feel abandoned by them?"];

const DISCLOSE_G: &[&str] = &[
    "The weather has been nice lately.",
    "Traffic was bad on the way here.",
    "The café downstairs changed its menu — again.",
    "The news said \"storms\" all week.",
    "Someone wrote C:\\temp on the whiteboard.",
];

const DISCLOSE_M: &[&str] = &[
    "I started a new job last week.",
    "My sister is visiting next month.",
    "I'm planning to take a pottery class.",
    "We moved to a smaller apartment in June.",
];

const DISCLOSE_H: &[&str] = &[
    "I've never told anyone this, but I hurt myself when things get bad.",
    "I feel ashamed of how I treat my partner.",
    "My marriage is falling apart and I can't stop thinking about it.",
];

const SELF_DIRECTED: &[&str] = &["sad", "scared", "anxious", "hopeless"];
const OUTWARD: &[&str] = &["angry", "disgusted", "full of contempt"];

const RAPPORT_POS: &[&str] = &[
    "Thank you, that helps.",
    "I trust you with this.",
    "I'm glad I came today.",
];
const RAPPORT_NEG: &[&str] = &["I don't think this is helping.", "This feels like a waste of time."];

pub fn synth_corpus_with(opts: &SynthOptions) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut sessions = Vec::with_capacity(opts.n_clients * opts.sessions_per_client);
    for c in 0..opts.n_clients {
        let client_id = format!("client{:03}", c + 1);
        for s in 0..opts.sessions_per_client {
            let session_id = format!("{client_id}-s{:03}", s + 1);
            let rapport: f64 = StandardNormal.sample(&mut rng);
            let mut utterances = Vec::with_capacity(opts.utterances_per_session);
            let mut last_therapist = (0u8, 0u8);
            for index in 0..opts.utterances_per_session {
                let (speaker, text) = if index % 2 == 0 {
                    let (text, emp, expl) = therapist_turn(&mut rng);
                    last_therapist = (emp, expl);
                    (Speaker::Therapist, text)
                } else {
                    let text = client_turn(&mut rng, opts, last_therapist, rapport);
                    (Speaker::Client, text)
                };
                utterances.push(Utterance {
                    session_id: session_id.clone(),
                    index,
                    speaker,
                    text,
                });
            }
            sessions.push(Session {
                session_id,
                client_id: client_id.clone(),
                session_order: (s + 1) as u32,
                utterances,
            });
        }
    }
    Corpus::from_sessions(sessions).expect("generator emits valid sessions")
}

fn pick<'a>(rng: &mut ChaCha8Rng, bank: &[&'a str]) -> &'a str {
    bank.choose(rng).copied().expect("non-empty bank")
}

fn therapist_turn(rng: &mut ChaCha8Rng) -> (String, u8, u8) {
    let emp = weighted_level(rng, [0.4, 0.35, 0.25]);
    let expl = weighted_level(rng, [0.45, 0.35, 0.2]);
    let mut parts = Vec::new();
    match emp {
        1 => parts.push(pick(rng, EMPATHY_WEAK)),
        2 => parts.push(pick(rng, EMPATHY_STRONG)),
        _ => {}
    }
    match expl {
        1 => parts.push(pick(rng, QUESTION_WEAK)),
        2 => parts.push(pick(rng, QUESTION_STRONG)),
        _ => {}
    }
    if parts.is_empty() {
        parts.push(pick(rng, FILLERS));
    }
    (parts.join(" "), emp, expl)
}

fn weighted_level(rng: &mut ChaCha8Rng, probs: [f64; 3]) -> u8 {
    let u: f64 = rng.random();
    if u < probs[0] {
        0
    } else if u < probs[0] + probs[1] {
        1
    } else {
        2
    }
}

fn client_turn(rng: &mut ChaCha8Rng, opts: &SynthOptions, therapist: (u8, u8), rapport: f64) -> String {
    let mut parts: Vec<String> = Vec::new();

    // Therapist levels are 0..=2 each; centre their sum around zero.
    let push = f64::from(therapist.0) + f64::from(therapist.1) - 1.65;
    let noise: f64 = StandardNormal.sample(rng);
    let z = opts.disclosure_effect * push + noise;
    let bank = if z < -0.45 {
        DISCLOSE_G
    } else if z < 0.55 {
        DISCLOSE_M
    } else {
        DISCLOSE_H
    };
    parts.push(pick(rng, bank).to_string());

    if rng.random_bool(0.65) {
        parts.push(emotion_phrase(rng));
    }

    if !opts.constant_rapport {
        let p_pos = (0.15 + 0.1 * rapport).clamp(0.01, 0.6);
        let p_neg = (0.15 - 0.1 * rapport).clamp(0.01, 0.6);
        if rng.random_bool(p_pos) {
            parts.push(pick(rng, RAPPORT_POS).to_string());
        } else if rng.random_bool(p_neg) {
            parts.push(pick(rng, RAPPORT_NEG).to_string());
        }
    }
    parts.join(" ")
}

fn emotion_phrase(rng: &mut ChaCha8Rng) -> String {
    let u: f64 = rng.random();
    let intens = if rng.random_bool(0.4) { "really " } else { "" };
    if u < 0.4 {
        format!("Lately I feel {intens}{}.", word_list(rng, SELF_DIRECTED))
    } else if u < 0.7 {
        format!("Honestly I'm {intens}{} about how he acted.", word_list(rng, OUTWARD))
    } else if u < 0.85 {
        let w = if rng.random_bool(0.5) { "surprised" } else { "caught off guard, it was unexpected" };
        format!("I was {intens}{w}.")
    } else {
        format!("I {intens}enjoyed the weekend, it was fun.")
    }
}

// Each word kept with probability 0.7, at least one kept.
fn word_list(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    let mut kept: Vec<&str> = words.iter().copied().filter(|_| rng.random_bool(0.7)).collect();
    if kept.is_empty() {
        kept.push(pick(rng, words));
    }
    match kept.len() {
        1 => kept[0].to_string(),
        n => format!("{} and {}", kept[..n - 1].join(", "), kept[n - 1]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, serialize_corpus};

    fn bytes(c: &Corpus) -> Vec<u8> {
        let mut out = Vec::new();
        serialize_corpus(c, &mut out).unwrap();
        out
    }

    #[test]
    fn deterministic_for_seed() {
        assert_eq!(bytes(&synth_corpus(1, 2, 2, 12)), bytes(&synth_corpus(1, 2, 2, 12)));
        assert_ne!(bytes(&synth_corpus(1, 2, 2, 12)), bytes(&synth_corpus(2, 2, 2, 12)));
    }

    #[test]
    fn counts() {
        let c = synth_corpus(7, 2, 3, 20);
        assert_eq!(c.sessions().len(), 6);
        assert_eq!(c.n_utterances(), 120);
        assert_eq!(c.sessions()[0].utterances[0].speaker, Speaker::Therapist);
        assert_eq!(c.sessions()[0].utterances[1].speaker, Speaker::Client);
    }

    #[test]
    fn round_trips_through_jsonl() {
        let c = synth_corpus(3, 1, 3, 40);
        let parsed = parse_corpus(bytes(&c).as_slice()).unwrap();
        assert_eq!(parsed, c);
        for (a, b) in parsed.sessions().iter().zip(c.sessions()) {
            assert_eq!(a.utterances.len(), b.utterances.len());
        }
    }
}
