//! Score extraction from free-text completions, and multi-completion
//! aggregation.
//!
//! Extraction is tolerant: field names match case-insensitively at the start
//! of a line (after bullets, numbering or markdown emphasis), values may sit
//! in brackets, and for numeric fields the first matching line wins. Label
//! fields are checked for conflicts instead.

use std::fmt;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constructs::{ConstructId, EMOTION_DIMS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty response")]
    Empty,
    #[error("missing field {0:?}")]
    MissingField(String),
    #[error("field {field:?} out of range: {value}")]
    OutOfRange { field: String, value: i64 },
    #[error("conflicting labels in field {field:?}: {found}")]
    AmbiguousLabel { field: String, found: String },
    #[error("cannot aggregate: {0}")]
    Aggregate(String),
}

macro_rules! bounded {
    ($name:ident, $lo:expr, $hi:expr) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "u8", into = "u8")]
        pub struct $name(u8);

        impl $name {
            pub const MIN: u8 = $lo;
            pub const MAX: u8 = $hi;

            pub fn new(value: u8) -> Option<Self> {
                ($lo..=$hi).contains(&value).then_some($name(value))
            }

            pub fn get(self) -> u8 {
                self.0
            }
        }

        impl TryFrom<u8> for $name {
            type Error = String;
            fn try_from(v: u8) -> Result<Self, String> {
                $name::new(v).ok_or_else(|| format!("{} outside {}..={}", v, $lo, $hi))
            }
        }

        impl From<$name> for u8 {
            fn from(v: $name) -> u8 {
                v.0
            }
        }

        impl From<$name> for f64 {
            fn from(v: $name) -> f64 {
                f64::from(v.0)
            }
        }
    };
}

bounded!(Mechanism, 0, 2);
bounded!(Likert5, 1, 5);
bounded!(Likert7, 1, 7);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReflectionLabel {
    Reflection,
    NonReflection,
}

impl fmt::Display for ReflectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReflectionLabel::Reflection => "Reflection",
            ReflectionLabel::NonReflection => "Non-Reflection",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DisclosureLevel {
    G,
    M,
    H,
}

impl DisclosureLevel {
    /// Equal-spaced ordinal coding G=1, M=2, H=3.
    pub fn score(self) -> f64 {
        match self {
            DisclosureLevel::G => 1.0,
            DisclosureLevel::M => 2.0,
            DisclosureLevel::H => 3.0,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            DisclosureLevel::G => "G",
            DisclosureLevel::M => "M",
            DisclosureLevel::H => "H",
        }
    }
}

/// One parsed completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawScore {
    Epitome {
        emotional_reactions: Mechanism,
        interpretations: Mechanism,
        explorations: Mechanism,
        explanation: String,
    },
    Reflection {
        label: ReflectionLabel,
        reasoning: String,
    },
    Disclosure {
        level: DisclosureLevel,
        reasoning: String,
    },
    Emotion {
        /// In [`EMOTION_DIMS`] order.
        ratings: [Likert5; 9],
        rationale: String,
    },
    Rapport {
        liking: Likert7,
        confidence: Likert7,
        appreciation: Likert7,
        trust: Likert7,
        overall: Likert7,
        rationale: String,
    },
}

impl RawScore {
    pub fn construct(&self) -> ConstructId {
        match self {
            RawScore::Epitome { .. } => ConstructId::EmpathyEpitome,
            RawScore::Reflection { .. } => ConstructId::EmpathyReflection,
            RawScore::Disclosure { .. } => ConstructId::SelfDisclosure,
            RawScore::Emotion { .. } => ConstructId::Emotion,
            RawScore::Rapport { .. } => ConstructId::Rapport,
        }
    }

    /// Numeric values in the construct's dimension order.
    pub fn values(&self) -> Vec<f64> {
        match self {
            RawScore::Epitome {
                emotional_reactions,
                interpretations,
                explorations,
                ..
            } => vec![
                (*emotional_reactions).into(),
                (*interpretations).into(),
                (*explorations).into(),
            ],
            RawScore::Reflection { label, .. } => {
                vec![if *label == ReflectionLabel::Reflection { 1.0 } else { 0.0 }]
            }
            RawScore::Disclosure { level, .. } => vec![level.score()],
            RawScore::Emotion { ratings, .. } => ratings.iter().map(|&r| r.into()).collect(),
            RawScore::Rapport {
                liking,
                confidence,
                appreciation,
                trust,
                overall,
                ..
            } => vec![
                (*liking).into(),
                (*confidence).into(),
                (*appreciation).into(),
                (*trust).into(),
                (*overall).into(),
            ],
        }
    }
}

const EMOTION_NAMES: [&str; 9] = [
    "Anger",
    "Contempt",
    "Disgust",
    "Enjoyment",
    "Fear",
    "Sadness",
    "Surprise",
    "Anxiety",
    "Depression",
];

/// Canonical rendering in the output layout the prompts ask for.
pub fn format_raw(raw: &RawScore) -> String {
    match raw {
        RawScore::Epitome {
            emotional_reactions,
            interpretations,
            explorations,
            explanation,
        } => format!(
            "- Explanation (<= 70 words): {explanation}\n- Emotional Reactions: {}\n- Interpretations: {}\n- Explorations: {}",
            emotional_reactions.get(),
            interpretations.get(),
            explorations.get()
        ),
        RawScore::Reflection { label, reasoning } => {
            format!("Reasoning (<= 70 words): {reasoning}\nLabel: {label}")
        }
        RawScore::Disclosure { level, reasoning } => {
            format!("Reasoning (<= 50 words): {reasoning}\nLabel: {}", level.letter())
        }
        RawScore::Emotion { ratings, rationale } => {
            let mut s = format!("Rationale: {rationale}\n");
            for (name, r) in EMOTION_NAMES.iter().zip(ratings) {
                s.push_str(&format!("{name}: {}\n", r.get()));
            }
            s.pop();
            s
        }
        RawScore::Rapport {
            liking,
            confidence,
            appreciation,
            trust,
            overall,
            rationale,
        } => format!(
            "Rationale: {rationale}\nMutual liking: {}\nConfidence: {}\nAppreciation: {}\nMutual trust: {}\nOverall bond rating: {}",
            liking.get(),
            confidence.get(),
            appreciation.get(),
            trust.get(),
            overall.get()
        ),
    }
}

// Leading bullets, numbering and markdown emphasis before a field name.
const LEAD: &str = r"^[\s>*_#-]*(?:\d+\s*[.):]\s*)?[\s*_]*";

fn field_regex(names: &str) -> Regex {
    Regex::new(&format!(r"(?im){LEAD}(?:{names})\b(?P<rest>[^\n]*)$")).expect("static regex")
}

static FRACTION: Lazy<Regex> = Lazy::new(|| Regex::new(r"(-?\d+)\s*/\s*(?:5|7|10)\b").unwrap());
static AFTER_SEP: Lazy<Regex> = Lazy::new(|| Regex::new(r"^[^:=\n]*[:=][^\d\n-]*(-?\d+)").unwrap());
static AFTER_DASH: Lazy<Regex> = Lazy::new(|| Regex::new(r"^[^\d\n]*?[-–—]\s*[^\d\n]*?(\d+)").unwrap());

static EXPLANATION: Lazy<Regex> =
    Lazy::new(|| field_regex(r"explanation|reasoning|rationale|justification"));
static LABEL: Lazy<Regex> = Lazy::new(|| field_regex(r"label|classification"));

/// Returns the integer rating on the first line starting with one of `names`
/// that carries a number.
fn find_rating(text: &str, names: &Regex, field: &str) -> Result<i64, ParseError> {
    for c in names.captures_iter(text) {
        let rest = c.name("rest").map_or("", |m| m.as_str());
        let cap = FRACTION
            .captures(rest)
            .or_else(|| AFTER_SEP.captures(rest))
            .or_else(|| AFTER_DASH.captures(rest));
        if let Some(c) = cap {
            return c[1]
                .parse::<i64>()
                .map_err(|_| ParseError::MissingField(field.to_string()));
        }
    }
    Err(ParseError::MissingField(field.to_string()))
}

fn bounded_field<T>(
    text: &str,
    names: &Regex,
    field: &str,
    make: impl Fn(u8) -> Option<T>,
) -> Result<T, ParseError> {
    let v = find_rating(text, names, field)?;
    u8::try_from(v)
        .ok()
        .and_then(&make)
        .ok_or(ParseError::OutOfRange {
            field: field.to_string(),
            value: v,
        })
}

fn free_text(text: &str) -> String {
    EXPLANATION
        .captures(text)
        .and_then(|c| {
            let rest = c.name("rest")?.as_str();
            rest.find(':').map(|i| rest[i + 1..].trim().to_string())
        })
        .unwrap_or_default()
}

/// Text of every `Label:` field. An empty label line takes the next
/// non-empty line.
fn label_values(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for c in LABEL.captures_iter(text) {
        let Some(rest) = c.name("rest") else { continue };
        let line = rest.as_str();
        let value = match line.find(':') {
            Some(i) => line[i + 1..].trim(),
            None => continue,
        };
        if value.is_empty() {
            let next = text[rest.end()..].lines().map(str::trim).find(|l| !l.is_empty());
            if let Some(n) = next {
                out.push(n.to_string());
            }
        } else {
            out.push(value.to_string());
        }
    }
    out
}

fn normalize_label(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
}

fn reflection_labels_in(value: &str) -> Vec<ReflectionLabel> {
    // Collapse "non-reflection", "non reflection", "non_reflection".
    let lowered = value.to_lowercase();
    let squashed: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace("non reflection", "nonreflection");
    let mut found = Vec::new();
    for word in squashed.split(' ') {
        match word {
            "nonreflection" => found.push(ReflectionLabel::NonReflection),
            "reflection" => found.push(ReflectionLabel::Reflection),
            _ => {}
        }
    }
    found
}

static GMH: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)\b(g|m|h|general|medium|high)\b").unwrap());

fn disclosure_levels_in(value: &str) -> Vec<DisclosureLevel> {
    let norm = normalize_label(value);
    GMH.captures_iter(&norm)
        .map(|c| match &c[1] {
            "g" | "general" => DisclosureLevel::G,
            "m" | "medium" => DisclosureLevel::M,
            _ => DisclosureLevel::H,
        })
        .collect()
}

fn single_label<T: Copy + PartialEq + fmt::Debug>(
    field: &str,
    values: &[String],
    extract: impl Fn(&str) -> Vec<T>,
) -> Result<T, ParseError> {
    let mut found: Vec<T> = Vec::new();
    for v in values {
        for l in extract(v) {
            if !found.contains(&l) {
                found.push(l);
            }
        }
    }
    match found.as_slice() {
        [] => Err(ParseError::MissingField(field.to_string())),
        [one] => Ok(*one),
        many => Err(ParseError::AmbiguousLabel {
            field: field.to_string(),
            found: format!("{many:?}"),
        }),
    }
}

static ER: Lazy<Regex> = Lazy::new(|| field_regex(r"emotional\s+reactions?"));
static IP: Lazy<Regex> = Lazy::new(|| field_regex(r"interpretations?"));
static EX: Lazy<Regex> = Lazy::new(|| field_regex(r"explorations?"));

static EMOTION_FIELDS: Lazy<Vec<Regex>> = Lazy::new(|| {
    EMOTION_NAMES
        .iter()
        .map(|n| field_regex(&regex::escape(n)))
        .collect()
});

static LIKING: Lazy<Regex> =
    Lazy::new(|| field_regex(r"(?:mutual\s+)?liking|aspect\s*1|item\s*1"));
static CONFIDENCE: Lazy<Regex> = Lazy::new(|| field_regex(r"confidence|aspect\s*2|item\s*2"));
static APPRECIATION: Lazy<Regex> = Lazy::new(|| field_regex(r"appreciation|aspect\s*3|item\s*3"));
static TRUST: Lazy<Regex> =
    Lazy::new(|| field_regex(r"(?:mutual\s+)?trust|aspect\s*4|item\s*4"));
static OVERALL: Lazy<Regex> = Lazy::new(|| field_regex(r"overall(?:\s+bond)?(?:\s+rating)?"));

/// Extracts a [`RawScore`] for `construct` from a completion.
pub fn parse_response(construct: ConstructId, text: &str) -> Result<RawScore, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    match construct {
        ConstructId::EmpathyEpitome => Ok(RawScore::Epitome {
            emotional_reactions: bounded_field(text, &ER, "Emotional Reactions", Mechanism::new)?,
            interpretations: bounded_field(text, &IP, "Interpretations", Mechanism::new)?,
            explorations: bounded_field(text, &EX, "Explorations", Mechanism::new)?,
            explanation: free_text(text),
        }),
        ConstructId::EmpathyReflection => Ok(RawScore::Reflection {
            label: single_label("Label", &label_values(text), reflection_labels_in)?,
            reasoning: free_text(text),
        }),
        ConstructId::SelfDisclosure => Ok(RawScore::Disclosure {
            level: single_label("Label", &label_values(text), disclosure_levels_in)?,
            reasoning: free_text(text),
        }),
        ConstructId::Emotion => {
            let mut ratings = [Likert5(1); 9];
            for (i, re) in EMOTION_FIELDS.iter().enumerate() {
                ratings[i] = bounded_field(text, re, EMOTION_NAMES[i], Likert5::new)?;
            }
            Ok(RawScore::Emotion {
                ratings,
                rationale: free_text(text),
            })
        }
        ConstructId::Rapport => Ok(RawScore::Rapport {
            liking: bounded_field(text, &LIKING, "Mutual liking", Likert7::new)?,
            confidence: bounded_field(text, &CONFIDENCE, "Confidence", Likert7::new)?,
            appreciation: bounded_field(text, &APPRECIATION, "Appreciation", Likert7::new)?,
            trust: bounded_field(text, &TRUST, "Mutual trust", Likert7::new)?,
            overall: bounded_field(text, &OVERALL, "Overall", Likert7::new)?,
            rationale: free_text(text),
        }),
    }
}

/// Per-dimension aggregate over completions.
///
/// Ordinal and Likert dimensions average; Reflection becomes the fraction of
/// completions labelled Reflection; Disclosure averages the G=1/M=2/H=3 coding.
pub fn aggregate(raws: &[RawScore]) -> Result<Vec<f64>, ParseError> {
    let first = raws
        .first()
        .ok_or_else(|| ParseError::Aggregate("no completions".into()))?;
    let construct = first.construct();
    if let Some(other) = raws.iter().find(|r| r.construct() != construct) {
        return Err(ParseError::Aggregate(format!(
            "mixed constructs {construct} and {}",
            other.construct()
        )));
    }
    let dims = construct.dimensions().len();
    let mut sums = vec![0.0; dims];
    for r in raws {
        for (s, v) in sums.iter_mut().zip(r.values()) {
            *s += v;
        }
    }
    let n = raws.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Majority Reflection label; ties go to Non-Reflection.
pub fn majority_reflection(raws: &[RawScore]) -> Option<ReflectionLabel> {
    let mut yes = 0usize;
    let mut total = 0usize;
    for r in raws {
        if let RawScore::Reflection { label, .. } = r {
            total += 1;
            if *label == ReflectionLabel::Reflection {
                yes += 1;
            }
        }
    }
    (total > 0).then(|| {
        if 2 * yes > total {
            ReflectionLabel::Reflection
        } else {
            ReflectionLabel::NonReflection
        }
    })
}

/// Most frequent disclosure level; ties resolve to the lower level.
pub fn majority_disclosure(raws: &[RawScore]) -> Option<DisclosureLevel> {
    let mut counts = [0usize; 3];
    for r in raws {
        if let RawScore::Disclosure { level, .. } = r {
            counts[*level as usize] += 1;
        }
    }
    let best = counts.iter().copied().max()?;
    if best == 0 {
        return None;
    }
    let idx = counts.iter().position(|&c| c == best)?;
    Some([DisclosureLevel::G, DisclosureLevel::M, DisclosureLevel::H][idx])
}

pub fn emotion_index(name: &str) -> Option<usize> {
    EMOTION_DIMS.iter().position(|d| *d == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reflection_label() {
        let r = parse_response(ConstructId::EmpathyReflection, "Label: Reflection").unwrap();
        assert!(matches!(r, RawScore::Reflection { label: ReflectionLabel::Reflection, .. }));
        let r = parse_response(
            ConstructId::EmpathyReflection,
            "Reasoning (<= 70 words): no restatement.\nLabel: [Non-Reflection]",
        )
        .unwrap();
        assert!(matches!(r, RawScore::Reflection { label: ReflectionLabel::NonReflection, .. }));
    }

    #[test]
    fn epitome_canonical() {
        let r = parse_response(
            ConstructId::EmpathyEpitome,
            "Emotional Reactions: 2\nInterpretations: 1\nExplorations: 0",
        )
        .unwrap();
        assert_eq!(r.values(), vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn emotion_all_ones_with_scale_text() {
        let text: String = EMOTION_NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{}. {n}: 1 - Very slightly or not at all\n", i + 1))
            .collect();
        let r = parse_response(ConstructId::Emotion, &text).unwrap();
        assert_eq!(r.values(), vec![1.0; 9]);
    }

    #[test]
    fn emotion_fraction_variant() {
        let text: String = EMOTION_NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{}. {n} (cues: none) ... {}/5\n", i + 1, i % 5 + 1))
            .collect();
        let r = parse_response(ConstructId::Emotion, &text).unwrap();
        assert_eq!(r.values(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn errors_are_specific() {
        assert_eq!(parse_response(ConstructId::Rapport, "  "), Err(ParseError::Empty));
        assert_eq!(
            parse_response(ConstructId::EmpathyEpitome, "Emotional Reactions: 2\nInterpretations: 1"),
            Err(ParseError::MissingField("Explorations".into()))
        );
        assert_eq!(
            parse_response(
                ConstructId::EmpathyEpitome,
                "Emotional Reactions: 3\nInterpretations: 1\nExplorations: 0"
            ),
            Err(ParseError::OutOfRange { field: "Emotional Reactions".into(), value: 3 })
        );
        assert!(matches!(
            parse_response(ConstructId::EmpathyReflection, "Label: Reflection/Non-Reflection"),
            Err(ParseError::AmbiguousLabel { .. })
        ));
        assert!(matches!(
            parse_response(ConstructId::SelfDisclosure, "Label: G\nLabel: H"),
            Err(ParseError::AmbiguousLabel { .. })
        ));
    }

    #[test]
    fn disclosure_label_on_next_line() {
        let r = parse_response(ConstructId::SelfDisclosure, "Reasoning: job news.\nLabel:\nM (Medium Disclosure)")
            .unwrap();
        assert!(matches!(r, RawScore::Disclosure { level: DisclosureLevel::M, .. }));
    }

    fn epi(a: u8, b: u8, c: u8) -> RawScore {
        RawScore::Epitome {
            emotional_reactions: Mechanism::new(a).unwrap(),
            interpretations: Mechanism::new(b).unwrap(),
            explorations: Mechanism::new(c).unwrap(),
            explanation: String::new(),
        }
    }

    fn refl(yes: bool) -> RawScore {
        RawScore::Reflection {
            label: if yes { ReflectionLabel::Reflection } else { ReflectionLabel::NonReflection },
            reasoning: String::new(),
        }
    }

    fn disc(l: DisclosureLevel) -> RawScore {
        RawScore::Disclosure { level: l, reasoning: String::new() }
    }

    #[test]
    fn aggregate_examples() {
        let e = epi(2, 1, 0);
        assert_eq!(aggregate(&[e.clone(), e.clone(), e]).unwrap(), vec![2.0, 1.0, 0.0]);
        let f = aggregate(&[refl(true), refl(false), refl(true)]).unwrap()[0];
        assert!((f - 2.0 / 3.0).abs() < 1e-9);
        let d = aggregate(&[disc(DisclosureLevel::G), disc(DisclosureLevel::M), disc(DisclosureLevel::H)]).unwrap();
        assert_eq!(d, vec![2.0]);
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[refl(true), disc(DisclosureLevel::G)]).is_err());
    }

    #[test]
    fn disclosure_mapping_all_triples() {
        // Oracle: explicit table lookup, independent of DisclosureLevel::score.
        let levels = [DisclosureLevel::G, DisclosureLevel::M, DisclosureLevel::H];
        let code = |l: DisclosureLevel| match l.letter() {
            "G" => 1.0,
            "M" => 2.0,
            "H" => 3.0,
            _ => unreachable!(),
        };
        for a in levels {
            for b in levels {
                for c in levels {
                    let expected = (code(a) + code(b) + code(c)) / 3.0;
                    let got = aggregate(&[disc(a), disc(b), disc(c)]).unwrap()[0];
                    assert!((got - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn majorities() {
        assert_eq!(majority_reflection(&[refl(true), refl(false), refl(true)]), Some(ReflectionLabel::Reflection));
        assert_eq!(majority_reflection(&[refl(true), refl(false)]), Some(ReflectionLabel::NonReflection));
        assert_eq!(
            majority_disclosure(&[disc(DisclosureLevel::H), disc(DisclosureLevel::M), disc(DisclosureLevel::H)]),
            Some(DisclosureLevel::H)
        );
    }

    fn arb_raw() -> impl Strategy<Value = RawScore> {
        let text = "[a-z ]{0,20}".prop_map(|s| s.trim().to_string());
        prop_oneof![
            (0u8..=2, 0u8..=2, 0u8..=2, text.clone()).prop_map(|(a, b, c, t)| RawScore::Epitome {
                emotional_reactions: Mechanism(a),
                interpretations: Mechanism(b),
                explorations: Mechanism(c),
                explanation: t,
            }),
            (any::<bool>(), text.clone()).prop_map(|(y, t)| RawScore::Reflection {
                label: if y { ReflectionLabel::Reflection } else { ReflectionLabel::NonReflection },
                reasoning: t,
            }),
            (0usize..3, text.clone()).prop_map(|(i, t)| RawScore::Disclosure {
                level: [DisclosureLevel::G, DisclosureLevel::M, DisclosureLevel::H][i],
                reasoning: t,
            }),
            (proptest::array::uniform9(1u8..=5), text.clone()).prop_map(|(r, t)| RawScore::Emotion {
                ratings: r.map(Likert5),
                rationale: t,
            }),
            (proptest::array::uniform5(1u8..=7), text).prop_map(|(r, t)| RawScore::Rapport {
                liking: Likert7(r[0]),
                confidence: Likert7(r[1]),
                appreciation: Likert7(r[2]),
                trust: Likert7(r[3]),
                overall: Likert7(r[4]),
                rationale: t,
            }),
        ]
    }

    proptest! {
        #[test]
        fn parse_inverts_format(raw in arb_raw()) {
            let text = format_raw(&raw);
            let parsed = parse_response(raw.construct(), &text).unwrap();
            prop_assert_eq!(parsed, raw);
        }

        #[test]
        fn aggregate_permutation_invariant_and_bounded(
            ratings in proptest::collection::vec(proptest::array::uniform9(1u8..=5), 1..6),
            seed in any::<u64>(),
        ) {
            let raws: Vec<RawScore> = ratings.iter().map(|r| RawScore::Emotion {
                ratings: r.map(Likert5), rationale: String::new() }).collect();
            let agg = aggregate(&raws).unwrap();
            let mut shuffled = raws.clone();
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let agg2 = aggregate(&shuffled).unwrap();
            for d in 0..9 {
                prop_assert!((agg[d] - agg2[d]).abs() < 1e-12);
                let lo = ratings.iter().map(|r| r[d]).min().unwrap() as f64;
                let hi = ratings.iter().map(|r| r[d]).max().unwrap() as f64;
                prop_assert!(agg[d] >= lo - 1e-12 && agg[d] <= hi + 1e-12);
            }
        }
    }
}
