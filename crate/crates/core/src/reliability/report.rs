use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{f1_binary, icc_2k, pearson, IccResult, RatingMatrix, ReliabilityError};
use crate::constructs::ConstructId;
use crate::pipeline::{ScoreStore, TargetId};

/// One human rating in long format.
///
/// CSV columns: `target_id,construct,dimension,rater_id,value`. Values are
/// numeric on the construct's scale; self-disclosure also accepts `G`/`M`/`H`
/// and reflection accepts `Reflection`/`Non-Reflection`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub target_id: TargetId,
    pub construct: ConstructId,
    pub dimension: String,
    pub rater_id: String,
    pub value: f64,
}

#[derive(Deserialize)]
struct CsvRow {
    target_id: String,
    construct: String,
    dimension: String,
    rater_id: String,
    value: String,
}

fn parse_value(construct: ConstructId, raw: &str) -> Option<f64> {
    let t = raw.trim();
    if let Ok(v) = t.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    match (construct, t.to_ascii_lowercase().as_str()) {
        (ConstructId::SelfDisclosure, "g") => Some(1.0),
        (ConstructId::SelfDisclosure, "m") => Some(2.0),
        (ConstructId::SelfDisclosure, "h") => Some(3.0),
        (ConstructId::EmpathyReflection, "reflection") => Some(1.0),
        (ConstructId::EmpathyReflection, "non-reflection") => Some(0.0),
        _ => None,
    }
}

pub fn read_annotations<R: Read>(source: R) -> Result<Vec<AnnotationRecord>, ReliabilityError> {
    let mut reader = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        let line = i + 2;
        let bad = |msg: String| ReliabilityError::Annotation { line, message: msg };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let target_id: TargetId = row.target_id.parse().map_err(bad)?;
        let construct: ConstructId = row
            .construct
            .parse()
            .map_err(|_| bad(format!("unknown construct {:?}", row.construct)))?;
        let scale = construct.entry().scale;
        if !scale.dimensions.contains(&row.dimension.as_str()) {
            return Err(bad(format!("{construct} has no dimension {:?}", row.dimension)));
        }
        let value = parse_value(construct, &row.value)
            .ok_or_else(|| bad(format!("unreadable value {:?}", row.value)))?;
        if value < scale.min || value > scale.max {
            return Err(bad(format!("value {value} outside {}..={}", scale.min, scale.max)));
        }
        let key = (target_id.clone(), construct, row.dimension.clone(), row.rater_id.clone());
        if !seen.insert(key) {
            return Err(bad("duplicate rating for target, dimension and rater".into()));
        }
        out.push(AnnotationRecord {
            target_id,
            construct,
            dimension: row.dimension,
            rater_id: row.rater_id,
            value,
        });
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(records: &[AnnotationRecord], out: W) -> Result<(), ReliabilityError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["target_id", "construct", "dimension", "rater_id", "value"])?;
    for r in records {
        w.write_record([
            r.target_id.to_string(),
            r.construct.to_string(),
            r.dimension.clone(),
            r.rater_id.clone(),
            r.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Simulated human raters: each rating is the model aggregate plus Gaussian
/// noise, rounded and clamped to the scale. `noise_sd = 0` reproduces the
/// rounded model scores for every rater.
pub fn synth_annotations(
    store: &ScoreStore,
    targets: Option<&[TargetId]>,
    raters: usize,
    noise_sd: f64,
    seed: u64,
) -> Vec<AnnotationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sd.max(0.0)).expect("finite sd");
    let keep: Option<BTreeSet<&TargetId>> = targets.map(|t| t.iter().collect());
    let mut out = Vec::new();
    for score in store.scores() {
        if keep.as_ref().is_some_and(|k| !k.contains(&score.target)) {
            continue;
        }
        let scale = score.construct.entry().scale;
        for (d, dim) in scale.dimensions.iter().enumerate() {
            for r in 0..raters {
                let v = (score.values[d] + normal.sample(&mut rng)).round().clamp(scale.min, scale.max);
                out.push(AnnotationRecord {
                    target_id: score.target.clone(),
                    construct: score.construct,
                    dimension: dim.to_string(),
                    rater_id: format!("rater{}", r + 1),
                    value: v,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub construct: ConstructId,
    pub dimension: String,
    /// Targets with every human rating and a model score.
    pub n: usize,
    /// Human raters.
    pub k: usize,
    pub human_human: Option<IccResult>,
    /// Model aggregate as one more rater next to the humans.
    pub llm_human: Option<IccResult>,
    /// Model aggregate against the human mean.
    pub pearson_r: Option<f64>,
    pub f1: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub rows: Vec<ReportRow>,
}

pub fn validate(store: &ScoreStore, annotations: &[AnnotationRecord]) -> Result<ReliabilityReport, ReliabilityError> {
    if annotations.is_empty() {
        return Err(ReliabilityError::Annotation {
            line: 0,
            message: "no annotations".into(),
        });
    }
    type Cell = BTreeMap<TargetId, BTreeMap<String, f64>>;
    let mut grouped: BTreeMap<(ConstructId, usize), Cell> = BTreeMap::new();
    for a in annotations {
        let d = a
            .construct
            .dimensions()
            .iter()
            .position(|x| *x == a.dimension)
            .expect("checked on read");
        grouped
            .entry((a.construct, d))
            .or_default()
            .entry(a.target_id.clone())
            .or_default()
            .insert(a.rater_id.clone(), a.value);
    }
    let mut rows = Vec::new();
    for ((construct, d), by_target) in grouped {
        let raters: BTreeSet<&String> = by_target.values().flat_map(|m| m.keys()).collect();
        let k = raters.len();
        let mut notes = Vec::new();
        let mut human = Vec::new();
        let mut llm = Vec::new();
        let mut dropped = 0;
        for (target, ratings) in &by_target {
            let Some(score) = store.get(target, construct) else {
                dropped += 1;
                continue;
            };
            if ratings.len() != k {
                dropped += 1;
                continue;
            }
            human.push(raters.iter().map(|r| ratings[*r]).collect::<Vec<f64>>());
            llm.push(score.values[d]);
        }
        if dropped > 0 {
            notes.push(format!("{dropped} target(s) lacked a model score or a rating"));
        }
        let mut note_err = |what: &str, e: ReliabilityError| notes.push(format!("{what}: {e}"));
        let human_human = if k < 2 {
            note_err("human-human ICC", ReliabilityError::TooSmall { n: human.len(), k });
            None
        } else {
            match RatingMatrix::from_rows(&human).and_then(|m| icc_2k(&m)) {
                Ok(r) => Some(r),
                Err(e) => {
                    note_err("human-human ICC", e);
                    None
                }
            }
        };
        let with_llm: Vec<Vec<f64>> = human
            .iter()
            .zip(&llm)
            .map(|(h, l)| h.iter().copied().chain([*l]).collect())
            .collect();
        let llm_human = match RatingMatrix::from_rows(&with_llm).and_then(|m| icc_2k(&m)) {
            Ok(r) => Some(r),
            Err(e) => {
                note_err("LLM-human ICC", e);
                None
            }
        };
        let human_mean: Vec<f64> = human.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
        let pearson_r = match pearson(&llm, &human_mean) {
            Ok(r) => Some(r),
            Err(e) => {
                note_err("Pearson r", e);
                None
            }
        };
        let f1 = if construct == ConstructId::EmpathyReflection && !human.is_empty() {
            // Majority of humans, ties to Non-Reflection.
            let gold: Vec<bool> = human_mean.iter().map(|m| *m > 0.5).collect();
            let pred: Vec<bool> = llm.iter().map(|v| *v > 0.5).collect();
            f1_binary(&gold, &pred, &true).ok()
        } else {
            None
        };
        rows.push(ReportRow {
            construct,
            dimension: construct.dimensions()[d].to_string(),
            n: human.len(),
            k,
            human_human,
            llm_human,
            pearson_r,
            f1,
            notes,
        });
    }
    Ok(ReliabilityReport { rows })
}

fn fmt_icc(r: &Option<IccResult>, digits: usize) -> String {
    match r {
        None => "n/a".into(),
        Some(r) => match r.ci95 {
            Some([lo, hi]) => format!("{:.d$} [{:.2}, {:.2}]", r.icc, lo, hi, d = digits),
            None => format!("{:.d$} [n/a]", r.icc, d = digits),
        },
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.digits$}"))
}

impl ReliabilityReport {
    pub fn to_text(&self) -> String {
        let header = ["Construct", "Dimension", "n", "k", "Human-Human ICC(2,k)", "LLM-Human ICC(2,k)", "LLM-Human r", "F1"];
        let body: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.construct.to_string(),
                    r.dimension.clone(),
                    r.n.to_string(),
                    r.k.to_string(),
                    fmt_icc(&r.human_human, 3),
                    fmt_icc(&r.llm_human, 3),
                    opt(r.pearson_r, 3),
                    opt(r.f1, 3),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let joined: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", joined.join("  ").trim_end());
        };
        line(header.to_vec(), &mut out);
        line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect(), &mut out);
        for row in &body {
            line(row.iter().map(String::as_str).collect(), &mut out);
        }
        for r in &self.rows {
            for n in &r.notes {
                let _ = writeln!(out, "note: {} {}: {}", r.construct, r.dimension, n);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReliabilityError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "construct", "dimension", "n", "k", "hh_icc", "hh_ci_lo", "hh_ci_hi", "llm_icc", "llm_ci_lo",
            "llm_ci_hi", "pearson_r", "f1",
        ])?;
        let num = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        for r in &self.rows {
            let icc_cells = |x: &Option<IccResult>| {
                [
                    num(x.map(|i| i.icc)),
                    num(x.and_then(|i| i.ci95).map(|c| c[0])),
                    num(x.and_then(|i| i.ci95).map(|c| c[1])),
                ]
            };
            let mut rec = vec![r.construct.to_string(), r.dimension.clone(), r.n.to_string(), r.k.to_string()];
            rec.extend(icc_cells(&r.human_human));
            rec.extend(icc_cells(&r.llm_human));
            rec.push(num(r.pearson_r));
            rec.push(num(r.f1));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
