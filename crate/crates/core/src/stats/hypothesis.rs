use std::fmt;

use serde::{Deserialize, Serialize};

use super::{PathModelFit, StatsError};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Supported,
    PartiallySupported,
    Unsupported,
    Contradicted,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Supported => "supported",
            Verdict::PartiallySupported => "partially supported",
            Verdict::Unsupported => "unsupported",
            Verdict::Contradicted => "contradicted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathVerdict {
    pub outcome: String,
    pub predictor: String,
    pub estimate: f64,
    pub p: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisVerdict {
    pub id: String,
    pub statement: String,
    pub paths: Vec<PathVerdict>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub alpha: f64,
    pub hypotheses: Vec<HypothesisVerdict>,
}

struct Hypothesis {
    id: &'static str,
    statement: &'static str,
    paths: &'static [(&'static str, &'static str)],
}

const HYPOTHESES: [Hypothesis; 4] = [
    Hypothesis {
        id: "H1",
        statement: "therapist empathy and exploration predict client self-disclosure",
        paths: &[("disclosure", "empathy"), ("disclosure", "exploration")],
    },
    Hypothesis {
        id: "H2",
        statement: "prior-session rapport predicts client self-disclosure",
        paths: &[("disclosure", "rapport_prev")],
    },
    Hypothesis {
        id: "H3",
        statement: "therapist empathy predicts client negative emotion",
        paths: &[("self_directed", "empathy"), ("outward_directed", "empathy")],
    },
    Hypothesis {
        id: "H4",
        statement: "prior-session rapport predicts client negative emotion",
        paths: &[("self_directed", "rapport_prev"), ("outward_directed", "rapport_prev")],
    },
];

fn path_verdict(estimate: f64, p: f64, alpha: f64) -> Verdict {
    if p > alpha || estimate == 0.0 {
        Verdict::Unsupported
    } else if estimate > 0.0 {
        Verdict::Supported
    } else {
        Verdict::Contradicted
    }
}

/// All hypothesized directions are positive. A path is significant when
/// p <= alpha.
pub fn hypothesis_report(fit: &PathModelFit, alpha: f64) -> Result<HypothesisReport, StatsError> {
    let mut hypotheses = Vec::with_capacity(HYPOTHESES.len());
    for h in &HYPOTHESES {
        let mut paths = Vec::with_capacity(h.paths.len());
        for (outcome, predictor) in h.paths {
            let est = fit
                .path(outcome, predictor)
                .ok_or_else(|| StatsError::MissingPath(format!("{predictor} -> {outcome}")))?;
            paths.push(PathVerdict {
                outcome: outcome.to_string(),
                predictor: predictor.to_string(),
                estimate: est.estimate,
                p: est.p,
                verdict: path_verdict(est.estimate, est.p, alpha),
            });
        }
        let supported = paths.iter().filter(|p| p.verdict == Verdict::Supported).count();
        let verdict = if paths.iter().any(|p| p.verdict == Verdict::Contradicted) {
            Verdict::Contradicted
        } else if supported == paths.len() {
            Verdict::Supported
        } else if supported > 0 {
            Verdict::PartiallySupported
        } else {
            Verdict::Unsupported
        };
        hypotheses.push(HypothesisVerdict {
            id: h.id.to_string(),
            statement: h.statement.to_string(),
            paths,
            verdict,
        });
    }
    Ok(HypothesisReport { alpha, hypotheses })
}

impl HypothesisReport {
    pub fn verdict(&self, id: &str) -> Option<Verdict> {
        self.hypotheses.iter().find(|h| h.id == id).map(|h| h.verdict)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("Hypothesis verdicts (alpha = {})\n", self.alpha);
        for h in &self.hypotheses {
            out.push_str(&format!("\n{}: {} -- {}\n", h.id, h.statement, h.verdict));
            for p in &h.paths {
                out.push_str(&format!(
                    "  {} -> {}: est {:+.4}, p {:.4} ({})\n",
                    p.predictor, p.outcome, p.estimate, p.p, p.verdict
                ));
            }
        }
        out
    }
}
