//! End-to-end analysis of a scored corpus: composites, correlation, path
//! model, hypothesis verdicts and the rapport trend, rendered as a bundle of
//! deterministic text and CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constructs::EMOTION_DIMS;
use crate::corpus::Corpus;
use crate::pipeline::{
    build_analysis_rows, session_rapport, write_rows_csv, AnalysisRow, Coverage, PipelineError, RowOptions,
    ScoreStore, SessionRapportRule,
};
use crate::stats::{
    component_scores, correlation_matrix, fit_path_model, hypothesis_report, pca, scree, DataMatrix,
    HypothesisReport, PathModelFit, PathModelSpec, PcaResult, StatsError, DEFAULT_ALPHA,
};

pub const EMPATHY_ITEMS: [&str; 4] = ["er", "ip", "ex", "reflection"];
const SELF_DIRECTED_ITEMS: [&str; 4] = ["sadness", "fear", "anxiety", "depression"];
const OUTWARD_ITEMS: [&str; 3] = ["anger", "contempt", "disgust"];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no analysis rows: {0}")]
    NoRows(String),
    #[error("invalid analysis options: {0}")]
    InvalidOptions(String),
    #[error("{context}: {source}")]
    Stats {
        context: &'static str,
        #[source]
        source: StatsError,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn stats_err(context: &'static str) -> impl FnOnce(StatsError) -> AnalysisError {
    move |source| AnalysisError::Stats { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub rapport_rule: SessionRapportRule,
    pub emotion_components: usize,
    pub empathy_components: usize,
    pub alpha: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            rapport_rule: SessionRapportRule::Mean,
            emotion_components: 3,
            empathy_components: 2,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(3..=EMOTION_DIMS.len()).contains(&self.emotion_components) {
            return Err(AnalysisError::InvalidOptions(format!(
                "emotion_components must be in 3..={}",
                EMOTION_DIMS.len()
            )));
        }
        if !(2..=EMPATHY_ITEMS.len()).contains(&self.empathy_components) {
            return Err(AnalysisError::InvalidOptions("empathy_components must be in 2..=4".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AnalysisError::InvalidOptions("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A PCA solution with content labels and an orientation per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledPca {
    pub pca: PcaResult,
    pub labels: Vec<String>,
    /// +1 or -1, applied to loadings and scores so the label's defining
    /// items load positively.
    pub orientation: Vec<f64>,
}

impl LabelledPca {
    fn oriented_loadings(&self) -> Vec<Vec<f64>> {
        self.pca
            .loadings
            .iter()
            .zip(&self.orientation)
            .map(|(l, s)| l.iter().map(|v| v * s).collect())
            .collect()
    }

    pub fn component(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub session_order: u32,
    pub n_sessions: usize,
    pub mean_rapport: f64,
    pub sd_rapport: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub options: AnalysisOptions,
    pub rows: Vec<AnalysisRow>,
    pub coverage: Coverage,
    pub emotion: LabelledPca,
    pub emotion_two: PcaResult,
    pub empathy: LabelledPca,
    pub emotion_correlation: Vec<Vec<f64>>,
    /// Oriented composite scores per row, keyed by label.
    pub composites: BTreeMap<String, Vec<f64>>,
    pub model_rows: usize,
    pub fit: Result<PathModelFit, String>,
    pub hypotheses: Option<HypothesisReport>,
    pub trend: Vec<TrendPoint>,
}

fn content(loadings: &[f64], names: &[String], items: &[&str], reversed: &[&str]) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for (v, n) in loadings.iter().zip(names) {
        if items.contains(&n.as_str()) {
            total += v;
            count += 1.0;
        } else if reversed.contains(&n.as_str()) {
            total -= v;
            count += 1.0;
        }
    }
    if count > 0.0 {
        total / count
    } else {
        0.0
    }
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn argmax_by<F: Fn(usize) -> f64>(candidates: &[usize], f: F) -> usize {
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if f(c) > f(best) {
            best = c;
        }
    }
    best
}

/// Surprise is the component loading most on surprise; of the rest, the
/// pair maximizing self-directed plus outward-directed content is assigned.
fn label_emotion(result: PcaResult) -> LabelledPca {
    let k = result.n_components();
    let names = result.variables.clone();
    let surprise_idx = names.iter().position(|n| n == "surprise").expect("surprise column");
    let mut labels: Vec<String> = (0..k).map(|c| format!("pc{}", c + 1)).collect();
    let mut orientation = vec![1.0; k];
    let all: Vec<usize> = (0..k).collect();
    let s = argmax_by(&all, |c| result.loadings[c][surprise_idx].abs());
    labels[s] = "surprise".into();
    orientation[s] = sign(result.loadings[s][surprise_idx]);

    let self_content = |c: usize| content(&result.loadings[c], &names, &SELF_DIRECTED_ITEMS, &["enjoyment"]);
    let out_content = |c: usize| content(&result.loadings[c], &names, &OUTWARD_ITEMS, &[]);
    let rest: Vec<usize> = all.iter().copied().filter(|&c| c != s).collect();
    let mut best: Option<(f64, usize, usize)> = None;
    for &a in &rest {
        for &b in &rest {
            if a == b {
                continue;
            }
            let score = self_content(a).abs() + out_content(b).abs();
            if best.is_none_or(|(v, _, _)| score > v) {
                best = Some((score, a, b));
            }
        }
    }
    let (_, a, b) = best.expect("at least three components");
    labels[a] = "self_directed".into();
    orientation[a] = sign(self_content(a));
    labels[b] = "outward_directed".into();
    orientation[b] = sign(out_content(b));
    LabelledPca {
        pca: result,
        labels,
        orientation,
    }
}

/// Exploration is the component loading most on `ex`; empathy is the
/// remaining component with the largest mean loading on er, ip, reflection.
fn label_empathy(result: PcaResult) -> LabelledPca {
    let k = result.n_components();
    let names = result.variables.clone();
    let ex = names.iter().position(|n| n == "ex").expect("ex column");
    let mut labels: Vec<String> = (0..k).map(|c| format!("pc{}", c + 1)).collect();
    let mut orientation = vec![1.0; k];
    let all: Vec<usize> = (0..k).collect();
    let x = argmax_by(&all, |c| result.loadings[c][ex].abs());
    labels[x] = "exploration".into();
    orientation[x] = sign(result.loadings[x][ex]);
    let emp_content = |c: usize| content(&result.loadings[c], &names, &["er", "ip", "reflection"], &[]);
    let rest: Vec<usize> = all.iter().copied().filter(|&c| c != x).collect();
    let e = argmax_by(&rest, |c| emp_content(c).abs());
    labels[e] = "empathy".into();
    orientation[e] = sign(emp_content(e));
    LabelledPca {
        pca: result,
        labels,
        orientation,
    }
}

fn emotion_matrix(rows: &[AnalysisRow]) -> DataMatrix {
    let columns = (0..EMOTION_DIMS.len()).map(|j| rows.iter().map(|r| r.emotions[j]).collect()).collect();
    DataMatrix::new(EMOTION_DIMS.iter().map(|s| s.to_string()).collect(), columns).expect("equal lengths")
}

fn empathy_matrix(rows: &[AnalysisRow]) -> DataMatrix {
    let columns = vec![
        rows.iter().map(|r| r.er).collect(),
        rows.iter().map(|r| r.ip).collect(),
        rows.iter().map(|r| r.ex).collect(),
        rows.iter().map(|r| r.reflection).collect(),
    ];
    DataMatrix::new(EMPATHY_ITEMS.iter().map(|s| s.to_string()).collect(), columns).expect("equal lengths")
}

fn oriented_scores(l: &LabelledPca, m: &DataMatrix) -> Result<Vec<Vec<f64>>, StatsError> {
    let raw = component_scores(&l.pca, m)?;
    Ok(raw
        .into_iter()
        .zip(&l.orientation)
        .map(|(c, s)| c.into_iter().map(|v| v * s).collect())
        .collect())
}

pub fn rapport_trend(store: &ScoreStore, corpus: &Corpus, rule: SessionRapportRule) -> Vec<TrendPoint> {
    let mut by_order: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in corpus.sessions() {
        if let Ok(v) = session_rapport(store, &s.session_id, rule) {
            by_order.entry(s.session_order).or_default().push(v);
        }
    }
    by_order
        .into_iter()
        .map(|(session_order, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let sd = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt());
            TrendPoint {
                session_order,
                n_sessions: n,
                mean_rapport: mean,
                sd_rapport: sd,
            }
        })
        .collect()
}

pub fn analyze(store: &ScoreStore, corpus: &Corpus, options: &AnalysisOptions) -> Result<Analysis, AnalysisError> {
    options.validate()?;
    let (rows, coverage) = build_analysis_rows(
        store,
        corpus,
        RowOptions {
            rapport_rule: options.rapport_rule,
        },
    );
    if rows.is_empty() {
        return Err(AnalysisError::NoRows(format!(
            "{} client utterances, {} without a prior therapist turn, {} missing scores",
            coverage.client_utterances, coverage.no_prior_therapist, coverage.missing_scores
        )));
    }
    let em = emotion_matrix(&rows);
    let emp = empathy_matrix(&rows);
    let emotion = label_emotion(pca(&em, options.emotion_components).map_err(stats_err("emotion PCA"))?);
    let emotion_two = pca(&em, 2).map_err(stats_err("two-component emotion PCA"))?;
    let empathy = label_empathy(pca(&emp, options.empathy_components).map_err(stats_err("empathy PCA"))?);
    let corr = correlation_matrix(&em).map_err(stats_err("emotion correlation"))?;
    let emotion_correlation = (0..corr.nrows()).map(|i| corr.row(i).iter().copied().collect()).collect();

    let mut composites = BTreeMap::new();
    for (l, m) in [(&emotion, &em), (&empathy, &emp)] {
        let scores = oriented_scores(l, m).map_err(stats_err("component scores"))?;
        for (label, s) in l.labels.iter().zip(scores) {
            composites.insert(label.clone(), s);
        }
    }

    let keep: Vec<bool> = rows.iter().map(|r| r.rapport_prev.is_some()).collect();
    let model_rows = keep.iter().filter(|k| **k).count();
    let spec = PathModelSpec::default();
    let fit = model_data(&rows, &composites, &keep)
        .and_then(|(data, clusters)| fit_path_model(&data, &clusters, &spec))
        .map_err(|e| e.to_string());
    let hypotheses = match &fit {
        Ok(f) => Some(hypothesis_report(f, options.alpha).map_err(stats_err("hypotheses"))?),
        Err(_) => None,
    };
    let trend = rapport_trend(store, corpus, options.rapport_rule);
    Ok(Analysis {
        options: *options,
        rows,
        coverage,
        emotion,
        emotion_two,
        empathy,
        emotion_correlation,
        composites,
        model_rows,
        fit,
        hypotheses,
        trend,
    })
}

fn model_data(
    rows: &[AnalysisRow],
    composites: &BTreeMap<String, Vec<f64>>,
    keep: &[bool],
) -> Result<(DataMatrix, Vec<String>), StatsError> {
    let mut names = Vec::new();
    let mut columns = Vec::new();
    names.push("log_session".to_string());
    columns.push(rows.iter().map(|r| r.log_session).collect());
    names.push("rapport_prev".to_string());
    columns.push(rows.iter().map(|r| r.rapport_prev.unwrap_or(f64::NAN)).collect());
    for label in ["exploration", "empathy", "self_directed", "outward_directed", "surprise"] {
        names.push(label.to_string());
        columns.push(composites[label].clone());
    }
    names.push("disclosure".to_string());
    columns.push(rows.iter().map(|r| r.disclosure).collect());
    let data = DataMatrix::new(names, columns)?.filter_rows(keep);
    if data.n_rows() == 0 {
        return Err(StatsError::TooFewRows("no rows with a previous-session rapport".into()));
    }
    let clusters = rows
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|(r, _)| r.session_id.clone())
        .collect();
    Ok((data, clusters))
}

fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn pval(p: f64) -> String {
    format!("{p:.6e}")
}

fn loadings_csv(names: &[String], labels: &[String], loadings: &[Vec<f64>]) -> String {
    let mut out = String::from("variable");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (j, n) in names.iter().enumerate() {
        out.push_str(n);
        for l in loadings {
            out.push(',');
            out.push_str(&num(l[j]));
        }
        out.push('\n');
    }
    out
}

fn scree_csv(p: &PcaResult) -> String {
    let mut out = String::from("component,eigenvalue,variance_explained,cumulative\n");
    for s in scree(p) {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.component,
            num(s.eigenvalue),
            num(s.variance_explained),
            num(s.cumulative)
        );
    }
    out
}

impl Analysis {
    /// File name to contents, in name order.
    pub fn bundle(&self) -> Result<BTreeMap<String, Vec<u8>>, AnalysisError> {
        let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let mut rows_csv = Vec::new();
        write_rows_csv(&self.rows, &mut rows_csv)?;
        files.insert("analysis_rows.csv".into(), rows_csv);

        let mut comp = String::from("session_id,utterance_index");
        let labels: Vec<&String> = self.composites.keys().collect();
        for l in &labels {
            comp.push(',');
            comp.push_str(l);
        }
        comp.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(comp, "{},{}", r.session_id, r.utterance_index);
            for l in &labels {
                comp.push(',');
                comp.push_str(&num(self.composites[*l][i]));
            }
            comp.push('\n');
        }
        files.insert("composites.csv".into(), comp.into_bytes());

        let e = &self.emotion;
        files.insert(
            "pca_emotion_loadings.csv".into(),
            loadings_csv(&e.pca.variables, &e.labels, &e.oriented_loadings()).into_bytes(),
        );
        let two_labels: Vec<String> = (1..=2).map(|c| format!("pc{c}")).collect();
        files.insert(
            "pca_emotion_2c_loadings.csv".into(),
            loadings_csv(&self.emotion_two.variables, &two_labels, &self.emotion_two.loadings).into_bytes(),
        );
        let p = &self.empathy;
        files.insert(
            "pca_empathy_loadings.csv".into(),
            loadings_csv(&p.pca.variables, &p.labels, &p.oriented_loadings()).into_bytes(),
        );
        files.insert("scree_emotion.csv".into(), scree_csv(&e.pca).into_bytes());
        files.insert("scree_empathy.csv".into(), scree_csv(&p.pca).into_bytes());

        let names: Vec<String> = EMOTION_DIMS.iter().map(|s| s.to_string()).collect();
        files.insert(
            "emotion_correlation.csv".into(),
            loadings_csv(&names, &names, &self.emotion_correlation).into_bytes(),
        );

        let mut trend = String::from("session_order,n_sessions,mean_rapport,sd_rapport\n");
        for t in &self.trend {
            let _ = writeln!(
                trend,
                "{},{},{},{}",
                t.session_order,
                t.n_sessions,
                num(t.mean_rapport),
                t.sd_rapport.map(num).unwrap_or_default()
            );
        }
        files.insert("rapport_trend.csv".into(), trend.into_bytes());

        let (path_csv, path_txt) = self.path_tables();
        files.insert("path_model.csv".into(), path_csv.into_bytes());
        files.insert("path_model.txt".into(), path_txt.into_bytes());
        let hyp = match &self.hypotheses {
            Some(h) => h.to_text(),
            None => format!(
                "Hypothesis verdicts unavailable: path model not estimated ({})\n",
                self.fit.as_ref().err().map(String::as_str).unwrap_or("unknown")
            ),
        };
        files.insert("hypotheses.txt".into(), hyp.into_bytes());
        if let Some(h) = &self.hypotheses {
            files.insert("hypotheses.json".into(), pretty_json(h));
        }
        files.insert("summary.json".into(), pretty_json(&self.summary()));
        Ok(files)
    }

    fn path_tables(&self) -> (String, String) {
        let mut csv = String::from("outcome,predictor,estimate,se,z,p,ci_lo,ci_hi\n");
        let fit = match &self.fit {
            Ok(f) => f,
            Err(e) => return (csv, format!("Path model not estimated: {e}\n")),
        };
        for p in &fit.paths {
            let ci = p.ci95();
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                p.outcome,
                p.predictor,
                num(p.estimate),
                num(p.se),
                num(p.z),
                pval(p.p),
                num(ci[0]),
                num(ci[1])
            );
        }
        let mut txt = format!(
            "Standardized path coefficients, CR1 standard errors clustered by session\nn = {}, clusters = {}\n\n",
            fit.n, fit.n_clusters
        );
        let width = 22;
        let _ = write!(txt, "{:<14}", "Predictor");
        for o in &fit.spec.outcomes {
            let _ = write!(txt, "{o:>width$}");
        }
        txt.push('\n');
        for x in &fit.spec.predictors {
            let _ = write!(txt, "{x:<14}");
            for o in &fit.spec.outcomes {
                let cell = fit
                    .path(o, x)
                    .map(|p| format!("{:.3} ({:.3}) {:.3}", p.estimate, p.se, p.p))
                    .unwrap_or_default();
                let _ = write!(txt, "{cell:>width$}");
            }
            txt.push('\n');
        }
        txt.push_str("\nCells: estimate (SE) p\n\nR-squared\n");
        for (o, r2) in fit.spec.outcomes.iter().zip(&fit.r_squared) {
            let _ = writeln!(txt, "  {o:<18}{r2:.4}");
        }
        txt.push_str("\nResidual correlations\n");
        for (o, row) in fit.spec.outcomes.iter().zip(&fit.residual_correlation) {
            let _ = write!(txt, "  {o:<18}");
            for v in row {
                let _ = write!(txt, "{v:>9.4}");
            }
            txt.push('\n');
        }
        (csv, txt)
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "options": self.options,
            "coverage": self.coverage,
            "rows": self.rows.len(),
            "model_rows": self.model_rows,
            "emotion_labels": self.emotion.labels,
            "empathy_labels": self.empathy.labels,
            "emotion_variance_explained": self.emotion.pca.cumulative_variance.iter().map(|v| num(*v)).collect::<Vec<_>>(),
            "empathy_variance_explained": self.empathy.pca.cumulative_variance.iter().map(|v| num(*v)).collect::<Vec<_>>(),
            "path_model": match &self.fit {
                Ok(f) => serde_json::json!({"n": f.n, "clusters": f.n_clusters}),
                Err(e) => serde_json::json!({"error": e}),
            },
        })
    }

    pub fn write_bundle(&self, dir: &Path) -> Result<Vec<String>, AnalysisError> {
        std::fs::create_dir_all(dir)?;
        let files = self.bundle()?;
        for (name, bytes) in &files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(files.into_keys().collect())
    }
}

fn pretty_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}
