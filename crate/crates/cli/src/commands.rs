use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use alliance_core::analysis::{analyze as run_analysis, AnalysisError, AnalysisOptions};
use alliance_core::backend::{Backend, CachedBackend, Counting, HttpBackend, HttpConfig, MockBackend, PerMinuteBudget, ResponseCache};
use alliance_core::constructs::ConstructId;
use alliance_core::corpus::{parse_corpus, serialize_corpus, synth_corpus_with, Corpus, SynthOptions};
use alliance_core::pipeline::{score_corpus, FailureStage, PipelineError, ScoreStore, FAILURES_FILE, META_FILE, SCORES_FILE};
use alliance_core::reliability::{
    read_annotations, stratified_sample, synth_annotations as simulate_annotations, validate as run_validate, write_annotations,
};
use anyhow::{anyhow, Context};
use serde_json::json;

use crate::config::{BackendConfig, RunConfig, API_KEY_ENV};
use crate::manifest::Manifest;
use crate::{input, internal, AnalyzeArgs, BackendKind, CliError, IngestArgs, ReportArgs, ScoreArgs, SynthAnnotationsArgs, SynthCorpusArgs, ValidateArgs};

pub const CORPUS_COPY: &str = "corpus.jsonl";

type CmdResult = Result<(), CliError>;

fn read_corpus(path: &Path) -> Result<Corpus, CliError> {
    let f = File::open(path).with_context(|| format!("cannot open corpus {}", path.display())).map_err(input)?;
    parse_corpus(BufReader::new(f))
        .with_context(|| format!("corpus {}", path.display()))
        .map_err(input)
}

fn load_store(dir: &Path) -> Result<ScoreStore, CliError> {
    ScoreStore::load(dir)
        .with_context(|| format!("cannot load scores from {}", dir.display()))
        .map_err(input)
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(internal)?;
    }
    std::fs::write(path, bytes)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(internal)
}

fn sibling_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Manifest entry for a file, keyed by its name so manifests do not depend
/// on where the run happened.
fn add_input(m: &mut Manifest, path: &Path) -> CmdResult {
    m.input(path).map_err(internal)?;
    if let Some(last) = m.inputs.last_mut() {
        last.path = file_name(path);
    }
    Ok(())
}

fn counts_text(corpus: &Corpus) -> String {
    let (clients, therapists) = corpus.speaker_counts();
    let scorable = corpus.sessions().iter().filter(|s| s.is_scorable()).count();
    format!(
        "{} sessions, {} utterances\n{} clients\nspeakers: {} client, {} therapist\n{} sessions with rapport segments\n",
        corpus.sessions().len(),
        corpus.n_utterances(),
        corpus.n_clients(),
        clients,
        therapists,
        scorable
    )
}

pub fn ingest(args: &IngestArgs) -> CmdResult {
    let corpus = read_corpus(&args.corpus)?;
    let text = counts_text(&corpus);
    print!("{text}");
    if let Some(out) = &args.out {
        write_file(&out.join("ingest.txt"), text.as_bytes())?;
        let mut m = Manifest::new("ingest", json!({}), None);
        add_input(&mut m, &args.corpus)?;
        m.outputs(out, &["ingest.txt".into()]).map_err(internal)?;
        m.write(out).map_err(internal)?;
    }
    Ok(())
}

pub fn synth_corpus(args: &SynthCorpusArgs) -> CmdResult {
    if args.clients == 0 || args.sessions == 0 || args.utterances == 0 {
        return Err(input(anyhow!("clients, sessions and utterances must be >= 1")));
    }
    let opts = SynthOptions {
        disclosure_effect: args.disclosure_effect,
        constant_rapport: args.constant_rapport,
        ..SynthOptions::new(args.seed, args.clients, args.sessions, args.utterances)
    };
    let corpus = synth_corpus_with(&opts);
    let mut bytes = Vec::new();
    serialize_corpus(&corpus, &mut bytes).map_err(internal)?;
    write_file(&args.out, &bytes)?;
    let config = json!({
        "clients": args.clients,
        "sessions": args.sessions,
        "utterances": args.utterances,
        "disclosure_effect": args.disclosure_effect,
        "constant_rapport": args.constant_rapport,
    });
    let mut m = Manifest::new("synth corpus", config, Some(args.seed));
    add_input_output(&mut m, &args.out)?;
    write_file(&sibling_manifest(&args.out), m.to_json().as_bytes())?;
    print!("{}", counts_text(&corpus));
    Ok(())
}

fn add_input_output(m: &mut Manifest, out: &Path) -> CmdResult {
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    m.outputs(dir, &[file_name(out)]).map_err(internal)
}

pub fn synth_annotations(args: &SynthAnnotationsArgs) -> CmdResult {
    if args.raters < 2 {
        return Err(input(anyhow!("at least 2 raters are required")));
    }
    let store = load_store(&args.scores)?;
    let targets = match args.per_stratum {
        None => None,
        Some(k) => {
            let mut all = Vec::new();
            for c in ConstructId::ALL {
                if store.count(c) == 0 {
                    continue;
                }
                let picked = stratified_sample(&store, c, k, args.seed)
                    .with_context(|| format!("sampling {}", c.as_str()))
                    .map_err(input)?;
                all.extend(picked.into_iter().map(|s| s.target));
            }
            all.sort();
            all.dedup();
            Some(all)
        }
    };
    let records = simulate_annotations(&store, targets.as_deref(), args.raters, args.noise_sd, args.seed);
    let mut bytes = Vec::new();
    write_annotations(&records, &mut bytes).map_err(internal)?;
    write_file(&args.out, &bytes)?;
    let config = json!({
        "raters": args.raters,
        "noise_sd": args.noise_sd,
        "per_stratum": args.per_stratum,
    });
    let mut m = Manifest::new("synth annotations", config, Some(args.seed));
    add_input(&mut m, &args.scores.join(SCORES_FILE))?;
    add_input_output(&mut m, &args.out)?;
    write_file(&sibling_manifest(&args.out), m.to_json().as_bytes())?;
    println!("{} annotation records", records.len());
    Ok(())
}

fn resolve_config(args: &ScoreArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).map_err(input)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &args.corpus {
        cfg.corpus = Some(v.clone());
    }
    if let Some(v) = &args.out {
        cfg.output_dir = Some(v.clone());
    }
    match args.backend {
        Some(BackendKind::Mock) => cfg.backend = BackendConfig::Mock,
        Some(BackendKind::Http) if !matches!(cfg.backend, BackendConfig::Http { .. }) => {
            let d = HttpConfig::default();
            cfg.backend = BackendConfig::Http {
                base_url: d.base_url,
                timeout_secs: d.timeout_secs,
                max_tokens: d.max_tokens,
                tokens_per_minute: None,
                retry: d.retry,
            };
        }
        _ => {}
    }
    if let Some(url) = &args.base_url {
        match &mut cfg.backend {
            BackendConfig::Http { base_url, .. } => *base_url = url.clone(),
            BackendConfig::Mock => return Err(input(anyhow!("--base-url requires the http backend"))),
        }
    }
    if let Some(v) = &args.model {
        cfg.model_name = v.clone();
    }
    if let Some(v) = args.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = args.completions {
        cfg.completions = v;
    }
    if let Some(v) = args.parallelism {
        cfg.parallelism = v;
    }
    if let Some(v) = &args.constructs {
        cfg.constructs = v.clone();
    }
    if let Some(v) = &args.cache {
        cfg.cache = Some(v.clone());
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(input)?;
    Ok(cfg)
}

fn make_backend(cfg: &BackendConfig) -> Result<Box<dyn Backend>, CliError> {
    match cfg {
        BackendConfig::Mock => Ok(Box::new(MockBackend)),
        BackendConfig::Http {
            base_url,
            timeout_secs,
            max_tokens,
            tokens_per_minute,
            retry,
        } => {
            if base_url.starts_with("https://") && !cfg!(feature = "tls") {
                return Err(input(anyhow!(
                    "{base_url} needs TLS; rebuild with `--features tls` or use an http:// endpoint"
                )));
            }
            let key = std::env::var(API_KEY_ENV)
                .ok()
                .filter(|k| !k.trim().is_empty())
                .ok_or_else(|| input(anyhow!("the http backend needs an API key in {API_KEY_ENV}")))?;
            let http = HttpBackend::new(
                HttpConfig {
                    base_url: base_url.clone(),
                    timeout_secs: *timeout_secs,
                    retry: retry.clone(),
                    max_tokens: *max_tokens,
                },
                Some(key),
            )
            .map_err(|e| CliError::Backend(e.into()))?;
            Ok(match tokens_per_minute {
                Some(tpm) => Box::new(http.with_budget(Box::new(PerMinuteBudget::new(*tpm)))),
                None => Box::new(http),
            })
        }
    }
}

pub fn score(args: &ScoreArgs) -> CmdResult {
    let cfg = resolve_config(args)?;
    let corpus_path = cfg.corpus.clone().expect("validated");
    let out = cfg.output_dir.clone().expect("validated");
    let corpus = read_corpus(&corpus_path)?;
    let counting = Counting::new(make_backend(&cfg.backend)?);
    let cache = match &cfg.cache {
        Some(p) => Some(
            ResponseCache::open(p)
                .with_context(|| format!("cannot open cache {}", p.display()))
                .map_err(input)?,
        ),
        None => None,
    };
    let backend: Box<dyn Backend + '_> = match cache {
        Some(c) => {
            if c.skipped_lines() > 0 {
                log::warn!("cache: skipped {} unreadable lines", c.skipped_lines());
            }
            Box::new(CachedBackend::new(&counting, c))
        }
        None => Box::new(&counting),
    };
    let store = score_corpus(&corpus, backend.as_ref(), &cfg.score_config()).map_err(|e| match e {
        PipelineError::InvalidConfig(_) => input(e),
        other => internal(other),
    })?;
    store.save(&out).map_err(internal)?;
    let mut copy = Vec::new();
    serialize_corpus(&corpus, &mut copy).map_err(internal)?;
    write_file(&out.join(CORPUS_COPY), &copy)?;

    let mut m = Manifest::new("score", serde_json::to_value(&cfg).map_err(internal)?, Some(cfg.seed));
    add_input(&mut m, &corpus_path)?;
    let outputs: Vec<String> = [SCORES_FILE, META_FILE, FAILURES_FILE, CORPUS_COPY].map(String::from).to_vec();
    m.outputs(&out, &outputs).map_err(internal)?;
    m.write(&out).map_err(internal)?;

    let failures = store.failures();
    let backend_failures = failures.iter().filter(|f| f.stage == FailureStage::Backend).count();
    println!("scored {} items, {} failures ({} backend)", store.len(), failures.len(), backend_failures);
    for c in &cfg.constructs {
        println!("  {}: {}", c.as_str(), store.count(*c));
    }
    println!("backend calls: {}", counting.calls());
    if backend_failures > 0 {
        let first = failures.iter().find(|f| f.stage == FailureStage::Backend).expect("counted");
        return Err(CliError::Backend(anyhow!(
            "{backend_failures} items failed at the backend; first: {} {}: {}",
            first.target,
            first.construct.as_str(),
            first.message
        )));
    }
    Ok(())
}

pub fn validate(args: &ValidateArgs) -> CmdResult {
    let store = load_store(&args.scores)?;
    let f = File::open(&args.annotations)
        .with_context(|| format!("cannot open annotations {}", args.annotations.display()))
        .map_err(input)?;
    let records = read_annotations(BufReader::new(f))
        .with_context(|| format!("annotations {}", args.annotations.display()))
        .map_err(input)?;
    let report = run_validate(&store, &records).map_err(input)?;
    let text = report.to_text();
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(internal)?;
    write_file(&args.out.join("reliability.txt"), text.as_bytes())?;
    write_file(&args.out.join("reliability.csv"), &csv)?;
    let mut m = Manifest::new("validate", json!({}), None);
    add_input(&mut m, &args.scores.join(SCORES_FILE))?;
    add_input(&mut m, &args.annotations)?;
    m.outputs(&args.out, &["reliability.csv".into(), "reliability.txt".into()])
        .map_err(internal)?;
    m.write(&args.out).map_err(internal)?;
    print!("{text}");
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs) -> CmdResult {
    let store = load_store(&args.scores)?;
    let corpus_path = args.corpus.clone().unwrap_or_else(|| args.scores.join(CORPUS_COPY));
    let corpus = read_corpus(&corpus_path)?;
    let options = AnalysisOptions {
        rapport_rule: args.rapport_rule.into(),
        emotion_components: args.emotion_components,
        empathy_components: args.empathy_components,
        alpha: args.alpha,
    };
    let analysis = run_analysis(&store, &corpus, &options).map_err(|e| match e {
        AnalysisError::Io(_) => internal(e),
        other => input(other),
    })?;
    let names = analysis.write_bundle(&args.out).map_err(internal)?;
    let mut m = Manifest::new("analyze", serde_json::to_value(options).map_err(internal)?, None);
    add_input(&mut m, &args.scores.join(SCORES_FILE))?;
    add_input(&mut m, &args.scores.join(META_FILE))?;
    add_input(&mut m, &corpus_path)?;
    m.outputs(&args.out, &names).map_err(internal)?;
    m.write(&args.out).map_err(internal)?;
    println!(
        "{} rows ({} in path model), wrote {} files to {}",
        analysis.rows.len(),
        analysis.model_rows,
        names.len() + 1,
        args.out.display()
    );
    match (&analysis.hypotheses, &analysis.fit) {
        (Some(h), _) => print!("{}", h.to_text()),
        (None, Err(e)) => println!("path model not estimated: {e}"),
        (None, Ok(_)) => {}
    }
    Ok(())
}

fn report_text(store: &ScoreStore) -> String {
    let meta = &store.meta;
    let mut out = format!(
        "backend {}, model {}, temperature {}, {} completions\n",
        meta.backend_id, meta.model_name, meta.temperature, meta.completions
    );
    for c in &meta.constructs {
        let failed = store.failures().iter().filter(|f| f.construct == *c).count();
        out.push_str(&format!("  {:<20}{:>8} scored{:>8} failed\n", c.as_str(), store.count(*c), failed));
    }
    for stage in [FailureStage::Window, FailureStage::Render, FailureStage::Backend, FailureStage::Parse] {
        let n = store.failures().iter().filter(|f| f.stage == stage).count();
        if n > 0 {
            out.push_str(&format!("  failures at {stage:?} stage: {n}\n"));
        }
    }
    out
}

pub fn report(args: &ReportArgs) -> CmdResult {
    let store = load_store(&args.scores)?;
    let text = report_text(&store);
    print!("{text}");
    if let Some(out) = &args.out {
        write_file(&out.join("report.txt"), text.as_bytes())?;
        let mut m = Manifest::new("report", json!({}), None);
        add_input(&mut m, &args.scores.join(SCORES_FILE))?;
        m.outputs(out, &["report.txt".into()]).map_err(internal)?;
        m.write(out).map_err(internal)?;
    }
    Ok(())
}
