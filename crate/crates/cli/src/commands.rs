use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tracing::{info, warn};

use ciem_core::backend::{GenerationParams, Generator, HttpBackend, Lexicon, ResponseCache, StubBackend, TextBackend};
use ciem_core::citgen::{self, ExportFormat, InstructionSample};
use ciem_core::config::RunConfig;
use ciem_core::corpus::{assert_disjoint, load_coco_captions, CaptionMode, CorpusSplit, Split};
use ciem_core::generate::generate_pairs;
use ciem_core::harness::{
    self, resolve_image_ref, EvalItem, EvalOptions, HarnessError, HttpVisionModel, ScriptedModel, VisionModel,
};
use ciem_core::io::{self, sha256_file};
use ciem_core::manifest::{sidecar_path, Manifest};
use ciem_core::promptgen::{Answer, Polarity, PromptKind, QAPair, QuarantineRecord};
use ciem_core::review::{
    error_report, server, Campaign, CampaignFile, RejectReason, ReviewStore, VerdictSubmission,
};
use ciem_core::{MetricsReportF64, TEMPLATE_VERSION};

use crate::args::*;
use crate::error::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

pub struct Ctx {
    pub config: RunConfig,
}

impl Ctx {
    pub fn load(config: Option<&Path>, state_dir: Option<PathBuf>) -> Result<Self> {
        let mut cfg = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(dir) = state_dir {
            cfg.paths.state_dir = dir;
        }
        Ok(Ctx { config: cfg })
    }

    fn state_dir(&self) -> &Path {
        &self.config.paths.state_dir
    }
}

pub async fn run(ctx: &mut Ctx, command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(ctx, a),
        Command::Generate(a) => generate(ctx, a).await,
        Command::Review(ReviewCommand::Serve(a)) => review_serve(ctx, a).await,
        Command::Review(ReviewCommand::Import(a)) => review_import(ctx, a),
        Command::Review(ReviewCommand::Report(a)) => review_report(ctx, a),
        Command::Adjudicate(a) => adjudicate(ctx, a),
        Command::Evaluate(a) => evaluate(ctx, a).await,
        Command::Report(a) => report(ctx, a),
        Command::Cit(CitCommand::Generate(a)) => cit_generate(ctx, a).await,
        Command::Cit(CitCommand::Export(a)) => cit_export(ctx, a),
    }
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<()> {
    ctx.config.validate(&[("captions", &a.captions), ("out", &a.out)])?;
    let corpus = load_coco_captions(&a.captions, a.split)?;
    corpus.write_jsonl(&a.out)?;
    let captions: usize = corpus.records().iter().map(|r| r.captions.len()).sum();
    Manifest::new("ingest")
        .source("captions", corpus.source_digest())
        .count("records", corpus.len() as u64)
        .count("captions", captions as u64)
        .setting("split", a.split.to_string())
        .write_beside(&a.out)?;
    eprintln!(
        "ingest: {} records, {} captions ({} split) -> {}",
        corpus.len(),
        captions,
        a.split,
        a.out.display()
    );
    Ok(())
}

/// Reads `corpus.jsonl` output of `ingest`, or a raw COCO-caption file.
fn load_corpus(path: &Path, split: Split) -> Result<CorpusSplit> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let corpus = CorpusSplit::read_jsonl(path, split)?;
        if corpus.split() != split && !corpus.is_empty() {
            warn!(path = %path.display(), found = %corpus.split(), expected = %split, "corpus split differs from its role");
        }
        Ok(corpus)
    } else {
        Ok(load_coco_captions(path, split)?)
    }
}

fn default_quarantine_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.quarantine.jsonl"))
}

struct Generation {
    generator: Generator,
    params: GenerationParams,
    mode: CaptionMode,
    cache_path: PathBuf,
}

/// Merges backend flags into the configuration and opens the cache.
fn apply_backend_flags(ctx: &mut Ctx, b: &BackendArgs) {
    let cfg = &mut ctx.config;
    if let Some(v) = &b.endpoint {
        cfg.backend.endpoint = Some(v.clone());
    }
    if let Some(v) = &b.model {
        cfg.backend.model_name = Some(v.clone());
    }
    if let Some(v) = b.temperature {
        cfg.backend.temperature = v;
    }
    if let Some(v) = b.max_tokens {
        cfg.backend.max_tokens = v;
    }
    if let Some(v) = b.seed {
        cfg.seeds.generation = v;
    }
    if let Some(v) = b.max_concurrency {
        cfg.backend.max_concurrency = v;
    }
    if let Some(v) = b.requests_per_minute {
        cfg.backend.requests_per_minute = Some(v);
    }
    if let Some(v) = b.max_retries {
        cfg.backend.max_retries = v;
    }
    if let Some(v) = &b.cache {
        cfg.paths.cache = Some(v.clone());
    }
    if let Some(v) = b.caption_mode {
        cfg.caption_mode = v;
    }
}

fn open_generation(ctx: &Ctx, b: &BackendArgs) -> Result<Generation> {
    let cfg = &ctx.config;
    let params = cfg.backend.params(b.backend.id(), cfg.seeds.generation);
    params.validate()?;
    let backend: Arc<dyn TextBackend> = match b.backend {
        BackendKind::Stub => {
            let lexicon = match &b.lexicon {
                Some(p) => Lexicon::load(p)?,
                None => Lexicon::bundled(),
            };
            let stub = StubBackend::new(lexicon).with_delay(Duration::from_millis(b.stub_delay_ms.unwrap_or(0)));
            Arc::new(stub)
        }
        BackendKind::Http => {
            let url = cfg
                .backend
                .endpoint
                .clone()
                .ok_or_else(|| CliError::usage("the http backend needs --endpoint (or backend.endpoint in the config)"))?;
            Arc::new(HttpBackend::from_env(url, cfg.backend.retry_policy(), cfg.backend.timeout())?)
        }
    };
    let cache_path = cfg.paths.cache_path();
    let cache = ResponseCache::open(&cache_path).map_err(|e| CliError::data(e.to_string()))?;
    info!(path = %cache_path.display(), entries = cache.len(), "response cache opened");
    Ok(Generation {
        generator: Generator::new(backend, Arc::new(cache), cfg.backend.limits()),
        params,
        mode: cfg.caption_mode,
        cache_path,
    })
}

fn params_settings(m: Manifest, p: &GenerationParams, mode: CaptionMode) -> Manifest {
    m.setting("backend_id", p.backend_id.clone())
        .setting("model_name", p.model_name.clone())
        .setting("temperature", p.temperature.to_string())
        .setting("max_tokens", p.max_tokens.to_string())
        .setting("caption_mode", format!("{mode:?}").to_lowercase())
}

fn print_backend_summary(stage: &str, g: &Generation) {
    eprintln!(
        "{stage}: backend calls: {}, cache hits: {} (cache {})",
        g.generator.backend_calls(),
        g.generator.cache_hits(),
        g.cache_path.display()
    );
}

async fn generate(ctx: &mut Ctx, a: GenerateArgs) -> Result<()> {
    apply_backend_flags(ctx, &a.backend);
    let quarantine_path = a.quarantine.clone().unwrap_or_else(|| default_quarantine_path(&a.out));
    let (qa_manifest, q_manifest) = (sidecar_path(&a.out), sidecar_path(&quarantine_path));
    ctx.config.validate(&[
        ("corpus", &a.corpus),
        ("out", &a.out),
        ("quarantine", &quarantine_path),
        ("out manifest", &qa_manifest),
        ("quarantine manifest", &q_manifest),
    ])?;
    let mut kinds: Vec<PromptKind> = a
        .kinds
        .iter()
        .map(|k| match k {
            GenKind::Factual => PromptKind::Factual,
            GenKind::Contrastive => PromptKind::Contrastive,
        })
        .collect();
    kinds.dedup();
    let corpus = load_corpus(&a.corpus, Split::Test)?;
    let g = open_generation(ctx, &a.backend)?;
    let result = generate_pairs(&g.generator, &corpus, &kinds, g.mode, &g.params).await;
    print_backend_summary("generate", &g);
    let outcome = result?;

    io::write_jsonl_atomic(&a.out, &outcome.pairs)?;
    io::write_jsonl_atomic(&quarantine_path, &outcome.quarantine)?;
    let factual = outcome
        .pairs
        .iter()
        .filter(|p| p.polarity == Polarity::Factual)
        .count() as u64;
    let kinds_setting = kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",");
    let manifest = params_settings(
        Manifest::new("generate")
            .seed("generation", g.params.seed)
            .source("corpus", corpus.source_digest())
            .count("images", outcome.images as u64)
            .count("requests", outcome.requests as u64)
            .count("pairs", outcome.pairs.len() as u64)
            .count("factual", factual)
            .count("contrastive", outcome.pairs.len() as u64 - factual)
            .count("quarantined", outcome.quarantine.len() as u64),
        &g.params,
        g.mode,
    )
    .setting("kinds", kinds_setting);
    manifest.write_beside(&a.out)?;
    Manifest {
        artifact: "generate quarantine".into(),
        ..manifest
    }
    .write_beside(&quarantine_path)?;
    eprintln!(
        "generate: {} pairs ({} factual, {} contrastive), {} quarantined -> {}",
        outcome.pairs.len(),
        factual,
        outcome.pairs.len() as u64 - factual,
        outcome.quarantine.len(),
        a.out.display()
    );
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
}

/// Loads the state directory's campaign, creating or extending it from
/// flags. `inferred` supplies moderators when neither exists.
fn resolve_campaign(ctx: &Ctx, args: &CampaignArgs, inferred: Option<Vec<String>>) -> Result<CampaignFile> {
    let dir = ctx.state_dir();
    let file = dir.join(CampaignFile::FILE_NAME);
    let qa = args.qa.as_deref().map(absolute).transpose()?;
    let corpus = args.corpus.as_deref().map(absolute).transpose()?;
    let moderators = args.moderators.clone().or(if ctx.config.review.moderators.is_empty() {
        None
    } else {
        Some(ctx.config.review.moderators.clone())
    });
    let mut campaign = if file.exists() {
        let existing = CampaignFile::load(dir)?;
        if let Some(q) = &qa {
            if *q != existing.qa {
                return Err(CliError::data(format!(
                    "campaign in {} reviews {}, not {}",
                    dir.display(),
                    existing.qa.display(),
                    q.display()
                )));
            }
        }
        if let Some(m) = &moderators {
            if *m != existing.moderators {
                return Err(CliError::data(format!(
                    "campaign in {} has moderators {:?}, not {:?}",
                    dir.display(),
                    existing.moderators,
                    m
                )));
            }
        }
        existing
    } else {
        let qa = qa.clone().ok_or_else(|| {
            CliError::usage(format!("no campaign in {}; pass --qa to start one", dir.display()))
        })?;
        let moderators = moderators.or(inferred).ok_or_else(|| {
            CliError::usage("no campaign yet; pass --moderators id,id,id (in round order)")
        })?;
        CampaignFile {
            qa,
            corpus: None,
            moderators,
        }
    };
    if corpus.is_some() {
        campaign.corpus = corpus;
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    campaign.save(dir)?;
    Ok(campaign)
}

fn open_store(ctx: &Ctx, file: &CampaignFile) -> Result<ReviewStore> {
    let pairs: Vec<QAPair> = io::read_jsonl(&file.qa)?;
    let corpus = file
        .corpus
        .as_deref()
        .map(|p| load_corpus(p, Split::Test))
        .transpose()?;
    let campaign = Campaign::new(pairs, file.moderators.clone(), corpus.as_ref())?;
    Ok(ReviewStore::open(campaign, &CampaignFile::verdicts_path(ctx.state_dir()))?)
}

fn existing_store(ctx: &Ctx) -> Result<(CampaignFile, ReviewStore)> {
    let dir = ctx.state_dir();
    if !dir.join(CampaignFile::FILE_NAME).exists() {
        return Err(CliError::data(format!(
            "no review campaign in {}; run `review serve` or `review import` first",
            dir.display()
        )));
    }
    let file = CampaignFile::load(dir)?;
    let store = open_store(ctx, &file)?;
    Ok((file, store))
}

async fn review_serve(ctx: &mut Ctx, a: ServeArgs) -> Result<()> {
    let file = resolve_campaign(ctx, &a.campaign, None)?;
    let store = open_store(ctx, &file)?;
    let pairs = store.campaign().len();
    let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
        .await
        .map_err(|e| CliError::usage(format!("cannot listen on {}:{}: {e}", a.host, a.port)))?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::data(e.to_string()))?;
    eprintln!(
        "review: serving {pairs} pairs for moderators {} on http://{addr}",
        file.moderators.join(", ")
    );
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    server::serve(Arc::new(Mutex::new(store)), listener, shutdown)
        .await
        .map_err(|e| CliError::data(e.to_string()))
}

/// Moderators in round order, when the verdicts name all three rounds
/// consistently.
fn infer_moderators(subs: &[VerdictSubmission]) -> Option<Vec<String>> {
    let mut by_round: BTreeMap<u8, String> = BTreeMap::new();
    for s in subs {
        let round = s.round_index?;
        match by_round.get(&round) {
            Some(m) if *m != s.moderator_id => return None,
            _ => {
                by_round.insert(round, s.moderator_id.clone());
            }
        }
    }
    let rounds: Vec<u8> = by_round.keys().copied().collect();
    (rounds == [1, 2, 3]).then(|| by_round.into_values().collect())
}

fn review_import(ctx: &mut Ctx, a: ImportArgs) -> Result<()> {
    let subs: Vec<VerdictSubmission> = io::read_jsonl(&a.verdicts)?;
    let file = resolve_campaign(ctx, &a.campaign, infer_moderators(&subs))?;
    let mut store = open_store(ctx, &file)?;

    let mut problems = Vec::new();
    let mut already = 0usize;
    let mut fresh = Vec::new();
    let mut in_file: HashMap<(String, String), usize> = HashMap::new();
    for (i, s) in subs.into_iter().enumerate() {
        let line = i + 1;
        if let Some(prev) = in_file.insert((s.qa_id.clone(), s.moderator_id.clone()), line) {
            problems.push(format!(
                "line {line}: second verdict by {} on {} (first on line {prev})",
                s.moderator_id, s.qa_id
            ));
            continue;
        }
        match store.check_submission(&s) {
            Ok(_) => fresh.push(s),
            Err(RejectReason::Duplicate) => already += 1,
            Err(reason) => problems.push(format!(
                "line {line}: verdict by {} on {} rejected: {}",
                s.moderator_id,
                s.qa_id,
                serde_json::to_value(reason).unwrap_or_default().as_str().unwrap_or("rejected")
            )),
        }
    }
    if !problems.is_empty() {
        let shown: Vec<&str> = problems.iter().take(20).map(String::as_str).collect();
        return Err(CliError::data(format!(
            "{} invalid verdict(s) in {}; nothing imported:\n  {}",
            problems.len(),
            a.verdicts.display(),
            shown.join("\n  ")
        )));
    }
    let imported = fresh.len();
    for s in fresh {
        store.submit(s)?;
    }
    let (done, pending) = store.adjudicate_all();
    eprintln!(
        "review import: {imported} verdict(s) imported, {already} already present; {} of {} pairs adjudicated",
        done.len(),
        done.len() + pending.len()
    );
    Ok(())
}

fn review_report(ctx: &Ctx, a: ReviewReportArgs) -> Result<()> {
    ctx.config.validate(&[("out", &a.out)])?;
    let (file, store) = existing_store(ctx)?;
    let (done, pending) = store.adjudicate_all();
    if !pending.is_empty() {
        return Err(CliError::data(format!(
            "{} of {} pairs still need verdicts; report refused",
            pending.len(),
            done.len() + pending.len()
        )));
    }
    let report = error_report(&done);
    io::write_json_atomic(&a.out, &report)?;
    Manifest::new("review report")
        .source("qa", sha256_file(&file.qa)?)
        .source("verdicts", sha256_file(&CampaignFile::verdicts_path(ctx.state_dir()))?)
        .count("pairs", report.total.count)
        .count("errors", report.total.error_count)
        .setting("moderators", file.moderators.join(","))
        .write_beside(&a.out)?;
    for (name, row) in [("factual", &report.factual), ("contrastive", &report.contrastive), ("total", &report.total)] {
        eprintln!(
            "{name:>11}: {:>7} pairs, {:>6} incorrect, error rate {}% ({:.3}%)",
            row.count, row.error_count, row.error_rate_display, row.error_rate
        );
    }
    Ok(())
}

fn adjudicate(ctx: &Ctx, a: AdjudicateArgs) -> Result<()> {
    ctx.config.validate(&[("out", &a.out)])?;
    let (file, store) = existing_store(ctx)?;
    let clean = store.export_clean()?;
    io::write_jsonl_atomic(&a.out, &clean)?;
    let total = store.campaign().len();
    Manifest::new("adjudicate")
        .source("qa", sha256_file(&file.qa)?)
        .source("verdicts", sha256_file(&CampaignFile::verdicts_path(ctx.state_dir()))?)
        .count("pairs", total as u64)
        .count("clean", clean.len() as u64)
        .count("excluded", (total - clean.len()) as u64)
        .setting("moderators", file.moderators.join(","))
        .write_beside(&a.out)?;
    eprintln!(
        "adjudicate: {} of {} pairs kept, {} excluded -> {}",
        clean.len(),
        total,
        total - clean.len(),
        a.out.display()
    );
    Ok(())
}

fn scripted_model(name: &str, pairs: &[QAPair], items: &[EvalItem]) -> Result<Arc<dyn VisionModel>> {
    Ok(match name {
        "always-yes" => Arc::new(ScriptedModel::always_yes()),
        "always-no" => Arc::new(ScriptedModel::always_no()),
        "oracle" => {
            let gold: HashMap<(String, String), Answer> = items
                .iter()
                .zip(pairs)
                .map(|(item, p)| ((item.image_ref.clone(), item.question.clone()), p.gold_answer))
                .collect();
            Arc::new(ScriptedModel::new(move |image_ref: &str, question: &str| {
                match gold.get(&(image_ref.to_string(), question.to_string())) {
                    Some(Answer::Yes) => Ok("Yes.".to_string()),
                    Some(Answer::No) => Ok("No.".to_string()),
                    None => Ok("I cannot tell.".to_string()),
                }
            }))
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown scripted model `stub:{other}` (expected always-yes, always-no or oracle)"
            )))
        }
    })
}

async fn evaluate(ctx: &mut Ctx, a: EvaluateArgs) -> Result<()> {
    if let Some(v) = a.max_concurrency {
        ctx.config.evaluation.max_concurrency = v;
    }
    if let Some(v) = a.requests_per_minute {
        ctx.config.evaluation.requests_per_minute = Some(v);
    }
    if let Some(v) = a.max_failure_pct {
        ctx.config.evaluation.max_failure_pct = v;
    }
    if let Some(v) = &a.model {
        ctx.config.evaluation.model_name = v.clone();
    }
    ctx.config.validate(&[("qa", &a.qa), ("out", &a.out)])?;
    let eval_cfg = ctx.config.evaluation.clone();

    let pairs: Vec<QAPair> = io::read_jsonl(&a.qa)?;
    let corpus_path = match &a.corpus {
        Some(p) => Some(p.clone()),
        None => {
            let dir = ctx.state_dir();
            if dir.join(CampaignFile::FILE_NAME).exists() {
                CampaignFile::load(dir)?.corpus
            } else {
                None
            }
        }
    };
    let file_names: HashMap<u64, String> = match &corpus_path {
        Some(p) => load_corpus(p, Split::Test)?
            .records()
            .iter()
            .map(|r| (r.image_id, r.file_name.clone()))
            .collect(),
        None => HashMap::new(),
    };
    let mut unresolved = HashSet::new();
    let items: Vec<EvalItem> = pairs
        .iter()
        .map(|p| {
            let file_name = file_names.get(&p.image_id).cloned().unwrap_or_else(|| {
                unresolved.insert(p.image_id);
                p.image_id.to_string()
            });
            EvalItem {
                qa_id: p.qa_id.clone(),
                image_ref: resolve_image_ref(&a.images_root, &file_name),
                question: p.question.clone(),
            }
        })
        .collect();
    if !unresolved.is_empty() {
        warn!(
            images = unresolved.len(),
            "no corpus file name for some images; using the image id as the file name"
        );
    }

    let model: Arc<dyn VisionModel> = match a.endpoint.strip_prefix("stub:") {
        Some(name) => scripted_model(name, &pairs, &items)?,
        None => Arc::new(HttpVisionModel::new(
            a.endpoint.clone(),
            eval_cfg.model_name.clone(),
            std::env::var(ciem_core::backend::API_KEY_ENV).ok(),
            ctx.config.backend.retry_policy(),
            Duration::from_secs(eval_cfg.timeout_secs),
        )?),
    };
    let limits = ciem_core::backend::Limits::new(eval_cfg.max_concurrency, eval_cfg.requests_per_minute);
    let options = EvalOptions {
        max_failure_rate: eval_cfg.max_failure_pct / 100.0,
    };
    let (answers, failure) = match harness::evaluate(model, &limits, &items, &options).await {
        Ok(answers) => (answers, None),
        Err(HarnessError::TooManyTransportFailures {
            failed,
            total,
            limit_pct,
            answers,
        }) => {
            let err = HarnessError::TooManyTransportFailures {
                failed,
                total,
                limit_pct,
                answers: Vec::new(),
            };
            (answers, Some(err))
        }
        Err(e) => return Err(e.into()),
    };
    io::write_jsonl_atomic(&a.out, &answers)?;
    let failed = answers.iter().filter(|x| x.is_transport_error()).count();
    let unparseable = answers
        .iter()
        .filter(|x| x.normalized == harness::Label::Unparseable)
        .count();
    Manifest::new("evaluate")
        .source("qa", sha256_file(&a.qa)?)
        .count("answers", answers.len() as u64)
        .count("unparseable", unparseable as u64)
        .count("transport_failures", failed as u64)
        .setting("endpoint", a.endpoint.clone())
        .setting("model_name", eval_cfg.model_name.clone())
        .setting("images_root", a.images_root.clone())
        .write_beside(&a.out)?;
    eprintln!(
        "evaluate: {} answers ({} unparseable, {} transport failures) -> {}",
        answers.len(),
        unparseable,
        failed,
        a.out.display()
    );
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn fmt_metric(m: &ciem_core::Metric<f64>) -> String {
    match m.to_f64() {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "undefined".into(),
    }
}

fn report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    ctx.config.validate(&[("qa", &a.qa), ("answers", &a.answers), ("out", &a.out)])?;
    let pairs: Vec<QAPair> = io::read_jsonl(&a.qa)?;
    let answers: Vec<harness::ModelAnswer> = io::read_jsonl(&a.answers)?;
    let metrics: MetricsReportF64 = harness::score(&pairs, &answers)?;
    io::write_json_atomic(&a.out, &metrics)?;
    Manifest::new("report")
        .source("qa", sha256_file(&a.qa)?)
        .source("answers", sha256_file(&a.answers)?)
        .count("pairs", pairs.len() as u64)
        .count("unparseable", metrics.counts.unparseable())
        .write_beside(&a.out)?;
    eprintln!(
        "report: precision {} recall {} specificity {} f1 {} accuracy {} (percent, n={}) -> {}",
        fmt_metric(&metrics.precision),
        fmt_metric(&metrics.recall),
        fmt_metric(&metrics.specificity),
        fmt_metric(&metrics.f1),
        fmt_metric(&metrics.accuracy),
        metrics.counts.total(),
        a.out.display()
    );
    Ok(())
}

async fn cit_generate(ctx: &mut Ctx, a: CitGenerateArgs) -> Result<()> {
    apply_backend_flags(ctx, &a.backend);
    let quarantine_path = default_quarantine_path(&a.out);
    let manifest_path = a.out.with_file_name("cit_manifest.json");
    ctx.config.validate(&[
        ("train corpus", &a.train_corpus),
        ("eval corpus", &a.eval_corpus),
        ("out", &a.out),
        ("quarantine", &quarantine_path),
        ("manifest", &manifest_path),
    ])?;
    let train = load_corpus(&a.train_corpus, Split::Train)?;
    let eval = load_corpus(&a.eval_corpus, Split::Test)?;
    // Checked here as well so a leaking split is reported even when the
    // backend itself could not be configured.
    assert_disjoint(&eval, &train).map_err(|report| CliError::data(report.to_string()))?;

    let g = open_generation(ctx, &a.backend)?;
    let result = citgen::generate_cit(&eval, &train, &g.generator, &g.params, g.mode).await;
    print_backend_summary("cit generate", &g);
    let outcome = result?;
    let samples = if a.no_cot {
        citgen::strip_cot(&outcome.samples)
    } else {
        outcome.samples.clone()
    };
    io::write_jsonl_atomic(&a.out, &samples)?;
    io::write_jsonl_atomic::<QuarantineRecord>(&quarantine_path, &outcome.quarantine)?;
    let manifest = params_settings(
        citgen::cit_manifest(&samples, outcome.quarantine.len(), &train, &eval, g.params.seed),
        &g.params,
        g.mode,
    );
    manifest.write(&manifest_path)?;
    let (f, c) = citgen::polarity_counts(&samples);
    eprintln!(
        "cit generate: {} samples ({f} factual, {c} contrastive, cot: {}) from {} images, {} quarantined -> {}",
        samples.len(),
        !a.no_cot,
        train.len(),
        outcome.quarantine.len(),
        a.out.display()
    );
    Ok(())
}

fn cit_export(ctx: &Ctx, a: CitExportArgs) -> Result<()> {
    ctx.config.validate(&[("cit", &a.cit), ("out", &a.out)])?;
    let format: ExportFormat = a.format.parse()?;
    let seed = a.seed.unwrap_or(ctx.config.seeds.export);
    let samples: Vec<InstructionSample> = io::read_jsonl(&a.cit)?;
    let bytes = citgen::export_instruction_dataset(&samples, format, seed)?;
    io::write_bytes_atomic(&a.out, &bytes)?;
    let (f, c) = citgen::polarity_counts(&samples);
    Manifest::new("cit export")
        .seed("export", seed)
        .source("cit", sha256_file(&a.cit)?)
        .count("samples", samples.len() as u64)
        .count("factual", f)
        .count("contrastive", c)
        .setting("format", format.to_string())
        .write_beside(&a.out)?;
    eprintln!(
        "cit export: {} samples as {format} (seed {seed}, templates {TEMPLATE_VERSION}) -> {}",
        samples.len(),
        a.out.display()
    );
    Ok(())
}
