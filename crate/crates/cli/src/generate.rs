use std::path::Path;
use std::time::Duration;

use dforge::bank::{ingest, IngestOptions, Source};
use dforge::llm::{
    run_exchanges, Backend, Clock, FixedClock, HttpBackend, LlmError, LlmRequest, MockBackend,
    MockFallback, RequestSettings, RetryPolicy, SystemClock, TranscriptEntry,
};
use dforge::retrieval::{ExternalScorer, LexicalScorer, RankOptions, SimilarityScorer};
use dforge::{jsonl, DistractorSet, Prompt, PromptBuilder, QuestionBank, Templates};

use crate::config::{BackendKind, GenerateArgs, RunConfig, ScorerKind, StrategyArg};
use crate::error::{backend, data, usage, CliResult};
use crate::manifest;

pub fn load_bank(path: &Path, source: Source) -> CliResult<QuestionBank> {
    let opts = IngestOptions {
        format: dforge::bank::Format::from_path(path),
        source,
        ..Default::default()
    };
    let ingested = ingest(path, &opts).map_err(data)?;
    for d in &ingested.diagnostics {
        eprintln!("warning: {}: skipped {d}", path.display());
    }
    Ok(ingested.bank)
}

fn read_ids(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let ids: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    if ids.is_empty() {
        return Err(data(format!("{}: no example ids", path.display())));
    }
    Ok(ids)
}

fn build_prompts(cfg: &RunConfig, bank: &QuestionBank, tests: &QuestionBank) -> CliResult<Vec<Prompt>> {
    let templates = match &cfg.templates {
        Some(p) => Templates::load(p).map_err(|e| data(format!("{}: {e}", p.display())))?,
        None => Templates::builtin(),
    };
    let missing = templates.missing_languages(tests.iter());
    if !missing.is_empty() {
        eprintln!("warning: no template for {missing:?}; falling back to English");
    }
    let builder = PromptBuilder::new(templates).with_distractor_count(cfg.n);
    let scorer: Box<dyn SimilarityScorer> = match (cfg.scorer, &cfg.scorer_endpoint) {
        (ScorerKind::External, Some(url)) => Box::new(
            ExternalScorer::new(url, Duration::from_secs(cfg.backend.timeout_secs))
                .map_err(backend)?,
        ),
        _ => Box::new(LexicalScorer::default()),
    };
    let static_ids = match &cfg.examples_file {
        Some(p) => read_ids(p)?,
        None => Vec::new(),
    };
    let rank_opts = RankOptions {
        k: cfg.k,
        ..Default::default()
    };
    tests
        .iter()
        .map(|item| {
            let p = match cfg.strategy {
                StrategyArg::Zero => builder.zero_shot(item),
                StrategyArg::Static => builder.static_few_shot(item, bank, &static_ids),
                StrategyArg::Dynamic => builder.dynamic(item, bank, &rank_opts, scorer.as_ref()),
            };
            if let Ok(p) = &p {
                if cfg.strategy == StrategyArg::Dynamic && p.example_ids.len() < cfg.k {
                    eprintln!(
                        "warning: {}: only {} of {} examples available",
                        item.id,
                        p.example_ids.len(),
                        cfg.k
                    );
                }
            }
            p.map_err(|e| match e {
                dforge::prompt::PromptError::Retrieval(r) => backend(format!("{}: {r}", item.id)),
                other => data(format!("{}: {other}", item.id)),
            })
        })
        .collect()
}

fn make_backend(cfg: &RunConfig) -> CliResult<(Box<dyn Backend>, Box<dyn Clock>)> {
    let b = &cfg.backend;
    match b.kind {
        BackendKind::Mock => {
            let mock = match &b.fixtures {
                Some(p) => MockBackend::load(p, MockFallback::Synthesize).map_err(data)?,
                None => MockBackend::synthesizing(),
            };
            Ok((Box::new(mock), Box::new(FixedClock::default())))
        }
        BackendKind::Http => {
            let endpoint = b.endpoint.clone().ok_or_else(|| usage("--backend http needs --endpoint"))?;
            let retry = RetryPolicy {
                max_retries: b.max_retries,
                ..Default::default()
            };
            let http = HttpBackend::from_env(endpoint, Duration::from_secs(b.timeout_secs), retry)
                .map_err(|e| match e {
                    LlmError::MissingCredential => backend(format!(
                        "{e}: set {} for the live backend",
                        dforge::llm::API_KEY_ENV
                    )),
                    other => backend(other),
                })?;
            Ok((Box::new(http), Box::new(SystemClock)))
        }
    }
}

pub fn run(args: GenerateArgs) -> CliResult {
    let cfg = RunConfig::resolve(args)?;
    let bank = load_bank(&cfg.bank, Source::Bank)?;
    let tests = load_bank(&cfg.test_set, Source::Test)?;
    if tests.is_empty() {
        return Err(data("test set is empty"));
    }
    // prompts are built before the runtime starts: the external scorer blocks
    let prompts = build_prompts(&cfg, &bank, &tests)?;
    let (llm, clock) = make_backend(&cfg)?;

    let settings = RequestSettings {
        model_name: cfg.backend.model.clone(),
        temperature: cfg.backend.temperature,
        max_tokens: cfg.backend.max_tokens,
    };
    let requests: Vec<LlmRequest> = prompts
        .iter()
        .map(|p| {
            let id = format!("{}-{}", cfg.model_tag, p.target_id);
            LlmRequest::with_id(p.clone(), &settings, id)
        })
        .collect();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(backend)?;
    let exchanges = runtime.block_on(run_exchanges(
        requests,
        llm.as_ref(),
        cfg.backend.parallelism,
        clock.as_ref(),
    ));

    let mut sets = Vec::new();
    let mut failures = Vec::new();
    for (x, item) in exchanges.iter().zip(tests.iter()) {
        match &x.result {
            Ok(resp) => sets.push(DistractorSet::from_response(
                &item.id,
                &cfg.model_tag,
                &resp.raw_text,
                &item.answer,
                cfg.n,
            )),
            Err(e) => failures.push(format!("{}: {e}", item.id)),
        }
    }
    let transcript: Vec<TranscriptEntry> = exchanges.iter().map(TranscriptEntry::from).collect();

    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(|e| data(format!("{}: {e}", out.display())))?;
    let io = |e: std::io::Error| data(format!("{}: {e}", out.display()));
    jsonl::write(out.join("prompts.jsonl"), &prompts).map_err(io)?;
    jsonl::write(out.join("transcript.jsonl"), &transcript).map_err(io)?;
    jsonl::write(out.join("distractors.jsonl"), &sets).map_err(io)?;

    let mut inputs: Vec<&Path> = vec![&cfg.bank, &cfg.test_set];
    inputs.extend(cfg.examples_file.as_deref());
    inputs.extend(cfg.templates.as_deref());
    inputs.extend(cfg.backend.fixtures.as_deref());
    manifest::write(
        &out.join("manifest.json"),
        "generate",
        &cfg,
        Some(cfg.seed),
        &inputs,
        &["prompts.jsonl", "transcript.jsonl", "distractors.jsonl"],
    )?;

    let warned = sets.iter().filter(|s| !s.parse_warnings.is_empty()).count();
    eprintln!(
        "generated {} distractor sets ({} with parse warnings) into {}",
        sets.len(),
        warned,
        out.display()
    );
    if !failures.is_empty() {
        return Err(backend(format!(
            "{} of {} requests failed:\n  {}",
            failures.len(),
            prompts.len(),
            failures.join("\n  ")
        )));
    }
    Ok(())
}
