//! Run configuration for `generate`: a TOML file overlaid by flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use dforge::Strategy;

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Lexical,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Zero,
    Static,
    Dynamic,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Zero => Strategy::Zero,
            StrategyArg::Static => Strategy::Static,
            StrategyArg::Dynamic => Strategy::Dynamic,
        }
    }
}

/// Shape of the config file; every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub bank: Option<PathBuf>,
    pub test_set: Option<PathBuf>,
    pub strategy: Option<StrategyArg>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub scorer: Option<ScorerKind>,
    pub scorer_endpoint: Option<String>,
    pub examples_file: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model_tag: Option<String>,
    #[serde(default)]
    pub backend: FileBackend,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileBackend {
    pub kind: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub parallelism: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub fixtures: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub test_set: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// In-context examples per prompt (default 5).
    #[arg(long)]
    pub k: Option<usize>,
    /// Distractors requested per question (default 10).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerKind>,
    #[arg(long)]
    pub scorer_endpoint: Option<String>,
    /// Item ids used as the fixed examples of the static strategy.
    #[arg(long)]
    pub examples_file: Option<PathBuf>,
    /// Template collection replacing the built-in one.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tag recorded on the distractor sets (defaults to the strategy name).
    #[arg(long)]
    pub model_tag: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Mock completions keyed by prompt hash; prompts without a fixture get
    /// a synthesized answer.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
}

/// Fully resolved `generate` settings, recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub bank: PathBuf,
    pub test_set: PathBuf,
    pub strategy: StrategyArg,
    pub k: usize,
    pub n: usize,
    pub scorer: ScorerKind,
    pub scorer_endpoint: Option<String>,
    pub examples_file: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    /// Not part of the manifest so that runs into different directories
    /// stay comparable.
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
    pub model_tag: String,
    pub backend: BackendConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub parallelism: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub fixtures: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(args: GenerateArgs) -> CliResult<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let fb = file.backend;
        let need = |v: Option<PathBuf>, flag: &str| {
            v.ok_or_else(|| usage(format!("missing --{flag} (flag or config key)")))
        };
        let strategy = args.strategy.or(file.strategy).unwrap_or(StrategyArg::Zero);
        let settings = dforge::llm::RequestSettings::default();
        let cfg = RunConfig {
            bank: need(args.bank.or(file.bank), "bank")?,
            test_set: need(args.test_set.or(file.test_set), "test-set")?,
            strategy,
            k: args.k.or(file.k).unwrap_or(5),
            n: args.n.or(file.n).unwrap_or(10),
            scorer: args.scorer.or(file.scorer).unwrap_or(ScorerKind::Lexical),
            scorer_endpoint: args.scorer_endpoint.or(file.scorer_endpoint),
            examples_file: args.examples_file.or(file.examples_file),
            templates: args.templates.or(file.templates),
            out: need(args.out.or(file.out), "out")?,
            seed: args.seed.or(file.seed).unwrap_or(0),
            model_tag: args
                .model_tag
                .or(file.model_tag)
                .unwrap_or_else(|| Strategy::from(strategy).tag().to_string()),
            backend: BackendConfig {
                kind: args.backend.or(fb.kind).unwrap_or(BackendKind::Mock),
                endpoint: args.endpoint.or(fb.endpoint),
                model: args.model.or(fb.model).unwrap_or(settings.model_name),
                temperature: args.temperature.or(fb.temperature).unwrap_or(settings.temperature),
                max_tokens: args.max_tokens.or(fb.max_tokens).unwrap_or(settings.max_tokens),
                parallelism: args.parallelism.or(fb.parallelism).unwrap_or(4),
                timeout_secs: args.timeout_secs.or(fb.timeout_secs).unwrap_or(60),
                max_retries: args.max_retries.or(fb.max_retries).unwrap_or(5),
                fixtures: args.fixtures.or(fb.fixtures),
            },
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> CliResult {
        if self.k == 0 || self.n == 0 {
            return Err(usage("--k and --n must be positive"));
        }
        if self.backend.parallelism == 0 {
            return Err(usage("--parallelism must be positive"));
        }
        match (self.strategy, &self.examples_file) {
            (StrategyArg::Static, None) => {
                return Err(usage(
                    "static mode requires a fixed example list: pass --examples-file \
                     with one bank item id per line (see `dforge select-static`)",
                ))
            }
            (StrategyArg::Zero | StrategyArg::Dynamic, Some(_)) => {
                return Err(usage("--examples-file only applies to --strategy static"))
            }
            _ => {}
        }
        match (self.scorer, &self.scorer_endpoint) {
            (ScorerKind::External, None) => {
                return Err(usage("--scorer external needs --scorer-endpoint"))
            }
            (ScorerKind::Lexical, Some(_)) => {
                return Err(usage("--scorer-endpoint conflicts with --scorer lexical"))
            }
            _ => {}
        }
        match (self.backend.kind, &self.backend.endpoint, &self.backend.fixtures) {
            (BackendKind::Http, None, _) => Err(usage("--backend http needs --endpoint")),
            (BackendKind::Http, _, Some(_)) => {
                Err(usage("--fixtures only applies to --backend mock"))
            }
            (BackendKind::Mock, Some(_), _) => {
                Err(usage("--endpoint conflicts with --backend mock"))
            }
            _ => Ok(()),
        }
    }
}
