use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use dforge::bank::{ingest, Format, IngestOptions, Language, Source};
use dforge::mt5::prep_corpus;
use dforge::Templates;

use crate::error::{data, usage, CliResult};
use crate::generate::load_bank;
use crate::manifest;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSONL or CSV file to read.
    pub input: PathBuf,
    /// Normalized JSONL bank to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the input file extension.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Fail on the first invalid record instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    /// Mark records without an explicit source as test items.
    #[arg(long)]
    pub test: bool,
    #[arg(long)]
    pub name: Option<String>,
}

pub fn ingest_cmd(args: IngestArgs) -> CliResult {
    let opts = IngestOptions {
        format: match args.format {
            Some(FormatArg::Jsonl) => Format::Jsonl,
            Some(FormatArg::Csv) => Format::Csv,
            None => Format::from_path(&args.input),
        },
        strict: args.strict,
        source: if args.test { Source::Test } else { Source::Bank },
        name: args.name,
    };
    let ingested = ingest(&args.input, &opts).map_err(data)?;
    for d in &ingested.diagnostics {
        eprintln!("skipped {d}");
    }
    ingested.bank.save(&args.out).map_err(data)?;
    println!(
        "ingested {} items ({} skipped) into {}",
        ingested.bank.len(),
        ingested.diagnostics.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub bank: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

pub fn stats_cmd(args: StatsArgs) -> CliResult {
    let bank = load_bank(&args.bank, Source::Bank)?;
    let stats = bank.stats();
    let langs = bank.language_counts();
    if args.json {
        let langs: std::collections::BTreeMap<&str, usize> =
            langs.iter().map(|(l, n)| (l.code(), *n)).collect();
        let v = serde_json::json!({ "subjects": stats, "languages": langs, "items": bank.len() });
        println!("{}", serde_json::to_string_pretty(&v).expect("stats serialize"));
        return Ok(());
    }
    println!("{:<20} {:>6} {:>17}", "subject", "items", "gold distractors");
    let (mut items, mut gold) = (0, 0);
    for (subject, s) in &stats {
        println!("{subject:<20} {:>6} {:>17}", s.items, s.gold_distractors);
        items += s.items;
        gold += s.gold_distractors;
    }
    println!("{:<20} {items:>6} {gold:>17}", "total");
    let langs: Vec<String> = langs.iter().map(|(l, n)| format!("{} {n}", l.code())).collect();
    println!("languages: {}", langs.join(", "));
    Ok(())
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    pub bank: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

pub fn prep_cmd(args: PrepArgs) -> CliResult {
    let bank = load_bank(&args.bank, Source::Bank)?;
    let templates = match &args.templates {
        Some(p) => Templates::load(p).map_err(|e| data(format!("{}: {e}", p.display())))?,
        None => Templates::builtin(),
    };
    let missing = templates.missing_languages(bank.iter());
    if !missing.is_empty() {
        eprintln!("warning: no template for {missing:?}; English masking sentence used");
    }
    let report = prep_corpus(&bank, &templates, &args.out).map_err(data)?;
    println!(
        "wrote {} pairs to {} ({} items without distractors skipped)",
        report.written,
        args.out.display(),
        report.skipped
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    pub bank: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub seed: u64,
    /// Only consider items in this language.
    #[arg(long)]
    pub language: Option<String>,
    /// File receiving one item id per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SelectConfig<'a> {
    bank: &'a std::path::Path,
    k: usize,
    language: Option<&'a str>,
}

/// Picks the fixed examples for the static strategy once, from a seed.
pub fn select_cmd(args: SelectArgs) -> CliResult {
    if args.k == 0 {
        return Err(usage("--k must be positive"));
    }
    let language: Option<Language> = args
        .language
        .as_deref()
        .map(|l| l.parse().map_err(usage))
        .transpose()?;
    let bank = load_bank(&args.bank, Source::Bank)?;
    let mut pool: Vec<&str> = bank
        .iter()
        .filter(|i| !i.distractors.is_empty() && i.source == Source::Bank)
        .filter(|i| language.as_ref().is_none_or(|l| &i.language == l))
        .map(|i| i.id.as_str())
        .collect();
    pool.sort_unstable();
    if pool.len() < args.k {
        return Err(data(format!(
            "only {} eligible items for {} examples",
            pool.len(),
            args.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (chosen, _) = pool.partial_shuffle(&mut rng, args.k);
    let mut text = chosen.join("\n");
    text.push('\n');
    std::fs::write(&args.out, &text).map_err(|e| data(format!("{}: {e}", args.out.display())))?;
    let config = SelectConfig {
        bank: &args.bank,
        k: args.k,
        language: args.language.as_deref(),
    };
    let out_name = args.out.display().to_string();
    let mut manifest_path = args.out.clone().into_os_string();
    manifest_path.push(".manifest.json");
    manifest::write(
        std::path::Path::new(&manifest_path),
        "select-static",
        &config,
        Some(args.seed),
        &[&args.bank],
        &[&out_name],
    )?;
    print!("{text}");
    Ok(())
}
