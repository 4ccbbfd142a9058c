use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use dforge::bank::Source;
use dforge::eval::{
    build_report, by_annotator, cohens_kappa, jaccard_agreement, read_ratings, BootstrapConfig,
    MetricReport, QualityLabel, RatingRecord, ReportSpec, Statistic, Weighting,
};

use crate::error::{data, usage, CliResult};
use crate::generate::load_bank;
use crate::manifest;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingArg {
    /// Mean of per-subject rates.
    Equal,
    /// Pooled over all ratings in the category.
    Ratings,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ratings CSV; repeat for several annotators.
    #[arg(long, required = true)]
    pub ratings: Vec<PathBuf>,
    /// Comma-separated model tags; the first is the significance reference.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<String>,
    /// Statistic tested for significance (GDR or NDR).
    #[arg(long, default_value = "GDR")]
    pub stat: String,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    /// Bootstrap seed; required unless --no-significance.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_significance: bool,
    /// Distractors per model and question.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Test set used to group questions by subject.
    #[arg(long)]
    pub test_set: Option<PathBuf>,
    /// `NAME=Subject,Subject`; repeatable.
    #[arg(long)]
    pub category: Vec<String>,
    #[arg(long, value_enum, default_value = "equal")]
    pub weighting: WeightingArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct EvalConfig<'a> {
    ratings: &'a [PathBuf],
    models: &'a [String],
    stat: Option<Statistic>,
    resamples: usize,
    k: usize,
    test_set: Option<&'a Path>,
    categories: &'a BTreeMap<String, Vec<String>>,
    weighting: WeightingArg,
}

#[derive(Debug, Serialize)]
struct PairAgreement {
    annotators: (String, String),
    items: usize,
    kappa: Option<f64>,
    observed: f64,
    expected: f64,
    jaccard: BTreeMap<QualityLabel, Option<f64>>,
}

#[derive(Debug, Serialize)]
struct EvalOutput<'a> {
    report: &'a MetricReport,
    agreement: Vec<PairAgreement>,
}

fn parse_categories(raw: &[String]) -> CliResult<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for c in raw {
        let (name, members) = c
            .split_once('=')
            .ok_or_else(|| usage(format!("--category {c:?}: expected NAME=Subject,Subject")))?;
        let members: Vec<String> = members
            .split(',')
            .map(|m| m.trim().to_string())
            .filter(|m| !m.is_empty())
            .collect();
        if name.trim().is_empty() || members.is_empty() {
            return Err(usage(format!("--category {c:?}: empty name or member list")));
        }
        out.insert(name.trim().to_string(), members);
    }
    Ok(out)
}

/// Agreement for every annotator pair over the items both rated.
fn agreement(records: &[RatingRecord]) -> CliResult<Vec<PairAgreement>> {
    let per = by_annotator(records);
    let names: Vec<&String> = per.keys().collect();
    let mut out = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let keys = |rs: &[RatingRecord]| -> BTreeSet<(String, String)> {
                rs.iter()
                    .map(|r| (r.question_id.clone(), r.distractor.clone()))
                    .collect()
            };
            let shared: BTreeSet<_> = keys(&per[*a]).intersection(&keys(&per[*b])).cloned().collect();
            if shared.len() < 2 {
                continue;
            }
            let pick = |rs: &[RatingRecord]| -> Vec<RatingRecord> {
                rs.iter()
                    .filter(|r| shared.contains(&(r.question_id.clone(), r.distractor.clone())))
                    .cloned()
                    .collect()
            };
            let (ra, rb) = (pick(&per[*a]), pick(&per[*b]));
            let k = cohens_kappa(&ra, &rb).map_err(data)?;
            let mut jaccard = BTreeMap::new();
            for l in QualityLabel::ALL {
                jaccard.insert(l, jaccard_agreement(&ra, &rb, l).map_err(data)?);
            }
            out.push(PairAgreement {
                annotators: ((*a).clone(), (*b).clone()),
                items: k.items,
                kappa: k.percent(),
                observed: k.observed,
                expected: k.expected,
                jaccard,
            });
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |v| format!("{v:.1}"))
}

pub fn run(args: EvalArgs) -> CliResult {
    let stat: Option<Statistic> = if args.no_significance {
        None
    } else {
        Some(args.stat.parse().map_err(usage)?)
    };
    let seed = match (stat, args.seed) {
        (Some(_), None) => {
            return Err(usage("--seed is required for the bootstrap (or pass --no-significance)"))
        }
        (_, s) => s,
    };
    if args.resamples == 0 {
        return Err(usage("--resamples must be positive"));
    }
    let categories = parse_categories(&args.category)?;

    let mut records = Vec::new();
    for p in &args.ratings {
        records.extend(read_ratings(p).map_err(|e| data(format!("{}: {e}", p.display())))?);
    }
    let rated: BTreeSet<String> = records.iter().map(|r| r.question_id.clone()).collect();
    let mut groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    match &args.test_set {
        Some(p) => {
            for item in load_bank(p, Source::Test)?.iter() {
                if rated.contains(&item.id) {
                    groups.entry(item.subject.clone()).or_default().insert(item.id.clone());
                }
            }
            let unknown: Vec<_> = rated.iter().filter(|q| !groups.values().any(|g| g.contains(*q))).collect();
            if !unknown.is_empty() {
                return Err(data(format!("rated questions missing from the test set: {unknown:?}")));
            }
        }
        None => {
            groups.insert("all".into(), rated.clone());
        }
    }
    for (name, members) in &categories {
        for m in members {
            if !groups.contains_key(m) {
                return Err(usage(format!("category {name:?} names unknown subject {m:?}")));
            }
        }
    }

    let spec = ReportSpec {
        k: args.k,
        models: args.models.clone(),
        groups,
        categories: categories.clone(),
        weighting: match args.weighting {
            WeightingArg::Equal => Weighting::EqualSubjects,
            WeightingArg::Ratings => Weighting::ByRatings,
        },
        significance: stat.map(|s| {
            (
                s,
                BootstrapConfig {
                    resamples: args.resamples,
                    seed: seed.unwrap_or_default(),
                },
            )
        }),
    };
    let report = build_report(&records, &spec).map_err(data)?;
    let pairs = agreement(&records)?;

    let mut table = report.render_table();
    if !pairs.is_empty() {
        table.push_str("\nagreement (kappa x100, per-label Jaccard %)\n");
        for p in &pairs {
            let _ = write!(
                table,
                "{} vs {} ({} items): kappa {}",
                p.annotators.0,
                p.annotators.1,
                p.items,
                fmt_opt(p.kappa)
            );
            for (l, j) in &p.jaccard {
                let _ = write!(table, "  {} {}", l.as_str(), fmt_opt(*j));
            }
            table.push('\n');
        }
    }

    let out = &args.out;
    std::fs::create_dir_all(out).map_err(|e| data(format!("{}: {e}", out.display())))?;
    let mut json = serde_json::to_string_pretty(&EvalOutput {
        report: &report,
        agreement: pairs,
    })
    .expect("report serializes");
    json.push('\n');
    let io = |e: std::io::Error| data(format!("{}: {e}", out.display()));
    std::fs::write(out.join("report.json"), json).map_err(io)?;
    std::fs::write(out.join("report.txt"), &table).map_err(io)?;

    let config = EvalConfig {
        ratings: &args.ratings,
        models: &args.models,
        stat,
        resamples: args.resamples,
        k: args.k,
        test_set: args.test_set.as_deref(),
        categories: &categories,
        weighting: args.weighting,
    };
    let mut inputs: Vec<&Path> = args.ratings.iter().map(PathBuf::as_path).collect();
    inputs.extend(args.test_set.as_deref());
    manifest::write(&out.join("manifest.json"), "eval", &config, seed, &inputs, &["report.json", "report.txt"])?;
    print!("{table}");
    Ok(())
}
