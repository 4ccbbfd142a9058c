use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    bootstrap_p, rated_cell, BootstrapConfig, BootstrapResult, EvalError, LabelCounts,
    ModelRatings, QualityLabel, RatingRecord, Statistic,
};

/// How a category combines its subject groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Plain mean of the per-subject rates.
    #[default]
    EqualSubjects,
    /// Rates over the pooled ratings of all subjects.
    ByRatings,
}

#[derive(Debug, Clone)]
pub struct ReportSpec {
    pub k: usize,
    /// Models to report; the first is the bootstrap reference.
    pub models: Vec<String>,
    /// Group name to question ids (typically one group per subject).
    pub groups: BTreeMap<String, BTreeSet<String>>,
    /// Category name to member group names.
    pub categories: BTreeMap<String, Vec<String>>,
    pub weighting: Weighting,
    /// Statistic and settings for significance against the first model.
    pub significance: Option<(Statistic, BootstrapConfig)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricCell {
    pub model_tag: String,
    pub group: String,
    pub questions: usize,
    pub ratings: usize,
    pub counts: LabelCounts,
    pub gdr: f64,
    pub ndr: f64,
    pub poor_rate: f64,
    pub true_answer_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRow {
    pub category: String,
    pub model_tag: String,
    pub groups: Vec<String>,
    pub gdr: f64,
    pub ndr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Significance {
    /// Group or category name.
    pub column: String,
    pub result: BootstrapResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub k: usize,
    pub weighting: Weighting,
    pub cells: Vec<MetricCell>,
    pub categories: Vec<CategoryRow>,
    pub significance: Vec<Significance>,
}

pub fn build_report(records: &[RatingRecord], spec: &ReportSpec) -> Result<MetricReport, EvalError> {
    let mut cells = Vec::new();
    for model in &spec.models {
        for (group, qs) in &spec.groups {
            let cell = rated_cell(records, model, qs, spec.k)?;
            let c = cell.counts;
            cells.push(MetricCell {
                model_tag: model.clone(),
                group: group.clone(),
                questions: cell.questions,
                ratings: c.total(),
                counts: c,
                gdr: c.percent(QualityLabel::Good),
                ndr: c.percent(QualityLabel::Nonsense),
                poor_rate: c.percent(QualityLabel::Poor),
                true_answer_rate: c.percent(QualityLabel::TrueAnswer),
            });
        }
    }

    let mut categories = Vec::new();
    for (category, members) in &spec.categories {
        for model in &spec.models {
            let member_cells: Vec<&MetricCell> = cells
                .iter()
                .filter(|c| &c.model_tag == model && members.contains(&c.group))
                .collect();
            if member_cells.is_empty() {
                continue;
            }
            let (gdr, ndr) = match spec.weighting {
                Weighting::EqualSubjects => {
                    let n = member_cells.len() as f64;
                    (
                        member_cells.iter().map(|c| c.gdr).sum::<f64>() / n,
                        member_cells.iter().map(|c| c.ndr).sum::<f64>() / n,
                    )
                }
                Weighting::ByRatings => {
                    let mut pooled = LabelCounts::default();
                    for c in &member_cells {
                        pooled.merge(&c.counts);
                    }
                    (
                        pooled.percent(QualityLabel::Good),
                        pooled.percent(QualityLabel::Nonsense),
                    )
                }
            };
            categories.push(CategoryRow {
                category: category.clone(),
                model_tag: model.clone(),
                groups: member_cells.iter().map(|c| c.group.clone()).collect(),
                gdr,
                ndr,
            });
        }
    }

    let mut significance = Vec::new();
    if let (Some((stat, config)), Some(reference)) = (spec.significance, spec.models.first()) {
        let mut columns: Vec<(String, BTreeSet<String>)> =
            spec.groups.iter().map(|(g, qs)| (g.clone(), qs.clone())).collect();
        for (cat, members) in &spec.categories {
            let qs: BTreeSet<String> = members
                .iter()
                .filter_map(|m| spec.groups.get(m))
                .flatten()
                .cloned()
                .collect();
            columns.push((cat.clone(), qs));
        }
        for (column, qs) in columns {
            let ref_ratings = ModelRatings::from_records(records, reference, Some(&qs));
            for challenger in spec.models.iter().skip(1) {
                let ch_ratings = ModelRatings::from_records(records, challenger, Some(&qs));
                let result = bootstrap_p(&ref_ratings, &ch_ratings, stat, config)?;
                significance.push(Significance {
                    column: column.clone(),
                    result,
                });
            }
        }
    }

    Ok(MetricReport {
        k: spec.k,
        weighting: spec.weighting,
        cells,
        categories,
        significance,
    })
}

impl MetricReport {
    fn marker(&self, column: &str, model: &str, stat: Statistic) -> &'static str {
        let p = self
            .significance
            .iter()
            .find(|s| s.column == column && s.result.challenger == model && s.result.statistic == stat)
            .map(|s| s.result.p_value);
        match p {
            Some(p) if p < 0.01 => "‡",
            Some(p) if p < 0.1 => "*",
            _ => "",
        }
    }

    /// Plain-text table: one row per model, GDR@k and NDR@k per column.
    /// `*` marks p < 0.1 and `‡` p < 0.01 against the reference model.
    pub fn render_table(&self) -> String {
        let mut columns: Vec<String> = Vec::new();
        let mut models: Vec<String> = Vec::new();
        let mut values: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
        for c in &self.cells {
            if !columns.contains(&c.group) {
                columns.push(c.group.clone());
            }
            if !models.contains(&c.model_tag) {
                models.push(c.model_tag.clone());
            }
            values.insert((c.model_tag.clone(), c.group.clone()), (c.gdr, c.ndr));
        }
        for c in &self.categories {
            if !columns.contains(&c.category) {
                columns.push(c.category.clone());
            }
            values.insert((c.model_tag.clone(), c.category.clone()), (c.gdr, c.ndr));
        }

        let width = 16;
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "model");
        for col in &columns {
            let _ = write!(out, " | {:^width$}", truncate(col, width));
        }
        out.push('\n');
        let _ = write!(out, "{:<12}", "");
        for _ in &columns {
            let head = format!("GDR@{} NDR@{}", self.k, self.k);
            let _ = write!(out, " | {head:^width$}");
        }
        out.push('\n');
        out.push_str(&"-".repeat(12 + columns.len() * (width + 3)));
        out.push('\n');
        for m in &models {
            let _ = write!(out, "{:<12}", truncate(m, 12));
            for col in &columns {
                match values.get(&(m.clone(), col.clone())) {
                    Some((g, n)) => {
                        let cell = format!(
                            "{:.1}{} {:.1}{}",
                            g,
                            self.marker(col, m, Statistic::Gdr),
                            n,
                            self.marker(col, m, Statistic::Ndr)
                        );
                        let _ = write!(out, " | {cell:^width$}");
                    }
                    None => {
                        let _ = write!(out, " | {:^width$}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<RatingRecord> {
        let mut out = Vec::new();
        for (subject_q, goods) in [("en1", [8, 2]), ("fr1", [4, 4]), ("fr2", [6, 0])] {
            for (model, good) in ["dynamic", "zero"].iter().zip(goods) {
                for d in 0..10 {
                    let label = if d < good {
                        QualityLabel::Good
                    } else if d == 9 {
                        QualityLabel::Nonsense
                    } else {
                        QualityLabel::Poor
                    };
                    out.push(RatingRecord::new(
                        subject_q,
                        &format!("{model}-{d}"),
                        [*model],
                        "t",
                        label,
                    ));
                }
            }
        }
        out
    }

    fn spec(weighting: Weighting) -> ReportSpec {
        let set = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        ReportSpec {
            k: 10,
            models: vec!["dynamic".into(), "zero".into()],
            groups: [
                ("English".to_string(), set(&["en1"])),
                ("French".to_string(), set(&["fr1", "fr2"])),
            ]
            .into(),
            categories: [("language".to_string(), vec!["English".into(), "French".into()])].into(),
            weighting,
            significance: Some((Statistic::Gdr, BootstrapConfig { resamples: 200, seed: 5 })),
        }
    }

    #[test]
    fn cells_and_category_weighting() {
        let recs = records();
        let eq = build_report(&recs, &spec(Weighting::EqualSubjects)).unwrap();
        let cell = |m: &str, g: &str| eq.cells.iter().find(|c| c.model_tag == m && c.group == g).unwrap();
        assert_eq!(cell("dynamic", "English").gdr, 80.0);
        assert_eq!(cell("dynamic", "French").gdr, 50.0);
        for c in &eq.cells {
            let sum = c.gdr + c.ndr + c.poor_rate + c.true_answer_rate;
            assert!((sum - 100.0).abs() < 1e-9);
        }
        let cat = eq.categories.iter().find(|c| c.model_tag == "dynamic").unwrap();
        assert_eq!(cat.gdr, 65.0);

        let pooled = build_report(&recs, &spec(Weighting::ByRatings)).unwrap();
        let cat = pooled.categories.iter().find(|c| c.model_tag == "dynamic").unwrap();
        assert!((cat.gdr - 100.0 * 18.0 / 30.0).abs() < 1e-12);

        // significance for each column (2 groups + 1 category) and one challenger
        assert_eq!(eq.significance.len(), 3);
        let table = eq.render_table();
        assert!(table.contains("GDR@10 NDR@10"));
        assert!(table.lines().any(|l| l.starts_with("dynamic")));
        assert_eq!(eq, build_report(&recs, &spec(Weighting::EqualSubjects)).unwrap());
    }
}
