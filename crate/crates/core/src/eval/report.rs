//! Evaluation reports and their JSON, CSV and text renderings.
//!
//! JSON schema (one report):
//!
//! ```json
//! {
//!   "metric": {"kind": "deep", "branches": ["x1:linear"], "normalization": "l2", "measure": "mse"},
//!   "label": "mse/l2/x1:linear/all",
//!   "per_category": [{"category": "Trad", "score": 70.56, "count": 4720}, ...],
//!   "average": 68.95,
//!   "total": 36344,
//!   "dataset_digest": "<sha256 hex>",
//!   "subsample": {"count": 10, "seed": 1}
//! }
//! ```
//!
//! Scores are percentages. `score` is `null` for a category without
//! triplets; `average` is the unweighted mean of the non-null scores.

use serde::{Deserialize, Serialize};

use super::{Category, Subsample};
use crate::pipeline::Metric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: Category,
    pub score: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub label: String,
    pub per_category: Vec<CategoryScore>,
    pub average: Option<f64>,
    pub total: usize,
    pub dataset_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<Subsample>,
}

impl EvalReport {
    /// Aggregate per-triplet scores in `[0, 1]`, summed in the given order.
    pub(crate) fn from_scores(
        metric: Metric,
        scores: &[(Category, f64)],
        dataset_digest: String,
        subsample: Option<Subsample>,
    ) -> Self {
        let per_category: Vec<CategoryScore> = Category::ALL
            .iter()
            .map(|&category| {
                let (sum, count) = scores
                    .iter()
                    .filter(|(c, _)| *c == category)
                    .fold((0.0f64, 0usize), |(s, n), (_, v)| (s + v, n + 1));
                CategoryScore {
                    category,
                    score: (count > 0).then(|| 100.0 * sum / count as f64),
                    count,
                }
            })
            .collect();
        let average = average_of(&per_category);
        Self {
            label: metric.label(),
            metric,
            per_category,
            average,
            total: scores.len(),
            dataset_digest,
            subsample,
        }
    }

    pub fn score(&self, category: Category) -> Option<f64> {
        self.per_category
            .iter()
            .find(|c| c.category == category)
            .and_then(|c| c.score)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{:<11}, {:>8}, {:>6}\n", "category", "score", "count");
        for c in &self.per_category {
            out.push_str(&format!(
                "{:<11}, {:>8}, {:>6}\n",
                c.category.name(),
                fmt_score(c.score),
                c.count
            ));
        }
        out.push_str(&format!(
            "{:<11}, {:>8}, {:>6}\n",
            "AVERAGE",
            fmt_score(self.average),
            self.total
        ));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("metric: {}\n", self.label);
        out.push_str(&format!(
            "{:<12} {:>8} {:>7}\n",
            "category", "score", "count"
        ));
        for c in &self.per_category {
            out.push_str(&format!(
                "{:<12} {:>8} {:>7}\n",
                c.category.name(),
                fmt_score(c.score),
                c.count
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>8} {:>7}\n",
            "AVERAGE",
            fmt_score(self.average),
            self.total
        ));
        out
    }
}

/// Unweighted mean of the categories that have triplets.
pub(crate) fn average_of(per_category: &[CategoryScore]) -> Option<f64> {
    let present: Vec<f64> = per_category.iter().filter_map(|c| c.score).collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn fmt_score(s: Option<f64>) -> String {
    match s {
        Some(v) => format!("{v:.4}"),
        None => "NA".into(),
    }
}

/// One named cell of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub name: String,
    pub report: EvalReport,
}

pub fn grid_to_json(rows: &[GridRow]) -> String {
    let mut s = serde_json::to_string_pretty(&serde_json::json!({ "rows": rows }))
        .expect("grid serializes");
    s.push('\n');
    s
}

fn grid_widths(rows: &[GridRow]) -> (usize, usize) {
    let name = rows.iter().map(|r| r.name.len()).chain([4]).max().unwrap();
    let label = rows
        .iter()
        .map(|r| r.report.label.len())
        .chain([5])
        .max()
        .unwrap();
    (name, label)
}

pub fn grid_to_csv(rows: &[GridRow]) -> String {
    let (nw, lw) = grid_widths(rows);
    let mut out = format!("{:<nw$}, {:<lw$}", "name", "label");
    for c in Category::ALL {
        out.push_str(&format!(", {:>11}", c.name()));
    }
    out.push_str(&format!(", {:>8}\n", "AVERAGE"));
    for row in rows {
        out.push_str(&format!("{:<nw$}, {:<lw$}", row.name, row.report.label));
        for c in Category::ALL {
            out.push_str(&format!(", {:>11}", fmt_score(row.report.score(c))));
        }
        out.push_str(&format!(", {:>8}\n", fmt_score(row.report.average)));
    }
    out
}

pub fn grid_to_text(rows: &[GridRow]) -> String {
    let (nw, lw) = grid_widths(rows);
    let mut out = format!("{:<nw$}  {:<lw$}", "name", "label");
    for c in Category::ALL {
        out.push_str(&format!(" {:>11}", c.name()));
    }
    out.push_str(&format!(" {:>8}\n", "AVERAGE"));
    for row in rows {
        out.push_str(&format!("{:<nw$}  {:<lw$}", row.name, row.report.label));
        for c in Category::ALL {
            out.push_str(&format!(" {:>11}", fmt_score(row.report.score(c))));
        }
        out.push_str(&format!(" {:>8}\n", fmt_score(row.report.average)));
    }
    out
}
