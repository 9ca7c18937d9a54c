//! Per-source evaluation: every fake group is scored against the full pool
//! of real samples, and an unweighted average summarizes the groups.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::classification::{classification_metrics, confusion_counts, DEFAULT_THRESHOLD};
use super::pca::Projection;
use super::ranking::{average_precision, roc_auc};
use crate::data::SampleLabel;
use crate::error::{MaflError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    GeneratorId,
    SourceName,
}

impl FromStr for GroupKey {
    type Err = MaflError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generator_id" | "generator" => Ok(GroupKey::GeneratorId),
            "source_name" | "source" => Ok(GroupKey::SourceName),
            other => Err(MaflError::Config(format!(
                "unknown group key '{other}' (expected generator_id or source_name)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub n_real: usize,
    pub n_fake: usize,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub pattern_probe_acc: f64,
    pub pattern_chance: f64,
    pub content_probe_acc: f64,
    pub content_chance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub group_key: GroupKey,
    pub overall: GroupMetrics,
    pub groups: Vec<GroupMetrics>,
    /// Unweighted mean over `groups`.
    pub avg: MetricSet,
    pub probes: Option<ProbeSummary>,
    pub projection: Option<Projection>,
    pub warnings: Vec<String>,
}

/// ACC/P/R/F1 at threshold 0.5 plus AP and AUC. `labels` are 0 real, 1 fake.
pub fn metric_set(scores: &[f64], labels: &[u8]) -> Result<MetricSet> {
    let m = classification_metrics(&confusion_counts(scores, labels, DEFAULT_THRESHOLD)?)?;
    Ok(MetricSet {
        acc: m.acc,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        ap: average_precision(scores, labels)?,
        auc: roc_auc(scores, labels)?,
    })
}

fn group_of(l: &SampleLabel, key: GroupKey) -> String {
    match key {
        GroupKey::GeneratorId => l.generator_id.to_string(),
        GroupKey::SourceName => l.source_name.clone(),
    }
}

fn evaluate(name: String, rows: &[usize], scores: &[f64], labels: &[SampleLabel]) -> Result<GroupMetrics> {
    let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
    let y: Vec<u8> = rows.iter().map(|&i| labels[i].authenticity).collect();
    let n_fake = y.iter().filter(|&&v| v == 1).count();
    Ok(GroupMetrics {
        group: name,
        n_real: y.len() - n_fake,
        n_fake,
        metrics: metric_set(&s, &y)?,
    })
}

/// Scores every fake group (by `key`) against all real samples.
///
/// Groups are ordered by numeric generator id or by source name. A group
/// whose metrics are undefined is skipped and noted in `warnings`.
pub fn evaluate_grouped(scores: &[f64], labels: &[SampleLabel], key: GroupKey) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(MaflError::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let reals: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_fake()).collect();
    let mut names: Vec<(i64, String)> = labels
        .iter()
        .filter(|l| l.is_fake())
        .map(|l| (if key == GroupKey::GeneratorId { l.generator_id as i64 } else { 0 }, group_of(l, key)))
        .collect();
    names.sort();
    names.dedup();

    let all: Vec<usize> = (0..labels.len()).collect();
    let overall = evaluate("overall".into(), &all, scores, labels)?;
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    for (_, name) in names {
        let mut rows = reals.clone();
        rows.extend((0..labels.len()).filter(|&i| labels[i].is_fake() && group_of(&labels[i], key) == name));
        rows.sort_unstable();
        match evaluate(name.clone(), &rows, scores, labels) {
            Ok(g) => groups.push(g),
            Err(e) => warnings.push(format!("group {name} skipped: {e}")),
        }
    }
    let avg = if groups.is_empty() {
        warnings.push("no evaluable fake groups; Avg is zero".into());
        MetricSet::default()
    } else {
        let n = groups.len() as f64;
        let mean = |f: fn(&MetricSet) -> f64| groups.iter().map(|g| f(&g.metrics)).sum::<f64>() / n;
        MetricSet {
            acc: mean(|m| m.acc),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            ap: mean(|m| m.ap),
            auc: mean(|m| m.auc),
        }
    };
    Ok(EvalReport {
        group_key: key,
        overall,
        groups,
        avg,
        probes: None,
        projection: None,
        warnings,
    })
}

impl EvalReport {
    /// One row per group, then an `Avg` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,n_real,n_fake,acc,ap,f1,auc\n");
        for g in &self.groups {
            let m = &g.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                csv_field(&g.group),
                g.n_real,
                g.n_fake,
                m.acc,
                m.ap,
                m.f1,
                m.auc
            );
        }
        let m = &self.avg;
        let _ = writeln!(out, "Avg,,,{:.6},{:.6},{:.6},{:.6}", m.acc, m.ap, m.f1, m.auc);
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
