//! Confusion counts, accuracy/precision/recall/F1, ROC and precision-recall
//! curves, and before/after comparison reports.
//!
//! A score at or above the threshold is a positive (attack) prediction
//! everywhere in this module.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::AttackFamily;
use crate::Class;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("recall is undefined without positive samples")]
    NoPositives,
    #[error("ROC needs both classes")]
    SingleClass,
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("cannot compare {before} with {after}")]
    FamilyMismatch { before: AttackFamily, after: AttackFamily },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn check_scores(scores: &[(f64, Class)]) -> Result<(), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    Ok(())
}

pub fn confusion(scores: &[(f64, Class)], threshold: f64) -> Result<ConfusionCounts, MetricsError> {
    check_scores(scores)?;
    let mut c = ConfusionCounts::default();
    for &(s, label) in scores {
        match (s >= threshold, label) {
            (true, Class::Attack) => c.tp += 1,
            (true, Class::NonAttack) => c.fp += 1,
            (false, Class::Attack) => c.fn_ += 1,
            (false, Class::NonAttack) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision is 0 when nothing is predicted positive; F1 is 0 when
/// precision and recall are both 0. Recall without positives is an error.
pub fn metrics(c: &ConfusionCounts) -> Result<MetricSet, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::EmptyInput);
    }
    if c.tp + c.fn_ == 0 {
        return Err(MetricsError::NoPositives);
    }
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
    let precision = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(MetricSet { accuracy, precision, recall, f1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    /// Threshold producing the point; `None` stands for +infinity.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

// Cumulative (threshold, tp, fp) after each distinct score, highest first.
fn sweep(scores: &[(f64, Class)]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<(f64, Class)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, &(s, label)) in sorted.iter().enumerate() {
        match label {
            Class::Attack => tp += 1,
            Class::NonAttack => fp += 1,
        }
        if i + 1 == sorted.len() || sorted[i + 1].0 != s {
            out.push((s, tp, fp));
        }
    }
    out
}

fn count_classes(scores: &[(f64, Class)]) -> (usize, usize) {
    let pos = scores.iter().filter(|(_, l)| *l == Class::Attack).count();
    (pos, scores.len() - pos)
}

/// ROC curve over the thresholds `{+inf} U unique scores`, AUC by the
/// trapezoid rule over false-positive rate.
pub fn roc_curve(scores: &[(f64, Class)]) -> Result<CurveSeries, MetricsError> {
    check_scores(scores)?;
    let (n_pos, n_neg) = count_classes(scores);
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut points = vec![CurvePoint { x: 0.0, y: 0.0, threshold: None }];
    // trapezoid accumulated in integer units of 1 / (2 n_pos n_neg)
    let mut area2: u128 = 0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (t, tp, fp) in sweep(scores) {
        area2 += ((fp - prev_fp) as u128) * ((tp + prev_tp) as u128);
        points.push(CurvePoint { x: fp as f64 / n_neg as f64, y: tp as f64 / n_pos as f64, threshold: Some(t) });
        (prev_tp, prev_fp) = (tp, fp);
    }
    let auc = area2 as f64 / (2.0 * n_pos as f64 * n_neg as f64);
    Ok(CurveSeries { kind: CurveKind::Roc, points, auc })
}

/// Precision-recall points over the same sweep; the area is average
/// precision `sum (R_k - R_{k-1}) P_k`.
pub fn pr_curve(scores: &[(f64, Class)]) -> Result<CurveSeries, MetricsError> {
    check_scores(scores)?;
    let (n_pos, _) = count_classes(scores);
    if n_pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (t, tp, fp) in sweep(scores) {
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(CurvePoint { x: recall, y: precision, threshold: Some(t) });
    }
    Ok(CurveSeries { kind: CurveKind::Pr, points, auc: ap })
}

impl CurveSeries {
    /// Two-column CSV; header names follow the curve kind.
    pub fn to_csv(&self) -> String {
        let mut out = match self.kind {
            CurveKind::Roc => String::from("fpr,tpr\n"),
            CurveKind::Pr => String::from("recall,precision\n"),
        };
        for p in &self.points {
            let _ = writeln!(out, "{},{}", p.x, p.y);
        }
        out
    }

    /// Minimal standalone SVG line plot, both axes on `[0, 1]`.
    pub fn to_svg(&self, title: &str) -> String {
        const SIZE: f64 = 400.0;
        const PAD: f64 = 50.0;
        let sx = |x: f64| PAD + x * SIZE;
        let sy = |y: f64| PAD + (1.0 - y) * SIZE;
        let (xlabel, ylabel) = match self.kind {
            CurveKind::Roc => ("False positive rate", "True positive rate"),
            CurveKind::Pr => ("Recall", "Precision"),
        };
        let pts: Vec<String> = self.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.y))).collect();
        let total = SIZE + 2.0 * PAD;
        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(svg, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
        for i in 0..=4 {
            let v = i as f64 / 4.0;
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#, sx(v), PAD + SIZE + 16.0);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#, PAD - 6.0, sy(v) + 4.0);
        }
        if self.kind == CurveKind::Roc {
            let _ = writeln!(svg, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4"/>"#, sx(0.0), sy(0.0), sx(1.0), sy(1.0));
        }
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, PAD + SIZE / 2.0, total - 8.0);
        let _ = writeln!(svg, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#, PAD + SIZE / 2.0, PAD + SIZE / 2.0);
        let _ = writeln!(svg, r#"<text x="{}" y="30" text-anchor="middle">{} (AUC = {:.4})</text>"#, PAD + SIZE / 2.0, xml_escape(title), self.auc);
        svg.push_str("</svg>\n");
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Everything reported for one trained-and-evaluated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub family: AttackFamily,
    /// Class counts of the dataset behind this run, as given by the caller.
    pub n_attack: usize,
    pub n_nonattack: usize,
    #[serde(default)]
    pub n_synthetic: usize,
    pub threshold: f64,
    pub confusion: ConfusionCounts,
    pub metrics: MetricSet,
    pub roc_auc: f64,
    pub pr_auc: f64,
}

/// Scores a test set and assembles the report plus both curves.
pub fn evaluate(
    scores: &[(f64, Class)],
    threshold: f64,
    family: AttackFamily,
    counts: (usize, usize, usize),
) -> Result<(EvalReport, CurveSeries, CurveSeries), MetricsError> {
    let confusion = confusion(scores, threshold)?;
    let metrics = metrics(&confusion)?;
    let roc = roc_curve(scores)?;
    let pr = pr_curve(scores)?;
    let report = EvalReport {
        family,
        n_attack: counts.0,
        n_nonattack: counts.1,
        n_synthetic: counts.2,
        threshold,
        confusion,
        metrics,
        roc_auc: roc.auc,
        pr_auc: pr.auc,
    };
    Ok((report, roc, pr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub family: AttackFamily,
    pub unbalanced: EvalReport,
    pub balanced: EvalReport,
}

pub fn report(before: &EvalReport, after: &EvalReport, family: AttackFamily) -> Result<ComparisonReport, MetricsError> {
    for r in [before, after] {
        if r.family != family {
            return Err(MetricsError::FamilyMismatch { before: family, after: r.family });
        }
    }
    Ok(ComparisonReport { family, unbalanced: before.clone(), balanced: after.clone() })
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

impl ComparisonReport {
    /// Aligned plain-text table, one block per run.
    pub fn to_text(&self) -> String {
        let header = ["Dataset", "Run", "Attack samples", "Non-attack samples", "Metric", "Result"];
        let mut rows: Vec<[String; 6]> = Vec::new();
        for (name, r) in [("unbalanced", &self.unbalanced), ("balanced", &self.balanced)] {
            let values = [
                ("Accuracy", pct(r.metrics.accuracy)),
                ("Precision", pct(r.metrics.precision)),
                ("Recall", pct(r.metrics.recall)),
                ("F1 score", pct(r.metrics.f1)),
                ("ROC AUC", format!("{:.4}", r.roc_auc)),
                ("PR AUC", format!("{:.4}", r.pr_auc)),
            ];
            for (i, (metric, value)) in values.into_iter().enumerate() {
                let first = i == 0;
                rows.push([
                    if first { self.family.to_string() } else { String::new() },
                    if first { name.to_string() } else { String::new() },
                    if first { r.n_attack.to_string() } else { String::new() },
                    if first { r.n_nonattack.to_string() } else { String::new() },
                    metric.to_string(),
                    value,
                ]);
            }
        }
        let widths: Vec<usize> = (0..6)
            .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap())
            .collect();
        let line = |cells: &[&str]| -> String {
            let body: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            format!("| {} |\n", body.join(" | "))
        };
        let rule = format!("+{}+\n", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("+"));
        let mut out = rule.clone();
        out.push_str(&line(&header));
        out.push_str(&rule);
        for (i, r) in rows.iter().enumerate() {
            let cells: Vec<&str> = r.iter().map(String::as_str).collect();
            out.push_str(&line(&cells));
            if i % 6 == 5 {
                out.push_str(&rule);
            }
        }
        out
    }
}
