//! Evaluation metrics for both task modes.
//!
//! Multi-class corpora are scored with macro-F1, accuracy, and Cohen's
//! kappa; multi-label corpora with ROC-AUC, PR-AUC, and thresholded
//! accuracy over positives paired with sampled negatives. The AUC
//! implementations group tied scores into one operating point, which makes
//! ROC-AUC equal the concordant-pair fraction with half credit for ties.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Polarity, Triple};
use crate::error::MetricsError;

/// Which task mode a report was computed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultiClass,
    MultiLabel,
}

/// Metric suite for one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: TaskKind,
    pub n_samples: usize,
    pub accuracy: f64,
    pub macro_f1: Option<f64>,
    pub kappa: Option<f64>,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "mode,n_samples,accuracy,macro_f1,kappa,roc_auc,pr_auc";

    /// One CSV row matching [`Self::CSV_HEADER`]; absent metrics are empty.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mode = match self.mode {
            TaskKind::MultiClass => "multiclass",
            TaskKind::MultiLabel => "multilabel",
        };
        format!(
            "{mode},{},{},{},{},{},{}",
            self.n_samples,
            self.accuracy,
            opt(self.macro_f1),
            opt(self.kappa),
            opt(self.roc_auc),
            opt(self.pr_auc),
        )
    }
}

fn check_lengths(predictions: usize, labels: usize) -> Result<(), MetricsError> {
    if predictions != labels {
        return Err(MetricsError::LengthMismatch { predictions, labels });
    }
    if predictions == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn check_range(values: &[usize], n_types: usize) -> Result<(), MetricsError> {
    for &v in values {
        if v >= n_types {
            return Err(MetricsError::LabelOutOfRange { label: v, n_types });
        }
    }
    Ok(())
}

/// Unweighted mean over all `n_types` of the per-type harmonic mean of
/// precision and recall; a type with zero precision-plus-recall
/// contributes 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], n_types: usize) -> Result<f64, MetricsError> {
    check_lengths(predictions.len(), labels.len())?;
    check_range(predictions, n_types)?;
    check_range(labels, n_types)?;
    let mut tp = vec![0usize; n_types];
    let mut pred_count = vec![0usize; n_types];
    let mut label_count = vec![0usize; n_types];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        }
        pred_count[p] += 1;
        label_count[l] += 1;
    }
    let mut sum = 0.0;
    for r in 0..n_types {
        let precision = if pred_count[r] > 0 { tp[r] as f64 / pred_count[r] as f64 } else { 0.0 };
        let recall = if label_count[r] > 0 { tp[r] as f64 / label_count[r] as f64 } else { 0.0 };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(sum / n_types as f64)
}

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, MetricsError> {
    check_lengths(predictions.len(), labels.len())?;
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Chance-corrected agreement `(P_o - P_e) / (1 - P_e)`; defined as 0 with
/// a warning when chance agreement is exactly 1.
pub fn cohens_kappa(predictions: &[usize], labels: &[usize], n_types: usize) -> Result<f64, MetricsError> {
    check_lengths(predictions.len(), labels.len())?;
    check_range(predictions, n_types)?;
    check_range(labels, n_types)?;
    let n = predictions.len() as f64;
    let p_o = accuracy(predictions, labels)?;
    let mut pred_marginal = vec![0usize; n_types];
    let mut label_marginal = vec![0usize; n_types];
    for (&p, &l) in predictions.iter().zip(labels) {
        pred_marginal[p] += 1;
        label_marginal[l] += 1;
    }
    let p_e: f64 = pred_marginal
        .iter()
        .zip(&label_marginal)
        .map(|(&a, &b)| (a as f64 / n) * (b as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        log::warn!("kappa undefined (chance agreement 1); reporting 0");
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Group samples by descending score; each group of tied scores is one
/// operating point with its positive and negative counts.
fn score_groups(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut pos = 0;
        let mut neg = 0;
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        groups.push((pos, neg));
    }
    groups
}

/// Area under the ROC curve by step summation over score-sorted operating
/// points, with tied scores grouped (trapezoid within a group).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let total_pos = labels.iter().filter(|&&l| l).count();
    let total_neg = labels.len() - total_pos;
    if total_pos == 0 || total_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut tp = 0usize;
    let mut area = 0.0;
    for (pos, neg) in score_groups(scores, labels) {
        area += (tp as f64 + pos as f64 / 2.0) * neg as f64;
        tp += pos;
    }
    Ok(area / (total_pos as f64 * total_neg as f64))
}

/// Area under the precision-recall curve by step summation `sum P_k * dR_k`
/// over score-sorted operating points with tied scores grouped.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let total_pos = labels.iter().filter(|&&l| l).count();
    let total_neg = labels.len() - total_pos;
    if total_pos == 0 || total_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (pos, neg) in score_groups(scores, labels) {
        tp += pos;
        seen += pos + neg;
        let precision = tp as f64 / seen as f64;
        let recall = tp as f64 / total_pos as f64;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    Ok(area)
}

/// For each positive triple, sample one negative pair uniformly among the
/// pairs that are not positive for that type. Output interleaves each
/// positive with its negative.
pub fn negative_sample<R: Rng>(
    triples: &[Triple],
    corpus: &Corpus,
    rng: &mut R,
) -> Result<Vec<Triple>, MetricsError> {
    use std::collections::BTreeSet;

    let n_drugs = corpus.drugs().len();
    let total_pairs = n_drugs * (n_drugs - 1) / 2;
    let mut positive_pairs: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); corpus.n_types()];
    for t in corpus.triples() {
        if t.polarity == Polarity::Positive {
            let key = (t.u.0.min(t.v.0), t.u.0.max(t.v.0));
            positive_pairs[t.i].insert(key);
        }
    }

    let mut out = Vec::with_capacity(triples.len() * 2);
    for t in triples.iter().filter(|t| t.polarity == Polarity::Positive) {
        if positive_pairs[t.i].len() >= total_pairs {
            return Err(MetricsError::TypeSaturated { type_id: t.i });
        }
        out.push(t.clone());
        loop {
            let a = rng.random_range(0..n_drugs);
            let b = rng.random_range(0..n_drugs);
            if a == b {
                continue;
            }
            if positive_pairs[t.i].contains(&(a.min(b), a.max(b))) {
                continue;
            }
            out.push(Triple {
                u: crate::corpus::DrugIdx(a),
                i: t.i,
                v: crate::corpus::DrugIdx(b),
                polarity: Polarity::Negative,
            });
            break;
        }
    }
    Ok(out)
}
