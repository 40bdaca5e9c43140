//! Verification, matching and retrieval measures over descriptor distances.
//!
//! Every ranking orders by score (or distance) and breaks ties by ascending
//! original index.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::Descriptors;
use crate::error::{Error, Result};
use crate::matching::{Metric, Pairing};
use crate::weaklearners::{Label, LabeledPair};

/// Higher score means more likely positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub score: f64,
    pub label: Label,
}

impl ScoredExample {
    pub fn new(score: f64, label: Label) -> Self {
        Self { score, label }
    }
}

fn class_counts(examples: &[ScoredExample]) -> Result<(usize, usize)> {
    let p = examples.iter().filter(|e| e.label.is_positive()).count();
    let n = examples.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    Ok((p, n))
}

/// Indices sorted by descending score, ties by ascending index.
fn rank_descending(examples: &[ScoredExample]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.sort_by(|&a, &b| examples[b].score.total_cmp(&examples[a].score).then(a.cmp(&b)));
    idx
}

/// False-positive rate at the first score threshold whose recall reaches
/// `recall_target`. Examples sharing a score enter together.
pub fn fpr_at_recall(examples: &[ScoredExample], recall_target: f64) -> Result<f64> {
    let (p, n) = class_counts(examples)?;
    let order = rank_descending(examples);
    let needed = recall_target * p as f64 - 1e-9;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let score = examples[order[i]].score;
        while i < order.len() && examples[order[i]].score == score {
            if examples[order[i]].label.is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp as f64 >= needed {
            break;
        }
    }
    Ok(fp as f64 / n as f64)
}

/// FPR at 95% recall.
pub fn fpr95(examples: &[ScoredExample]) -> Result<f64> {
    fpr_at_recall(examples, 0.95)
}

/// `P(score_pos > score_neg) + ½·P(score_pos = score_neg)`.
pub fn roc_auc(examples: &[ScoredExample]) -> Result<f64> {
    let (p, n) = class_counts(examples)?;
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.sort_by(|&a, &b| examples[a].score.total_cmp(&examples[b].score));
    let mut negatives_below = 0usize;
    // Twice the winning pair count keeps the half credit for ties exact.
    let mut doubled = 0u128;
    let mut i = 0;
    while i < idx.len() {
        let score = examples[idx[i]].score;
        let (mut gp, mut gn) = (0usize, 0usize);
        while i < idx.len() && examples[idx[i]].score == score {
            if examples[idx[i]].label.is_positive() {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        doubled += (gp as u128) * (2 * negatives_below as u128 + gn as u128);
        negatives_below += gn;
    }
    Ok(doubled as f64 / (2.0 * p as f64 * n as f64))
}

/// Mean over relevant ranks `r` of the precision within the top `r`.
pub fn average_precision(ranked_relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoRelevant);
    }
    Ok(sum / hits as f64)
}

/// AP of examples ranked by descending score.
pub fn average_precision_scored(examples: &[ScoredExample]) -> Result<f64> {
    let ranked: Vec<bool> = rank_descending(examples).into_iter().map(|i| examples[i].label.is_positive()).collect();
    average_precision(&ranked)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub ap: f64,
    pub auc: f64,
    pub fpr95: f64,
}

/// Scores every pair by negated distance between its two descriptors.
pub fn verification_scores(pairs: &[LabeledPair], descriptors: &Descriptors, metric: Metric) -> Result<Vec<ScoredExample>> {
    let pairing = Pairing::new(descriptors, descriptors, metric)?;
    let n = descriptors.len();
    pairs
        .iter()
        .map(|p| {
            for i in [p.x, p.y] {
                if i >= n {
                    return Err(Error::MissingDescriptor(i));
                }
            }
            Ok(ScoredExample::new(-pairing.distance(p.x, p.y), p.label))
        })
        .collect()
}

pub fn eval_verification(pairs: &[LabeledPair], descriptors: &Descriptors, metric: Metric) -> Result<VerificationResult> {
    let scored = verification_scores(pairs, descriptors, metric)?;
    Ok(VerificationResult { ap: average_precision_scored(&scored)?, auc: roc_auc(&scored)?, fpr95: fpr95(&scored)? })
}

/// One reference/target image pair with its ground-truth correspondences
/// `(reference index, target index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePairTask {
    pub reference: Descriptors,
    pub target: Descriptors,
    pub correspondences: Vec<(usize, usize)>,
}

/// 1-based rank of item `truth` when ordering by ascending distance, ties by
/// ascending index.
fn rank_of(distances: &[f64], truth: usize) -> usize {
    let d = distances[truth];
    1 + distances.iter().enumerate().filter(|&(j, &x)| x < d || (x == d && j < truth)).count()
}

fn validate_correspondences(task: &ImagePairTask) -> Result<()> {
    if task.correspondences.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let mut refs = HashSet::new();
    let mut targets = HashSet::new();
    for &(r, t) in &task.correspondences {
        if r >= task.reference.len() {
            return Err(Error::MissingDescriptor(r));
        }
        if t >= task.target.len() {
            return Err(Error::MissingDescriptor(t));
        }
        if !refs.insert(r) || !targets.insert(t) {
            return Err(Error::NotBijective);
        }
    }
    Ok(())
}

/// Mean AP of one image pair. Each reference ranks all target descriptors
/// and its single relevant item is the true correspondence, so its AP is
/// the reciprocal rank.
pub fn matching_ap(task: &ImagePairTask, metric: Metric) -> Result<f64> {
    validate_correspondences(task)?;
    let pairing = Pairing::new(&task.reference, &task.target, metric)?;
    let aps: Vec<f64> = task.correspondences.par_iter().map(|&(r, t)| 1.0 / rank_of(&pairing.row(r), t) as f64).collect();
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Mean over image pairs of the per-pair matching AP.
pub fn eval_matching(tasks: &[ImagePairTask], metric: Metric) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let aps = tasks.iter().map(|t| matching_ap(t, metric)).collect::<Result<Vec<_>>>()?;
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Retrieval query set against a pool of descriptors labelled by structure.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalTask {
    pub queries: Descriptors,
    pub query_ids: Vec<u32>,
    pub pool: Descriptors,
    pub pool_ids: Vec<u32>,
    /// Pool position of each query's own instance, excluded from its ranking.
    pub query_pool_index: Option<Vec<usize>>,
}

/// Per-query AP of the pool ranked by ascending distance, relevant items
/// sharing the query's structure id.
pub fn eval_retrieval(task: &RetrievalTask, metric: Metric) -> Result<f64> {
    if task.query_ids.len() != task.queries.len() || task.pool_ids.len() != task.pool.len() {
        return Err(Error::LengthMismatch("retrieval ids and descriptors differ in count".into()));
    }
    if let Some(own) = &task.query_pool_index {
        if own.len() != task.queries.len() {
            return Err(Error::LengthMismatch("one pool index per query required".into()));
        }
    }
    if task.queries.is_empty() {
        return Err(Error::NoRelevant);
    }
    let pairing = Pairing::new(&task.queries, &task.pool, metric)?;
    let aps = (0..task.queries.len())
        .into_par_iter()
        .map(|q| {
            let own = task.query_pool_index.as_ref().map(|v| v[q]);
            let d = pairing.row(q);
            let mut order: Vec<usize> = (0..d.len()).filter(|&j| Some(j) != own).collect();
            order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
            let ranked: Vec<bool> = order.iter().map(|&j| task.pool_ids[j] == task.query_ids[q]).collect();
            average_precision(&ranked).map_err(|_| Error::QueryStructureAbsent(q))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Named measures per variant, e.g. one row per difficulty subset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variants: BTreeMap<String, BTreeMap<String, f64>>,
}

impl EvalReport {
    pub fn insert(&mut self, variant: &str, measure: &str, value: f64) {
        self.variants.entry(variant.to_string()).or_default().insert(measure.to_string(), value);
    }

    /// Mean of each measure over the variants that report it.
    pub fn mean(&self) -> BTreeMap<String, f64> {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for measures in self.variants.values() {
            for (k, v) in measures {
                let e = sums.entry(k.clone()).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    /// `<variant>.<measure>=<value>` lines followed by `mean.<measure>=...`.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (variant, measures) in &self.variants {
            for (k, v) in measures {
                writeln!(s, "{variant}.{k}={v:.6}").expect("string write");
            }
        }
        for (k, v) in self.mean() {
            writeln!(s, "mean.{k}={v:.6}").expect("string write");
        }
        s
    }

    /// One row per variant plus a `mean` row; empty cells where a variant
    /// lacks a measure.
    pub fn to_csv(&self) -> String {
        let mean = self.mean();
        let columns: Vec<&String> = mean.keys().collect();
        let mut s = String::from("variant");
        for c in &columns {
            write!(s, ",{c}").expect("string write");
        }
        s.push('\n');
        let rows = self.variants.iter().map(|(n, m)| (n.as_str(), m)).chain(std::iter::once(("mean", &mean)));
        for (name, measures) in rows {
            s.push_str(name);
            for c in &columns {
                match measures.get(*c) {
                    Some(v) => write!(s, ",{v:.6}"),
                    None => write!(s, ","),
                }
                .expect("string write");
            }
            s.push('\n');
        }
        s
    }
}
