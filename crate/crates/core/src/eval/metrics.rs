use serde::{Deserialize, Serialize};

use super::porter_stem;
use super::stats::{bucket_by_title_ratio, BUCKET_COUNT};

pub fn stem_phrase(phrase: &[String]) -> Vec<String> {
    phrase.iter().map(|w| porter_stem(w)).collect()
}

fn occurs_in(needle: &[String], haystack: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Splits phrases by whether their stemmed tokens occur contiguously in the
/// stemmed context. Order is preserved within each side.
pub fn split_present_absent(
    phrases: &[Vec<String>],
    context: &[String],
) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let stemmed = stem_phrase(context);
    phrases
        .iter()
        .cloned()
        .partition(|p| occurs_in(&stem_phrase(p), &stemmed))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    fn from_counts(correct: usize, predicted: usize, targets: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            correct as f64 / predicted as f64
        };
        let recall = if targets == 0 {
            0.0
        } else {
            correct as f64 / targets as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Scores {
            precision,
            recall,
            f1,
        }
    }
}

/// Drops later phrases whose stemmed form repeats an earlier one.
fn dedup_stemmed(phrases: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for p in phrases {
        let s = stem_phrase(p);
        if !s.is_empty() && !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// P/R/F1 of the top `k` already-stemmed predictions against stemmed
/// targets. Precision divides by the number of predictions actually in the
/// top `k`.
pub fn score_at_k(predictions: &[Vec<String>], targets: &[Vec<String>], k: usize) -> Scores {
    let top = &predictions[..k.min(predictions.len())];
    let correct = top.iter().filter(|p| targets.contains(p)).count();
    Scores::from_counts(correct, top.len(), targets.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAtK {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub at: Vec<MetricAtK>,
    /// Documents with at least one target, the ones averaged over.
    pub documents: usize,
    pub targets: usize,
    pub predictions: usize,
}

impl MetricTable {
    pub fn get(&self, k: usize) -> Option<&MetricAtK> {
        self.at.iter().find(|m| m.k == k)
    }
}

/// Macro-averaged P/R/F1 at every `k` over documents that have targets.
/// Matching is exact equality of stemmed token sequences; predictions and
/// targets are deduplicated by stemmed form first.
pub fn compute_metrics(
    predictions: &[Vec<Vec<String>>],
    targets: &[Vec<Vec<String>>],
    ks: &[usize],
) -> MetricTable {
    assert_eq!(
        predictions.len(),
        targets.len(),
        "one prediction list per document"
    );
    let mut sums = vec![Scores::default(); ks.len()];
    let (mut documents, mut n_targets, mut n_preds) = (0, 0, 0);
    for (preds, tgts) in predictions.iter().zip(targets) {
        let tgts = dedup_stemmed(tgts);
        if tgts.is_empty() {
            continue;
        }
        let preds = dedup_stemmed(preds);
        documents += 1;
        n_targets += tgts.len();
        n_preds += preds.len();
        for (sum, &k) in sums.iter_mut().zip(ks) {
            let s = score_at_k(&preds, &tgts, k);
            sum.precision += s.precision;
            sum.recall += s.recall;
            sum.f1 += s.f1;
        }
    }
    let n = documents.max(1) as f64;
    MetricTable {
        at: ks
            .iter()
            .zip(&sums)
            .map(|(&k, s)| MetricAtK {
                k,
                precision: s.precision / n,
                recall: s.recall / n,
                f1: s.f1 / n,
            })
            .collect(),
        documents,
        targets: n_targets,
        predictions: n_preds,
    }
}

/// One document to evaluate: normalized context, title length, gold
/// keyphrases, and ranked post-processed predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInput {
    pub context: Vec<String>,
    pub title_len: usize,
    pub targets: Vec<Vec<String>>,
    pub predictions: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub f1_at_5: f64,
    pub f1_at_10: f64,
    pub r_at_10: f64,
    pub r_at_50: f64,
    pub documents: usize,
    pub targets: usize,
    pub predictions: usize,
}

impl SplitReport {
    fn from_table(t: &MetricTable) -> Self {
        let at = |k| t.get(k).unwrap();
        SplitReport {
            f1_at_5: at(5).f1,
            f1_at_10: at(10).f1,
            r_at_10: at(10).recall,
            r_at_50: at(50).recall,
            documents: t.documents,
            targets: t.targets,
            predictions: t.predictions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    /// 1 to 5, by increasing title length ratio.
    pub bucket: u8,
    pub documents: usize,
    pub present_f1_at_5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub present: SplitReport,
    pub absent: SplitReport,
    pub buckets: Vec<BucketReport>,
}

const KS: [usize; 3] = [5, 10, 50];

/// Present and absent scores (targets and predictions are both split by
/// occurrence in the context) plus present F1@5 per title-ratio bucket.
pub fn evaluate(docs: &[EvalInput]) -> EvalReport {
    let mut present = (Vec::new(), Vec::new());
    let mut absent = (Vec::new(), Vec::new());
    let mut by_bucket: Vec<(Vec<Vec<Vec<String>>>, Vec<Vec<Vec<String>>>)> =
        vec![(Vec::new(), Vec::new()); BUCKET_COUNT];
    let mut bucket_docs = [0usize; BUCKET_COUNT];
    for d in docs {
        let (tp, ta) = split_present_absent(&d.targets, &d.context);
        let (pp, pa) = split_present_absent(&d.predictions, &d.context);
        if let Some(b) = bucket_by_title_ratio(d.title_len, d.context.len()) {
            let i = usize::from(b - 1);
            bucket_docs[i] += 1;
            by_bucket[i].0.push(pp.clone());
            by_bucket[i].1.push(tp.clone());
        }
        present.0.push(pp);
        present.1.push(tp);
        absent.0.push(pa);
        absent.1.push(ta);
    }
    let buckets = by_bucket
        .iter()
        .enumerate()
        .map(|(i, (p, t))| BucketReport {
            bucket: i as u8 + 1,
            documents: bucket_docs[i],
            present_f1_at_5: compute_metrics(p, t, &[5]).at[0].f1,
        })
        .collect();
    EvalReport {
        documents: docs.len(),
        present: SplitReport::from_table(&compute_metrics(&present.0, &present.1, &KS)),
        absent: SplitReport::from_table(&compute_metrics(&absent.0, &absent.1, &KS)),
        buckets,
    }
}

impl EvalReport {
    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut s = format!("documents: {}\n\n", self.documents);
        s.push_str("split     F1@5    F1@10   R@10    R@50    docs  targets  preds\n");
        for (name, r) in [("present", &self.present), ("absent", &self.absent)] {
            s.push_str(&format!(
                "{:<8}  {:.4}  {:.4}  {:.4}  {:.4}  {:>4}  {:>7}  {:>5}\n",
                name,
                r.f1_at_5,
                r.f1_at_10,
                r.r_at_10,
                r.r_at_50,
                r.documents,
                r.targets,
                r.predictions
            ));
        }
        s.push_str("\ntitle ratio  docs  present F1@5\n");
        for (b, label) in self
            .buckets
            .iter()
            .zip(["<3%", "3-6%", "6-9%", "9-12%", ">=12%"])
        {
            s.push_str(&format!(
                "{:<11}  {:>4}  {:.4}\n",
                label, b.documents, b.present_f1_at_5
            ));
        }
        s
    }
}
