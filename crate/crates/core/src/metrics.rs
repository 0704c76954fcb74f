// SPDX-License-Identifier: MIT OR Apache-2.0

//! Classification and text-similarity metrics.

use std::collections::{BTreeSet, HashMap};

use crate::synthdata::TokenId;

/// Macro-averaged F1 over the classes that occur in `y_true` or among the
/// valid predictions. A `None` prediction is a miss for its true class.
/// Returns a value in `[0, 1]`; an empty input scores 0.
pub fn macro_f1(y_true: &[usize], y_pred: &[Option<usize>]) -> f64 {
    assert_eq!(y_true.len(), y_pred.len(), "label lists differ in length");
    let classes: BTreeSet<usize> = y_true
        .iter()
        .copied()
        .chain(y_pred.iter().flatten().copied())
        .collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &k in &classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&t, p) in y_true.iter().zip(y_pred) {
            match (t == k, *p == Some(k)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    sum / classes.len() as f64
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    hits as f64 / y_true.len() as f64
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus-level BLEU-`max_n` with one reference per candidate: clipped
/// n-gram precisions for orders `1..=max_n`, uniform-weight geometric mean,
/// times the brevity penalty. Any zero precision gives 0.
pub fn corpus_bleu(candidates: &[Vec<TokenId>], references: &[Vec<TokenId>], max_n: usize) -> f64 {
    assert_eq!(candidates.len(), references.len(), "corpus sizes differ");
    assert!(max_n >= 1);
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (g, cnt) in ngram_counts(c, n) {
                matched[n - 1] += cnt.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        if matched[n] == 0 || total[n] == 0 {
            return 0.0;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    bp * (log_sum / max_n as f64).exp()
}

/// Bag-of-tokens F1 between candidate and reference, averaged over pairs.
/// Stands in for embedding-based similarity scores.
pub fn overlap_score(candidates: &[Vec<TokenId>], references: &[Vec<TokenId>]) -> f64 {
    assert_eq!(candidates.len(), references.len(), "corpus sizes differ");
    if candidates.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        let cc = ngram_counts(c, 1);
        let rc = ngram_counts(r, 1);
        let common: usize = cc
            .iter()
            .map(|(g, &n)| n.min(rc.get(g).copied().unwrap_or(0)))
            .sum();
        if common > 0 {
            let p = common as f64 / c.len() as f64;
            let rcl = common as f64 / r.len() as f64;
            sum += 2.0 * p * rcl / (p + rcl);
        }
    }
    sum / candidates.len() as f64
}
