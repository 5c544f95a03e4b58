//! Reference-based baseline metrics: single-reference BLEU and ROUGE-L,
//! implemented from their standard definitions.
//!
//! These exist as comparison rows in the correlation report; they are not
//! part of the judge pipeline itself.

/// Lowercased token sequence produced by [`tokenize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Numerator floor applied to zero n-gram match counts so the geometric
/// mean stays finite on disjoint inputs.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Lowercase, split on whitespace, and detach leading/trailing ASCII
/// punctuation as separate tokens. Interior punctuation (e.g. `don't`,
/// `112(a)`) is left in place.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        while start < end && chars[start].is_ascii_punctuation() {
            start += 1;
        }
        while end > start && chars[end - 1].is_ascii_punctuation() {
            end -= 1;
        }
        for c in &chars[..start] {
            tokens.push(c.to_string());
        }
        if start < end {
            tokens.push(chars[start..end].iter().collect());
        }
        for c in &chars[end..] {
            tokens.push(c.to_string());
        }
    }
    TokenSequence { tokens }
}

/// ROUGE-L precision/recall/F components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Single-reference BLEU: geometric mean of modified n-gram precisions for
/// n = 1..=max_n times the brevity penalty.
///
/// Orders where the candidate has no n-grams at all (candidate shorter than
/// n) are skipped rather than zeroed; orders with zero matches are smoothed
/// with [`BLEU_EPSILON`]. An empty candidate scores 0.0 by definition.
pub fn bleu(candidate: &TokenSequence, reference: &TokenSequence, max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    let c_len = candidate.len();
    let r_len = reference.len();
    if c_len == 0 {
        return 0.0;
    }

    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=max_n {
        if c_len < n {
            continue;
        }
        let (matches, total) = modified_precision_counts(&candidate.tokens, &reference.tokens, n);
        let numerator = if matches == 0 {
            BLEU_EPSILON
        } else {
            matches as f64
        };
        log_sum += (numerator / total as f64).ln();
        orders += 1;
    }
    debug_assert!(orders > 0);

    let brevity = if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    brevity * (log_sum / orders as f64).exp()
}

/// Clipped n-gram match count and total candidate n-gram count for order `n`.
fn modified_precision_counts(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    use std::collections::HashMap;
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    for gram in reference.windows(n) {
        *ref_counts.entry(gram).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&[String], usize> = HashMap::new();
    for gram in candidate.windows(n) {
        *cand_counts.entry(gram).or_insert(0) += 1;
    }
    let total: usize = cand_counts.values().sum();
    let matches: usize = cand_counts
        .iter()
        .map(|(gram, count)| (*count).min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (matches, total)
}

/// ROUGE-L with the balanced F1 (beta = 1).
pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> RougeL {
    rouge_l_weighted(candidate, reference, 1.0)
}

/// ROUGE-L with a configurable beta; beta > 1 weights recall more heavily.
pub fn rouge_l_weighted(candidate: &TokenSequence, reference: &TokenSequence, beta: f64) -> RougeL {
    if candidate.is_empty() || reference.is_empty() {
        return RougeL {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let lcs = lcs_length(&candidate.tokens, &reference.tokens) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        let b2 = beta * beta;
        (1.0 + b2) * precision * recall / (recall + b2 * precision)
    };
    RougeL {
        precision,
        recall,
        f1,
    }
}

/// Longest common subsequence length, dynamic programming over two rows.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
