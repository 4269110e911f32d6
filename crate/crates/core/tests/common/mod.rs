//! Brute-force reference implementations and fixture builders shared by
//! the integration tests. Nothing here calls into the code under test
//! except for plain data types.

#![allow(dead_code)]

use medner::formats::{GoldFile, GoldRecord, LogitFile, LogitRecord};
use medner::{Label, SubwordPrediction, NUM_LABELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LABELS: [&str; 19] = [
    "O",
    "B-ADE",
    "I-ADE",
    "B-Dosage",
    "I-Dosage",
    "B-Drug",
    "I-Drug",
    "B-Duration",
    "I-Duration",
    "B-Form",
    "I-Form",
    "B-Frequency",
    "I-Frequency",
    "B-Reason",
    "I-Reason",
    "B-Route",
    "I-Route",
    "B-Strength",
    "I-Strength",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn label(i: usize) -> Label {
    Label::new(i).unwrap()
}

pub fn idx(name: &str) -> usize {
    LABELS.iter().position(|l| *l == name).unwrap()
}

// ---- voting ----------------------------------------------------------

fn count_of(votes: &[usize], l: usize) -> usize {
    let mut n = 0;
    for &v in votes {
        if v == l {
            n += 1;
        }
    }
    n
}

/// Plurality label, ties to the smallest label string ("O" sorts last).
#[allow(clippy::needless_range_loop)]
pub fn oracle_max_vote(votes: &[usize]) -> usize {
    let mut best: Option<usize> = None;
    for l in 0..19 {
        let c = count_of(votes, l);
        best = match best {
            None => Some(l),
            Some(b) => {
                let cb = count_of(votes, b);
                if c > cb || (c == cb && LABELS[l] < LABELS[b]) {
                    Some(l)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.unwrap()
}

/// First label (by string order) reaching the threshold, else O.
pub fn oracle_majority(votes: &[usize], threshold: usize) -> usize {
    let mut names: Vec<&str> = LABELS.to_vec();
    names.sort();
    for name in names {
        if count_of(votes, idx(name)) >= threshold {
            return idx(name);
        }
    }
    0
}

// ---- grouping --------------------------------------------------------

pub fn oracle_first(pieces: &[[f64; 19]]) -> usize {
    let row = &pieces[0];
    let mut best = 0;
    for k in 0..19 {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

/// Enumerates every (subword, label) entry and sorts by value desc,
/// subword asc, label asc.
pub fn oracle_max(pieces: &[[f64; 19]]) -> (usize, usize) {
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for (s, row) in pieces.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            entries.push((v, s, k));
        }
    }
    entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    (entries[0].1, entries[0].2)
}

pub fn oracle_average(pieces: &[[f64; 19]]) -> ([f64; 19], usize) {
    let mut mean = [0.0; 19];
    for k in 0..19 {
        let mut s = 0.0;
        for row in pieces {
            s += row[k];
        }
        mean[k] = s / pieces.len() as f64;
    }
    let mut order: Vec<usize> = (0..19).collect();
    order.sort_by(|&a, &b| mean[b].partial_cmp(&mean[a]).unwrap().then(a.cmp(&b)));
    (mean, order[0])
}

// ---- metrics ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    /// (class, precision, recall, f1, support) for classes with any occurrence
    pub per_class: Vec<(usize, f64, f64, f64, usize)>,
    pub macro_prf: (f64, f64, f64),
    pub weighted_prf: (f64, f64, f64),
    pub accuracy: f64,
}

/// Per-class counting by independent scans over the data.
pub fn oracle_report(gold: &[usize], pred: &[usize], n_classes: usize, include_o: bool) -> OracleReport {
    let n = gold.len();
    let mut per_class = Vec::new();
    for c in 0..n_classes {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for i in 0..n {
            if gold[i] == c && pred[i] == c {
                tp += 1;
            } else if pred[i] == c {
                fp += 1;
            } else if gold[i] == c {
                fneg += 1;
            }
        }
        if tp + fp + fneg == 0 {
            continue;
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        per_class.push((c, p, r, f, tp + fneg));
    }
    let in_macro: Vec<_> = per_class.iter().filter(|x| include_o || x.0 != 0).collect();
    let m = in_macro.len() as f64;
    let macro_prf = if in_macro.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (
            in_macro.iter().map(|x| x.1).sum::<f64>() / m,
            in_macro.iter().map(|x| x.2).sum::<f64>() / m,
            in_macro.iter().map(|x| x.3).sum::<f64>() / m,
        )
    };
    let total = n as f64;
    let weighted_prf = (
        per_class.iter().map(|x| x.1 * x.4 as f64).sum::<f64>() / total,
        per_class.iter().map(|x| x.2 * x.4 as f64).sum::<f64>() / total,
        per_class.iter().map(|x| x.3 * x.4 as f64).sum::<f64>() / total,
    );
    let correct = (0..n).filter(|&i| gold[i] == pred[i]).count();
    OracleReport { per_class, macro_prf, weighted_prf, accuracy: correct as f64 / total }
}

/// B-X / I-X -> X, O -> O in the 10-class vocabulary.
pub fn oracle_collapse(i: usize) -> usize {
    if i == 0 {
        0
    } else {
        let name = &LABELS[i][2..];
        1 + ["ADE", "Dosage", "Drug", "Duration", "Form", "Frequency", "Reason", "Route", "Strength"]
            .iter()
            .position(|c| *c == name)
            .unwrap()
    }
}

// ---- linking ---------------------------------------------------------

/// Memoised recursive edit distance.
pub fn oracle_levenshtein(a: &str, b: &str) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == a.len() {
            b.len() - j
        } else if j == b.len() {
            a.len() - i
        } else if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo).min(go(a, b, i, j + 1, memo)).min(go(a, b, i + 1, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(&a, &b, 0, 0, &mut memo)
}

// ---- fixtures --------------------------------------------------------

/// 24-label gold pattern repeated four times (96 words).
pub const ENSEMBLE_PATTERN: [&str; 24] = [
    "O",
    "B-Drug",
    "I-Drug",
    "B-Strength",
    "I-Strength",
    "B-Form",
    "B-Route",
    "B-Frequency",
    "I-Frequency",
    "O",
    "B-Dosage",
    "B-Duration",
    "I-Duration",
    "O",
    "B-Reason",
    "I-Reason",
    "B-ADE",
    "I-ADE",
    "O",
    "B-Drug",
    "B-Strength",
    "O",
    "B-Form",
    "I-Form",
];

pub fn ensemble_gold() -> Vec<usize> {
    (0..96).map(|i| idx(ENSEMBLE_PATTERN[i % 24])).collect()
}

/// Model `m` is wrong exactly on words with `i % 8 == m`: entity words
/// become O, O words become B-Drug.
pub fn ensemble_model(m: usize) -> Vec<usize> {
    ensemble_gold()
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            if i % 8 != m {
                g
            } else if g == 0 {
                idx("B-Drug")
            } else {
                0
            }
        })
        .collect()
}

/// Logits peaking at `l` with some noise on the other entries.
pub fn peaked_logits(rng: &mut ChaCha8Rng, l: usize) -> [f64; NUM_LABELS] {
    let mut logits = [0.0; NUM_LABELS];
    for v in logits.iter_mut() {
        *v = rng.random_range(-2.0..1.0);
    }
    logits[l] = rng.random_range(2.0..5.0);
    logits
}

/// Random documents with gold labels and `n_models` logit files whose
/// word labels agree with gold with probability `accuracy`.
pub fn synthetic_corpus(n_docs: usize, n_models: usize, accuracy: f64, seed: u64) -> (GoldFile, Vec<LogitFile>) {
    let mut r = rng(seed);
    let mut gold = GoldFile::default();
    let mut files: Vec<LogitFile> =
        (0..n_models).map(|m| LogitFile { model_id: format!("model-{m}"), documents: Vec::new() }).collect();
    for d in 0..n_docs {
        let n_words = r.random_range(1..40);
        let labels: Vec<usize> =
            (0..n_words).map(|_| if r.random_bool(0.6) { 0 } else { r.random_range(1..19) }).collect();
        gold.documents.push(GoldRecord {
            doc_id: format!("doc-{d:03}"),
            words: (0..n_words).map(|i| format!("w{d}_{i}")).collect(),
            labels: labels.iter().map(|&l| label(l)).collect(),
        });
        for file in files.iter_mut() {
            let mut subwords = Vec::new();
            for (w, &g) in labels.iter().enumerate() {
                let l = if r.random_bool(accuracy) { g } else { r.random_range(0..19) };
                for piece in 0..r.random_range(1..4) {
                    subwords.push(SubwordPrediction {
                        text: if piece == 0 { format!("w{w}") } else { format!("##{piece}") },
                        word_index: w,
                        logits: peaked_logits(&mut r, l),
                    });
                }
            }
            file.documents.push(LogitRecord { doc_id: format!("doc-{d:03}"), subwords });
        }
    }
    (gold, files)
}
