//! Shared fixtures for the integration and acceptance suites: corpora
//! forward-sampled from the generative model with planted topics, plus
//! independent brute-force oracles kept separate from the library paths they
//! check.
//!
//! Each test binary uses its own subset.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub struct PlantedCorpus {
    /// The planted topic-word distributions, one row per topic.
    pub topics: Vec<Vec<f64>>,
    pub vocab_size: usize,
    /// (doc_id, segment_key, tokens)
    pub docs: Vec<(String, String, Vec<usize>)>,
}

/// Block-structured planted topics: topic g owns `vocab_size / num_topics`
/// consecutive words with within-block probability decaying geometrically by
/// rank. Adjacent ranks differ by 20%, so the top word list has no near-ties
/// at its boundary and recovery is unambiguous.
pub fn planted_topics(num_topics: usize, vocab_size: usize) -> Vec<Vec<f64>> {
    let block = vocab_size / num_topics;
    let ratio: f64 = 0.8;
    (0..num_topics)
        .map(|g| {
            let lo = g * block;
            let mut probs = vec![0.0; vocab_size];
            let norm: f64 = (0..block).map(|r| ratio.powi(r as i32)).sum();
            for rank in 0..block {
                probs[lo + rank] = ratio.powi(rank as i32) / norm;
            }
            probs
        })
        .collect()
}

fn sample_dirichlet(alpha: f64, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let sum: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= sum;
    }
    draws
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Forward-samples documents from the generative model: per document a topic
/// mixture from a symmetric Dirichlet, then one topic and one word per token.
/// Documents are dealt round-robin over `num_segments` segment keys.
pub fn forward_sample(
    topics: &[Vec<f64>],
    num_docs: usize,
    num_segments: usize,
    doc_len: std::ops::RangeInclusive<usize>,
    mixture_alpha: f64,
    seed: u64,
) -> PlantedCorpus {
    let vocab_size = topics[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..num_docs)
        .map(|d| {
            let theta = sample_dirichlet(mixture_alpha, topics.len(), &mut rng);
            let len = rng.gen_range(doc_len.clone());
            let tokens = (0..len)
                .map(|_| {
                    let z = sample_categorical(&theta, &mut rng);
                    sample_categorical(&topics[z], &mut rng)
                })
                .collect();
            (format!("d{d:05}"), format!("s{}", d % num_segments), tokens)
        })
        .collect();
    PlantedCorpus {
        topics: topics.to_vec(),
        vocab_size,
        docs,
    }
}

/// Writes the corpus in bag-of-words form plus its word list, returning the
/// two paths.
pub fn write_corpus(corpus: &PlantedCorpus, dir: &Path) -> (PathBuf, PathBuf) {
    let bow_path = dir.join("corpus.bow");
    let vocab_path = dir.join("words.txt");
    let mut bow = String::new();
    for (doc_id, segment, tokens) in &corpus.docs {
        let mut counts = std::collections::BTreeMap::new();
        for &t in tokens {
            *counts.entry(t).or_insert(0usize) += 1;
        }
        let body: Vec<String> = counts.iter().map(|(id, c)| format!("{id}:{c}")).collect();
        bow.push_str(&format!("{doc_id}\t{segment}\t{}\n", body.join(" ")));
    }
    fs::write(&bow_path, bow).unwrap();
    let words: Vec<String> = (0..corpus.vocab_size).map(|i| format!("w{i:04}")).collect();
    fs::write(&vocab_path, words.join("\n") + "\n").unwrap();
    (bow_path, vocab_path)
}

/// Top-n word ids of a probability row, ties at the boundary to the lower id.
/// Written against the raw definition, independent of the library's version.
pub fn naive_top_words(probs: &[f64], n: usize) -> BTreeSet<usize> {
    let mut ranked: Vec<(usize, f64)> = probs
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, p)| p > 0.0)
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.into_iter().take(n).map(|(i, _)| i).collect()
}

pub fn naive_jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    inter / union
}

pub fn naive_dice(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    2.0 * a.intersection(b).count() as f64 / (a.len() + b.len()) as f64
}

/// Quadratic-scan greedy matcher used as the oracle for the library version:
/// repeatedly takes the highest-Jaccard free pair, ties to the lowest A index
/// then the lowest B index.
pub fn naive_greedy_match(
    sets_a: &[BTreeSet<usize>],
    sets_b: &[BTreeSet<usize>],
) -> Vec<(usize, usize, f64, f64)> {
    let mut used_a = vec![false; sets_a.len()];
    let mut used_b = vec![false; sets_b.len()];
    let mut out = Vec::new();
    for _ in 0..sets_a.len().min(sets_b.len()) {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..sets_a.len() {
            if used_a[i] {
                continue;
            }
            for j in 0..sets_b.len() {
                if used_b[j] {
                    continue;
                }
                let score = naive_jaccard(&sets_a[i], &sets_b[j]);
                let take = match best {
                    None => true,
                    Some((_, _, s)) => score > s,
                };
                if take {
                    best = Some((i, j, score));
                }
            }
        }
        let (i, j, score) = best.unwrap();
        used_a[i] = true;
        used_b[j] = true;
        out.push((i, j, score, naive_dice(&sets_a[i], &sets_b[j])));
    }
    out
}

fn unit_vec(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective of one fixed partition: renormalized-mean centroids, sum of
/// squared cosine distances of members to their centroid.
pub fn partition_objective(rows: &[Vec<f64>], assignment: &[usize], k: usize) -> f64 {
    let dim = rows[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (row, &c) in rows.iter().zip(assignment) {
        counts[c] += 1;
        for (slot, &v) in sums[c].iter_mut().zip(row) {
            *slot += v;
        }
    }
    let centroids: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(sum, &n)| unit_vec(&sum.iter().map(|v| v / n.max(1) as f64).collect::<Vec<_>>()))
        .collect();
    rows.iter()
        .zip(assignment)
        .map(|(row, &c)| {
            let d = 1.0 - dot(&unit_vec(row), &centroids[c]);
            d * d
        })
        .sum()
}

/// Enumerates every partition of `n` items into exactly `k` non-empty
/// unlabeled groups (restricted growth strings) and returns the minimal
/// partition objective.
pub fn brute_force_optimum(rows: &[Vec<f64>], k: usize) -> f64 {
    fn recurse(
        i: usize,
        used: usize,
        n: usize,
        k: usize,
        current: &mut Vec<usize>,
        rows: &[Vec<f64>],
        best: &mut f64,
    ) {
        if i == n {
            if used == k {
                let obj = partition_objective(rows, current, k);
                if obj < *best {
                    *best = obj;
                }
            }
            return;
        }
        for c in 0..used.min(k) {
            current[i] = c;
            recurse(i + 1, used, n, k, current, rows, best);
        }
        if used < k {
            current[i] = used;
            recurse(i + 1, used + 1, n, k, current, rows, best);
        }
    }
    let mut best = f64::INFINITY;
    let mut current = vec![0usize; rows.len()];
    recurse(0, 0, rows.len(), k, &mut current, rows, &mut best);
    best
}

/// All size-`k` index combinations of `0..n`, for exhaustive-initialization
/// clustering runs.
pub fn index_combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn recurse(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            recurse(i + 1, n, k, current, out);
            current.pop();
        }
    }
    recurse(0, n, k, &mut current, &mut out);
    out
}

/// Recursively collects (relative path, bytes) of every file under `dir`,
/// skipping `manifest.txt` (it records wall-clock times).
pub fn artifact_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, base, out);
            } else if path.file_name().is_some_and(|n| n != "manifest.txt") {
                let rel = path.strip_prefix(base).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}
