//! Spherical k-means over the pooled topic matrix: cosine distance, centroids
//! as renormalized member means, and best-of-N restart selection by squared
//! cosine error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CldaError, Result};
use crate::gibbs::{derive_seed, TAG_RESTART};
use crate::merge::TopicMatrix;

/// A clustering of the pooled topic matrix into K global topics.
#[derive(Debug, Clone)]
pub struct Clustering {
    /// K unit-norm centroids over the vocabulary.
    pub centroids: Vec<Vec<f64>>,
    /// Cluster id per matrix row.
    pub assignment: Vec<usize>,
    /// Sum over rows of squared cosine distance to the assigned centroid.
    pub objective: f64,
    pub restarts_run: usize,
    pub iterations_run: usize,
    /// Objective after each accepted Lloyd iteration; non-increasing.
    pub objective_trace: Vec<f64>,
}

/// Centroid initialization for [`multi_restart`].
#[derive(Debug, Clone)]
pub enum InitMode {
    /// Sample K distinct matrix rows per restart.
    RandomTopics,
    /// Use the given centroids (for example, topics from a full-corpus LDA
    /// run). Forces a single restart.
    Provided(Vec<Vec<f64>>),
}

/// 1 - cos(a, b), in [0, 2].
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CldaError::Domain(format!(
            "cosine distance over mismatched dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(CldaError::Domain("cosine distance of a zero-norm vector".into()));
    }
    Ok(1.0 - dot / (na.sqrt() * nb.sqrt()))
}

fn unit(row: &[f64]) -> Option<Vec<f64>> {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    Some(row.iter().map(|v| v / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nearest centroid per row by cosine distance; ties go to the lowest id.
/// Rows and centroids must be unit-norm.
fn assign_rows(rows: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    rows.iter()
        .map(|row| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = 1.0 - dot(row, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Renormalized member means. Clusters left empty are re-seeded with the
/// globally worst-fit rows (largest distance to their assigned centroid,
/// ties to the lower row index), one distinct row per empty cluster.
fn update_centroids(rows: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = rows[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (row, &c) in rows.iter().zip(assignment) {
        counts[c] += 1;
        for (slot, &v) in sums[c].iter_mut().zip(row) {
            *slot += v;
        }
    }
    let mut centroids: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(sum, &n)| {
            if n == 0 {
                None
            } else {
                let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
                // The mean of unit vectors can only be zero for antipodal
                // inputs; fall back to re-seeding in that case.
                unit(&mean)
            }
        })
        .collect();

    if centroids.iter().any(Option::is_none) {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let distance = |i: usize| {
            centroids[assignment[i]]
                .as_ref()
                .map(|c| 1.0 - dot(&rows[i], c))
                .unwrap_or(f64::INFINITY)
        };
        order.sort_by(|&a, &b| {
            distance(b)
                .partial_cmp(&distance(a))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut next = order.into_iter();
        for slot in centroids.iter_mut() {
            if slot.is_none() {
                let row = next.next().expect("k <= rows guarantees a re-seed row");
                *slot = Some(rows[row].clone());
            }
        }
    }
    centroids.into_iter().map(|c| c.unwrap()).collect()
}

fn objective_of(rows: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    rows.iter()
        .zip(assignment)
        .map(|(row, &c)| {
            let d = 1.0 - dot(row, &centroids[c]);
            d * d
        })
        .sum()
}

struct Step {
    assignment: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    objective: f64,
}

fn step(rows: &[Vec<f64>], centroids: &[Vec<f64>], k: usize) -> Step {
    let assignment = assign_rows(rows, centroids);
    let centroids = update_centroids(rows, &assignment, k);
    let objective = objective_of(rows, &centroids, &assignment);
    Step { assignment, centroids, objective }
}

fn unit_rows(matrix: &TopicMatrix) -> Result<Vec<Vec<f64>>> {
    matrix
        .rows
        .iter()
        .map(|r| unit(r).ok_or_else(|| CldaError::Corrupt("zero-norm row in topic matrix".into())))
        .collect()
}

fn validate_init(init: &[Vec<f64>], k: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if init.len() != k {
        return Err(CldaError::Config(format!(
            "expected {k} initial centroids, got {}",
            init.len()
        )));
    }
    init.iter()
        .map(|c| {
            if c.len() != dim {
                return Err(CldaError::Config(format!(
                    "initial centroid has dimension {}, matrix has {dim}",
                    c.len()
                )));
            }
            unit(c).ok_or_else(|| CldaError::Config("zero-norm initial centroid".into()))
        })
        .collect()
}

/// One assignment-then-update pass, exposed for stepwise inspection.
pub fn lloyd_step(matrix: &TopicMatrix, clustering: &Clustering) -> Result<Clustering> {
    let rows = unit_rows(matrix)?;
    let k = clustering.centroids.len();
    let s = step(&rows, &clustering.centroids, k);
    Ok(Clustering {
        centroids: s.centroids,
        assignment: s.assignment,
        objective: s.objective,
        restarts_run: clustering.restarts_run,
        iterations_run: clustering.iterations_run + 1,
        objective_trace: {
            let mut t = clustering.objective_trace.clone();
            t.push(s.objective);
            t
        },
    })
}

/// Lloyd iteration from the given initial centroids until assignments stop
/// changing, the objective improves by less than `tol`, or `max_iters` is
/// reached. The recorded objective trace never increases: a step that fails
/// to improve is not accepted.
pub fn kmeans(
    matrix: &TopicMatrix,
    k: usize,
    init_centroids: &[Vec<f64>],
    max_iters: usize,
    tol: f64,
) -> Result<Clustering> {
    if k < 1 || k > matrix.num_rows() {
        return Err(CldaError::Config(format!(
            "k must be in [1, {}], got {k}",
            matrix.num_rows()
        )));
    }
    let rows = unit_rows(matrix)?;
    let mut centroids = validate_init(init_centroids, k, matrix.vocab_size)?;
    let mut trace = Vec::new();
    let mut prev: Option<Step> = None;
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        let next = step(&rows, &centroids, k);
        iterations += 1;
        match &prev {
            None => {
                trace.push(next.objective);
                centroids = next.centroids.clone();
                prev = Some(next);
            }
            Some(p) => {
                if next.assignment == p.assignment {
                    trace.push(next.objective);
                    prev = Some(next);
                    break;
                }
                let improvement = p.objective - next.objective;
                if improvement < tol {
                    if next.objective < p.objective {
                        trace.push(next.objective);
                        prev = Some(next);
                    }
                    break;
                }
                trace.push(next.objective);
                centroids = next.centroids.clone();
                prev = Some(next);
            }
        }
    }
    let final_step = prev.expect("at least one iteration runs");
    Ok(Clustering {
        centroids: final_step.centroids,
        assignment: final_step.assignment,
        objective: final_step.objective,
        restarts_run: 1,
        iterations_run: iterations,
        objective_trace: trace,
    })
}

/// Samples `k` rows with pairwise-distinct values as initial centroids.
fn sample_row_init(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in order {
        if chosen.iter().any(|c| c == &rows[i]) {
            continue;
        }
        chosen.push(rows[i].clone());
        if chosen.len() == k {
            break;
        }
    }
    chosen
}

fn distinct_row_count(rows: &[Vec<f64>]) -> usize {
    let mut seen: std::collections::HashSet<Vec<u64>> = std::collections::HashSet::new();
    for row in rows {
        seen.insert(row.iter().map(|v| v.to_bits()).collect());
    }
    seen.len()
}

/// Runs k-means from `restarts` independent initializations and keeps the
/// result with the lowest objective (ties to the earliest restart). Restarts
/// run concurrently; the selection is a deterministic serial reduction.
pub fn multi_restart(
    matrix: &TopicMatrix,
    k: usize,
    restarts: usize,
    seed: u64,
    init_mode: InitMode,
    max_iters: usize,
    tol: f64,
) -> Result<Clustering> {
    if restarts < 1 {
        return Err(CldaError::Config("restarts must be at least 1".into()));
    }
    match init_mode {
        InitMode::Provided(init) => {
            let mut clustering = kmeans(matrix, k, &init, max_iters, tol)?;
            clustering.restarts_run = 1;
            Ok(clustering)
        }
        InitMode::RandomTopics => {
            let rows = unit_rows(matrix)?;
            let distinct = distinct_row_count(&rows);
            if k > distinct {
                return Err(CldaError::Config(format!(
                    "k = {k} exceeds the {distinct} distinct rows available for initialization"
                )));
            }
            let runs: Vec<Result<Clustering>> = (0..restarts)
                .into_par_iter()
                .map(|r| {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_RESTART, r as u64));
                    let init = sample_row_init(&rows, k, &mut rng);
                    kmeans(matrix, k, &init, max_iters, tol)
                })
                .collect();
            let mut best: Option<Clustering> = None;
            for run in runs {
                let clustering = run?;
                let better = match &best {
                    None => true,
                    Some(b) => clustering.objective < b.objective,
                };
                if better {
                    best = Some(clustering);
                }
            }
            let mut best = best.expect("restarts >= 1");
            best.restarts_run = restarts;
            Ok(best)
        }
    }
}
