//! Pooling local topics into one matrix over the shared vocabulary: words a
//! segment never saw are filled with zeros, rows are optionally smoothed by a
//! constant epsilon, then normalized for cosine clustering.

use crate::error::{CldaError, Result};
use crate::gibbs::LocalTopicSet;

/// (segment, local topic index) origin of a pooled matrix row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RowProvenance {
    pub segment_key: String,
    pub local_index: usize,
}

/// The pooled topic matrix: one row per surviving local topic, all rows over
/// the same vocabulary width. Rows that normalized to zero are dropped and
/// recorded in `dropped`.
#[derive(Debug, Clone)]
pub struct TopicMatrix {
    pub vocab_size: usize,
    pub rows: Vec<Vec<f64>>,
    pub provenance: Vec<RowProvenance>,
    pub dropped: Vec<RowProvenance>,
}

impl TopicMatrix {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Normalization applied to pooled rows before clustering. Cosine distance is
/// scale-invariant, so the choice changes stored centroids but not cluster
/// assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    /// Unit Euclidean norm.
    #[default]
    L2,
    /// Entries sum to 1.
    L1,
}

/// Expands one topic vector from its local vocabulary into the global space:
/// entry i of `values` lands at word id `local_vocab[i]`, every other word
/// gets zero.
pub fn align_to_global(values: &[f64], local_vocab: &[usize], vocab_size: usize) -> Result<Vec<f64>> {
    if values.len() != local_vocab.len() {
        return Err(CldaError::Corrupt(format!(
            "topic has {} entries but the local vocabulary lists {} words",
            values.len(),
            local_vocab.len()
        )));
    }
    let mut row = vec![0.0; vocab_size];
    for (&value, &word) in values.iter().zip(local_vocab) {
        if word >= vocab_size {
            return Err(CldaError::Corrupt(format!(
                "topic references word id {word} beyond the vocabulary size {vocab_size}"
            )));
        }
        row[word] = value;
    }
    Ok(row)
}

/// Aligns every topic of one segment into the global vocabulary space.
pub fn align_topic_set(local: &LocalTopicSet, vocab_size: usize) -> Result<Vec<Vec<f64>>> {
    local
        .topics
        .iter()
        .map(|t| align_to_global(&t.probs, &local.local_vocab, vocab_size))
        .collect()
}

/// Adds `epsilon` to every entry of every row. Zero is the identity.
pub fn smooth(mut rows: Vec<Vec<f64>>, epsilon: f64) -> Vec<Vec<f64>> {
    if epsilon != 0.0 {
        for row in &mut rows {
            for v in row {
                *v += epsilon;
            }
        }
    }
    rows
}

/// Scales each row to unit norm. Rows with zero norm cannot be normalized;
/// they are dropped and their input indices returned.
pub fn normalize_rows(rows: Vec<Vec<f64>>, norm: Norm) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut kept = Vec::with_capacity(rows.len());
    let mut dropped = Vec::new();
    for (i, mut row) in rows.into_iter().enumerate() {
        let scale = match norm {
            Norm::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::L1 => row.iter().map(|v| v.abs()).sum::<f64>(),
        };
        if scale == 0.0 {
            dropped.push(i);
            continue;
        }
        for v in &mut row {
            *v /= scale;
        }
        kept.push(row);
    }
    (kept, dropped)
}

/// Builds the pooled matrix: per input set (in the given order), align each
/// topic to the global vocabulary, smooth, normalize, and concatenate in
/// local-topic-index order, recording provenance per row.
pub fn merge_all(
    locals: &[LocalTopicSet],
    vocab_size: usize,
    epsilon: f64,
    norm: Norm,
) -> Result<TopicMatrix> {
    if locals.is_empty() {
        return Err(CldaError::Config("merge requires at least one local topic set".into()));
    }
    let mut rows = Vec::new();
    let mut provenance = Vec::new();
    for local in locals {
        let aligned = align_topic_set(local, vocab_size)?;
        for (i, row) in aligned.into_iter().enumerate() {
            rows.push(row);
            provenance.push(RowProvenance {
                segment_key: local.segment_key.clone(),
                local_index: i,
            });
        }
    }
    let smoothed = smooth(rows, epsilon);
    let (kept_rows, dropped_indices) = normalize_rows(smoothed, norm);
    let mut dropped = Vec::new();
    let mut kept_provenance = Vec::with_capacity(kept_rows.len());
    let drop_set: std::collections::HashSet<usize> = dropped_indices.into_iter().collect();
    for (i, p) in provenance.into_iter().enumerate() {
        if drop_set.contains(&i) {
            dropped.push(p);
        } else {
            kept_provenance.push(p);
        }
    }
    Ok(TopicMatrix {
        vocab_size,
        rows: kept_rows,
        provenance: kept_provenance,
        dropped,
    })
}
