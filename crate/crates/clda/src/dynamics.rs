//! Global and local topic dynamics: how much of each segment each global
//! topic occupies, which local topics compose it there, and the segments
//! where it is absent entirely.

use std::collections::HashMap;

use crate::error::{CldaError, Result};
use crate::gibbs::LocalTopicSet;
use crate::kmeans::Clustering;
use crate::merge::TopicMatrix;
use crate::metrics::top_words;

/// How local-topic mass is accumulated from document mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassWeighting {
    /// Mixtures weighted by document token counts; long documents count more.
    #[default]
    Token,
    /// Every document counts once.
    Document,
}

/// (segment, local topic) -> global cluster lookup.
#[derive(Debug, Clone)]
pub struct TopicAssignments {
    pub num_clusters: usize,
    map: HashMap<(String, usize), usize>,
}

impl TopicAssignments {
    pub fn new(num_clusters: usize, entries: impl IntoIterator<Item = (String, usize, usize)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (segment, local_index, cluster) in entries {
            if cluster >= num_clusters {
                return Err(CldaError::Corrupt(format!(
                    "assignment of ({segment}, {local_index}) references cluster {cluster} of {num_clusters}"
                )));
            }
            map.insert((segment, local_index), cluster);
        }
        Ok(Self { num_clusters, map })
    }

    pub fn from_clustering(matrix: &TopicMatrix, clustering: &Clustering) -> Result<Self> {
        Self::new(
            clustering.centroids.len(),
            matrix
                .provenance
                .iter()
                .zip(&clustering.assignment)
                .map(|(p, &c)| (p.segment_key.clone(), p.local_index, c)),
        )
    }

    pub fn cluster_of(&self, segment: &str, local_index: usize) -> Option<usize> {
        self.map.get(&(segment.to_owned(), local_index)).copied()
    }
}

/// Mass carried by each local topic of one segment: the sum over training
/// documents of mixture weight times the document weight.
pub fn segment_topic_mass(local: &LocalTopicSet, weighting: MassWeighting) -> Vec<f64> {
    let num_topics = local.topics.len();
    let mut mass = vec![0.0; num_topics];
    for (mixture, &len) in local.doc_mixtures.iter().zip(&local.doc_lengths) {
        let weight = match weighting {
            MassWeighting::Token => len as f64,
            MassWeighting::Document => 1.0,
        };
        for (slot, &theta) in mass.iter_mut().zip(&mixture.props) {
            *slot += theta * weight;
        }
    }
    mass
}

/// proportions[s][g]: the fraction of segment s's topic mass sitting in
/// global topic g. Rows sum to 1 for segments with any clustered mass.
pub fn global_proportions(
    assignments: &TopicAssignments,
    locals: &[LocalTopicSet],
    weighting: MassWeighting,
) -> Vec<Vec<f64>> {
    locals
        .iter()
        .map(|local| {
            let mass = segment_topic_mass(local, weighting);
            let mut row = vec![0.0; assignments.num_clusters];
            let mut total = 0.0;
            for (i, &m) in mass.iter().enumerate() {
                if let Some(g) = assignments.cluster_of(&local.segment_key, i) {
                    row[g] += m;
                    total += m;
                }
            }
            if total > 0.0 {
                for v in &mut row {
                    *v /= total;
                }
            }
            row
        })
        .collect()
}

/// One local topic's share of a global topic within a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionEntry {
    pub local_index: usize,
    pub fraction: f64,
    /// Top word ids of the local topic, most probable first.
    pub top_word_ids: Vec<usize>,
}

/// Members of global topic `g` in segment `locals[segment_index]`, with their
/// contribution fractions (summing to 1) and top words. Empty when the global
/// topic has no member there.
pub fn local_composition(
    assignments: &TopicAssignments,
    locals: &[LocalTopicSet],
    g: usize,
    segment_index: usize,
    n_words: usize,
    weighting: MassWeighting,
) -> Vec<CompositionEntry> {
    let local = &locals[segment_index];
    let mass = segment_topic_mass(local, weighting);
    let members: Vec<usize> = (0..local.topics.len())
        .filter(|&i| assignments.cluster_of(&local.segment_key, i) == Some(g))
        .collect();
    let total: f64 = members.iter().map(|&i| mass[i]).sum();
    let mut entries: Vec<CompositionEntry> = members
        .into_iter()
        .map(|i| {
            let ws = top_words(&local.topics[i], n_words, (local.segment_key.clone(), i));
            // Order the set's ids by descending probability for display.
            let mut ids: Vec<usize> = ws.words.into_iter().collect();
            ids.sort_by(|&a, &b| {
                local.topics[i].probs[b]
                    .total_cmp(&local.topics[i].probs[a])
                    .then(a.cmp(&b))
            });
            CompositionEntry {
                local_index: i,
                fraction: if total > 0.0 { mass[i] / total } else { 0.0 },
                top_word_ids: ids,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.fraction
            .total_cmp(&a.fraction)
            .then(a.local_index.cmp(&b.local_index))
    });
    entries
}

/// Per-cluster presence across segments: the segments with no member local
/// topic, and the first/last segments where the cluster appears.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbsenceReport {
    /// absences[g]: segment indices where cluster g has no members.
    pub absences: Vec<Vec<usize>>,
    /// First present segment per cluster; None when never present.
    pub births: Vec<Option<usize>>,
    /// Last present segment per cluster.
    pub deaths: Vec<Option<usize>>,
}

pub fn birth_death(assignments: &TopicAssignments, locals: &[LocalTopicSet]) -> AbsenceReport {
    let k = assignments.num_clusters;
    let mut present = vec![vec![false; locals.len()]; k];
    for (s, local) in locals.iter().enumerate() {
        for i in 0..local.topics.len() {
            if let Some(g) = assignments.cluster_of(&local.segment_key, i) {
                present[g][s] = true;
            }
        }
    }
    let absences = present
        .iter()
        .map(|row| (0..locals.len()).filter(|&s| !row[s]).collect())
        .collect();
    let births = present
        .iter()
        .map(|row| row.iter().position(|&p| p))
        .collect();
    let deaths = present
        .iter()
        .map(|row| row.iter().rposition(|&p| p))
        .collect();
    AbsenceReport { absences, births, deaths }
}

/// Everything the dynamics report stage writes, assembled in one pass.
#[derive(Debug, Clone)]
pub struct DynamicsReport {
    pub segment_keys: Vec<String>,
    /// S x K proportion matrix in canonical segment order.
    pub proportions: Vec<Vec<f64>>,
    /// compositions[g][s]: members of global topic g in segment s.
    pub compositions: Vec<Vec<Vec<CompositionEntry>>>,
    pub absence: AbsenceReport,
}

pub fn analyze(
    assignments: &TopicAssignments,
    locals: &[LocalTopicSet],
    weighting: MassWeighting,
    n_words: usize,
) -> DynamicsReport {
    let proportions = global_proportions(assignments, locals, weighting);
    let compositions = (0..assignments.num_clusters)
        .map(|g| {
            (0..locals.len())
                .map(|s| local_composition(assignments, locals, g, s, n_words, weighting))
                .collect()
        })
        .collect();
    let absence = birth_death(assignments, locals);
    DynamicsReport {
        segment_keys: locals.iter().map(|l| l.segment_key.clone()).collect(),
        proportions,
        compositions,
        absence,
    }
}
