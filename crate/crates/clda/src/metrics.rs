//! Evaluation: held-out perplexity, representative word sets, Sørensen-Dice
//! and Jaccard overlap, and greedy one-to-one topic matching.

use std::collections::BTreeSet;

use crate::error::{CldaError, Result};
use crate::gibbs::TopicDistribution;

/// A topic's representative words: its `n` most probable word ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSet {
    pub words: BTreeSet<usize>,
    /// (model label, topic id) the set was extracted from.
    pub source: (String, usize),
    pub n: usize,
}

/// One matched topic pair with its similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPair {
    pub index_a: usize,
    pub index_b: usize,
    pub jaccard: f64,
    pub dice: f64,
}

/// Greedy one-to-one matching result, sorted by descending Jaccard.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchReport {
    pub pairs: Vec<MatchPair>,
}

impl MatchReport {
    pub fn mean_jaccard(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.jaccard).sum::<f64>() / self.pairs.len() as f64
    }
}

/// exp of the negative mean per-token log likelihood over all held-out
/// tokens. `doc_word_probs[d][i]` is P(w | d) for token i of document d.
pub fn perplexity(doc_word_probs: &[Vec<f64>]) -> Result<f64> {
    let mut log_sum = 0.0;
    let mut tokens = 0usize;
    for (doc_index, probs) in doc_word_probs.iter().enumerate() {
        for (token_index, &p) in probs.iter().enumerate() {
            if p.is_nan() || p <= 0.0 {
                return Err(CldaError::ZeroProbability { doc_index, token_index });
            }
            log_sum += p.ln();
            tokens += 1;
        }
    }
    if tokens == 0 {
        return Err(CldaError::Domain("perplexity over zero scorable tokens".into()));
    }
    Ok((-log_sum / tokens as f64).exp())
}

/// The `n` highest-probability word ids of a topic. Only words with positive
/// probability qualify; ties at the cutoff go to the lower word id.
pub fn top_words(topic: &TopicDistribution, n: usize, source: (String, usize)) -> WordSet {
    let mut ranked: Vec<(usize, f64)> = topic
        .probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| (i, p))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let words = ranked.into_iter().take(n).map(|(i, _)| i).collect();
    WordSet { words, source, n }
}

/// Sørensen-Dice coefficient 2|A∩B| / (|A| + |B|).
pub fn dice(a: &WordSet, b: &WordSet) -> Result<f64> {
    if a.words.is_empty() && b.words.is_empty() {
        return Err(CldaError::Domain("dice of two empty sets".into()));
    }
    let inter = a.words.intersection(&b.words).count();
    Ok(2.0 * inter as f64 / (a.words.len() + b.words.len()) as f64)
}

/// Jaccard index |A∩B| / |A∪B|.
pub fn jaccard(a: &WordSet, b: &WordSet) -> Result<f64> {
    if a.words.is_empty() && b.words.is_empty() {
        return Err(CldaError::Domain("jaccard of two empty sets".into()));
    }
    let inter = a.words.intersection(&b.words).count();
    let union = a.words.union(&b.words).count();
    Ok(inter as f64 / union as f64)
}

fn jaccard_or_zero(a: &WordSet, b: &WordSet) -> f64 {
    jaccard(a, b).unwrap_or(0.0)
}

fn dice_or_zero(a: &WordSet, b: &WordSet) -> f64 {
    dice(a, b).unwrap_or(0.0)
}

/// Repeatedly pairs the unassigned topics with the highest Jaccard overlap
/// (ties: lowest index in A, then in B) until one side is exhausted. The
/// report comes out sorted by descending Jaccard because each selected
/// maximum can only shrink.
pub fn greedy_match(sets_a: &[WordSet], sets_b: &[WordSet]) -> MatchReport {
    let mut free_a: Vec<bool> = vec![true; sets_a.len()];
    let mut free_b: Vec<bool> = vec![true; sets_b.len()];
    let rounds = sets_a.len().min(sets_b.len());
    let mut pairs = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, set_a) in sets_a.iter().enumerate() {
            if !free_a[i] {
                continue;
            }
            for (j, set_b) in sets_b.iter().enumerate() {
                if !free_b[j] {
                    continue;
                }
                let score = jaccard_or_zero(set_a, set_b);
                if best.is_none_or(|(_, _, s)| score > s) {
                    best = Some((i, j, score));
                }
            }
        }
        let (i, j, score) = best.expect("rounds bounded by remaining pairs");
        free_a[i] = false;
        free_b[j] = false;
        pairs.push(MatchPair {
            index_a: i,
            index_b: j,
            jaccard: score,
            dice: dice_or_zero(&sets_a[i], &sets_b[j]),
        });
    }
    MatchReport { pairs }
}

/// Elementwise mean of the given topics, renormalized to sum 1.
pub fn global_topic_mean(topics: &[TopicDistribution]) -> Result<TopicDistribution> {
    let first = topics
        .first()
        .ok_or_else(|| CldaError::Domain("mean of zero topics".into()))?;
    let dim = first.probs.len();
    let mut mean = vec![0.0; dim];
    for topic in topics {
        if topic.probs.len() != dim {
            return Err(CldaError::Corrupt("topics of mixed dimensions in mean".into()));
        }
        for (slot, &p) in mean.iter_mut().zip(&topic.probs) {
            *slot += p / topics.len() as f64;
        }
    }
    let sum: f64 = mean.iter().sum();
    if sum <= 0.0 {
        return Err(CldaError::Domain("mean topic has no mass".into()));
    }
    for v in &mut mean {
        *v /= sum;
    }
    Ok(TopicDistribution { probs: mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[usize]) -> WordSet {
        WordSet {
            words: ids.iter().copied().collect(),
            source: ("t".into(), 0),
            n: ids.len(),
        }
    }

    #[test]
    fn uniform_model_perplexity_equals_vocabulary_size() {
        for w in [2usize, 100, 10_000] {
            let p = 1.0 / w as f64;
            let probs = vec![vec![p; 7], vec![p; 3]];
            let perp = perplexity(&probs).unwrap();
            assert!((perp - w as f64).abs() / w as f64 <= 1e-9);
        }
    }

    #[test]
    fn two_half_probability_tokens_give_two() {
        let perp = perplexity(&[vec![0.5, 0.5]]).unwrap();
        assert!((perp - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_three_token_case_gives_four() {
        // exp(-(ln 0.5 + ln 0.25 + ln 0.125) / 3) = exp(2 ln 2) = 4.
        let perp = perplexity(&[vec![0.5, 0.25], vec![0.125]]).unwrap();
        assert!((perp - 4.0).abs() / 4.0 <= 1e-9);
    }

    #[test]
    fn zero_probability_is_reported_with_its_position() {
        let err = perplexity(&[vec![0.5], vec![0.3, 0.0]]).unwrap_err();
        match err {
            CldaError::ZeroProbability { doc_index, token_index } => {
                assert_eq!((doc_index, token_index), (1, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn top_words_orders_by_probability() {
        let t = TopicDistribution { probs: vec![0.5, 0.3, 0.2] };
        let ws = top_words(&t, 2, ("m".into(), 0));
        assert_eq!(ws.words, BTreeSet::from([0, 1]));
    }

    #[test]
    fn top_words_breaks_boundary_ties_by_word_id() {
        let t = TopicDistribution { probs: vec![0.4, 0.3, 0.3] };
        let ws = top_words(&t, 2, ("m".into(), 0));
        assert_eq!(ws.words, BTreeSet::from([0, 1]));
    }

    #[test]
    fn top_words_caps_at_positive_probability_words() {
        let t = TopicDistribution { probs: vec![0.6, 0.0, 0.4] };
        let ws = top_words(&t, 10, ("m".into(), 0));
        assert_eq!(ws.words, BTreeSet::from([0, 2]));
    }

    #[test]
    fn dice_and_jaccard_basics() {
        let a = set(&[1, 2, 3]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let b = set(&[4, 5]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn eighty_percent_overlap_of_twenty_words() {
        let a = set(&(0..20).collect::<Vec<_>>());
        let b = set(&(4..24).collect::<Vec<_>>());
        assert_eq!(a.words.intersection(&b.words).count(), 16);
        assert!((dice(&a, &b).unwrap() - 0.8).abs() < 1e-12);
        assert!((jaccard(&a, &b).unwrap() - 16.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn empty_pair_is_a_domain_error() {
        let e = set(&[]);
        assert!(matches!(dice(&e, &e), Err(CldaError::Domain(_))));
        assert!(matches!(jaccard(&e, &e), Err(CldaError::Domain(_))));
    }

    #[test]
    fn greedy_match_identity() {
        let sets = vec![set(&[1, 2]), set(&[3, 4]), set(&[5, 6])];
        let report = greedy_match(&sets, &sets);
        assert_eq!(report.pairs.len(), 3);
        for pair in &report.pairs {
            assert_eq!(pair.index_a, pair.index_b);
            assert_eq!(pair.jaccard, 1.0);
            assert_eq!(pair.dice, 1.0);
        }
    }

    #[test]
    fn greedy_match_hand_case() {
        let a = vec![set(&[1, 2]), set(&[3, 4])];
        let b = vec![set(&[3, 4]), set(&[5, 6])];
        let report = greedy_match(&a, &b);
        assert_eq!(report.pairs[0].index_a, 1);
        assert_eq!(report.pairs[0].index_b, 0);
        assert_eq!(report.pairs[0].jaccard, 1.0);
        assert_eq!(report.pairs[1].index_a, 0);
        assert_eq!(report.pairs[1].index_b, 1);
        assert_eq!(report.pairs[1].jaccard, 0.0);
    }

    #[test]
    fn greedy_match_is_sorted_descending() {
        let a = vec![set(&[1, 2, 3]), set(&[4, 5, 6]), set(&[7, 8, 9])];
        let b = vec![set(&[1, 2, 9]), set(&[4, 5, 6]), set(&[7, 0, 11])];
        let report = greedy_match(&a, &b);
        for w in report.pairs.windows(2) {
            assert!(w[0].jaccard >= w[1].jaccard);
        }
    }

    #[test]
    fn mean_of_one_topic_is_itself() {
        let t = TopicDistribution { probs: vec![0.25, 0.75] };
        let mean = global_topic_mean(std::slice::from_ref(&t)).unwrap();
        assert_eq!(mean.probs, t.probs);
    }

    #[test]
    fn mean_of_identical_topics_is_unchanged() {
        let t = TopicDistribution { probs: vec![0.1, 0.9] };
        let mean = global_topic_mean(&[t.clone(), t.clone()]).unwrap();
        for (a, b) in mean.probs.iter().zip(&t.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_of_point_masses_is_uniform_over_them() {
        let a = TopicDistribution { probs: vec![1.0, 0.0] };
        let b = TopicDistribution { probs: vec![0.0, 1.0] };
        let mean = global_topic_mean(&[a, b]).unwrap();
        assert_eq!(mean.probs, vec![0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn dice_jaccard_identity_and_bounds(
            a in proptest::collection::btree_set(0usize..40, 1..15),
            b in proptest::collection::btree_set(0usize..40, 1..15),
        ) {
            let sa = WordSet { words: a.clone(), source: ("a".into(), 0), n: a.len() };
            let sb = WordSet { words: b.clone(), source: ("b".into(), 0), n: b.len() };
            let d = dice(&sa, &sb).unwrap();
            let j = jaccard(&sa, &sb).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert!((dice(&sb, &sa).unwrap() - d).abs() < 1e-15);
            prop_assert!((jaccard(&sb, &sa).unwrap() - j).abs() < 1e-15);
            // S = 2J / (1 + J)
            prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
            prop_assert!((d == 1.0) == (a == b));
            prop_assert!((d == 0.0) == a.is_disjoint(&b));
        }
    }
}
