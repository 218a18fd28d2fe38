//! Corpus ingestion: tokenization, vocabulary construction and pruning,
//! encoding to word ids, segment splitting, and the train/hold-out split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CldaError, Result};

/// Word <-> id table shared by every stage. Ids are contiguous from 0 and
/// follow the lexicographic order of the surviving words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (id, word) in words.iter().enumerate() {
            if index.insert(word.clone(), id).is_some() {
                return Err(CldaError::Corrupt(format!(
                    "duplicate vocabulary word {word:?}"
                )));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// One encoded document: a token-id sequence tagged with its segment key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub segment_key: String,
    pub tokens: Vec<usize>,
}

/// A raw (string-token) document prior to encoding.
#[derive(Debug, Clone)]
pub struct RawDocument {
    pub doc_id: String,
    pub segment_key: String,
    pub tokens: Vec<String>,
}

/// How segment keys are ordered into the canonical segment sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegmentOrder {
    /// Plain string order. Numeric keys must be zero-padded by the caller.
    #[default]
    Lexicographic,
    /// Keys parsed as signed integers; unparseable keys are an error.
    Numeric,
}

/// Encoded corpus with its shared vocabulary and canonical segment order.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocabulary: Arc<Vocabulary>,
    pub documents: Vec<Document>,
    pub segments: Vec<String>,
}

impl Corpus {
    /// Assembles a corpus, deriving the canonical segment list from the
    /// distinct keys present in `documents`.
    pub fn assemble(
        vocabulary: Arc<Vocabulary>,
        documents: Vec<Document>,
        order: SegmentOrder,
    ) -> Result<Self> {
        let keys: BTreeSet<&str> = documents.iter().map(|d| d.segment_key.as_str()).collect();
        let segments = sort_segment_keys(keys.into_iter().map(str::to_owned).collect(), order)?;
        Ok(Self {
            vocabulary,
            documents,
            segments,
        })
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }
}

/// One segment of a corpus. Shares the global vocabulary and records the set
/// of word ids actually occurring in its documents.
#[derive(Debug, Clone)]
pub struct SegmentCorpus {
    pub segment_key: String,
    pub vocabulary: Arc<Vocabulary>,
    pub documents: Vec<Document>,
    pub local_vocab: BTreeSet<usize>,
}

impl SegmentCorpus {
    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }
}

fn sort_segment_keys(mut keys: Vec<String>, order: SegmentOrder) -> Result<Vec<String>> {
    match order {
        SegmentOrder::Lexicographic => keys.sort(),
        SegmentOrder::Numeric => {
            let mut parsed = Vec::with_capacity(keys.len());
            for key in keys {
                let value: i64 = key.parse().map_err(|_| {
                    CldaError::Config(format!(
                        "segment key {key:?} is not numeric; use lexicographic ordering or fix the key"
                    ))
                })?;
                parsed.push((value, key));
            }
            parsed.sort();
            return Ok(parsed.into_iter().map(|(_, k)| k).collect());
        }
    }
    Ok(keys)
}

/// Lowercases and splits on runs of non-alphanumeric characters, dropping
/// empty tokens.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    raw_text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Builds the vocabulary from tokenized documents.
///
/// A word survives when it is not a stopword, occurs at least `min_count`
/// times in total, and appears in at least `ceil(min_doc_fraction * docs)`
/// distinct documents. Surviving words are ordered lexicographically.
pub fn build_vocabulary<T: AsRef<[String]>>(
    docs: &[T],
    stopwords: &HashSet<String>,
    min_count: usize,
    min_doc_fraction: f64,
) -> Result<Vocabulary> {
    let mut totals: HashMap<&str, usize> = HashMap::new();
    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        let mut seen: HashSet<&str> = HashSet::new();
        for token in doc.as_ref() {
            *totals.entry(token.as_str()).or_insert(0) += 1;
            if seen.insert(token.as_str()) {
                *doc_freq.entry(token.as_str()).or_insert(0) += 1;
            }
        }
    }
    let min_docs = (min_doc_fraction * docs.len() as f64).ceil() as usize;
    let mut kept: Vec<String> = totals
        .into_iter()
        .filter(|(word, count)| {
            !stopwords.contains(*word) && *count >= min_count && doc_freq[word] >= min_docs
        })
        .map(|(word, _)| word.to_owned())
        .collect();
    if kept.is_empty() {
        return Err(CldaError::EmptyVocabulary);
    }
    kept.sort();
    Vocabulary::new(kept)
}

/// Counts reported by [`encode`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncodeStats {
    /// Tokens dropped because they are not in the vocabulary.
    pub oov_tokens: usize,
    /// Documents dropped because no token survived encoding.
    pub dropped_documents: usize,
}

/// Encodes raw documents against a vocabulary. Out-of-vocabulary tokens are
/// dropped silently; documents left empty are excluded and counted.
pub fn encode(
    docs: &[RawDocument],
    vocabulary: &Arc<Vocabulary>,
    order: SegmentOrder,
) -> Result<(Corpus, EncodeStats)> {
    if vocabulary.is_empty() {
        return Err(CldaError::EmptyVocabulary);
    }
    let mut stats = EncodeStats::default();
    let mut documents = Vec::with_capacity(docs.len());
    for doc in docs {
        let mut tokens = Vec::with_capacity(doc.tokens.len());
        for token in &doc.tokens {
            match vocabulary.id(token) {
                Some(id) => tokens.push(id),
                None => stats.oov_tokens += 1,
            }
        }
        if tokens.is_empty() {
            stats.dropped_documents += 1;
        } else {
            documents.push(Document {
                doc_id: doc.doc_id.clone(),
                segment_key: doc.segment_key.clone(),
                tokens,
            });
        }
    }
    let corpus = Corpus::assemble(Arc::clone(vocabulary), documents, order)?;
    Ok((corpus, stats))
}

/// Partitions a corpus into one sub-corpus per segment key, in canonical
/// order. Sub-corpora share the global vocabulary and record their local
/// vocabulary (the word ids occurring in them).
pub fn split_corpus(corpus: &Corpus) -> Vec<SegmentCorpus> {
    let mut by_key: HashMap<&str, Vec<&Document>> = HashMap::new();
    for doc in &corpus.documents {
        by_key.entry(doc.segment_key.as_str()).or_default().push(doc);
    }
    corpus
        .segments
        .iter()
        .map(|key| {
            let docs = by_key.remove(key.as_str()).unwrap_or_default();
            let mut local_vocab = BTreeSet::new();
            for doc in &docs {
                local_vocab.extend(doc.tokens.iter().copied());
            }
            SegmentCorpus {
                segment_key: key.clone(),
                vocabulary: Arc::clone(&corpus.vocabulary),
                documents: docs.into_iter().cloned().collect(),
                local_vocab,
            }
        })
        .collect()
}

/// Per-segment stratified hold-out split. Each segment contributes
/// `round(holdout_fraction * segment size)` documents to the test set.
/// Document order within each side follows the input corpus order.
pub fn holdout_split(corpus: &Corpus, holdout_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(CldaError::Config(format!(
            "holdout_fraction must be in [0, 1), got {holdout_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; corpus.documents.len()];
    for key in &corpus.segments {
        let mut indices: Vec<usize> = corpus
            .documents
            .iter()
            .enumerate()
            .filter(|(_, d)| &d.segment_key == key)
            .map(|(i, _)| i)
            .collect();
        let n_test = (holdout_fraction * indices.len() as f64).round() as usize;
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(n_test) {
            in_test[i] = true;
        }
    }
    let (mut train_docs, mut test_docs) = (Vec::new(), Vec::new());
    for (i, doc) in corpus.documents.iter().enumerate() {
        if in_test[i] {
            test_docs.push(doc.clone());
        } else {
            train_docs.push(doc.clone());
        }
    }
    let train = Corpus {
        vocabulary: Arc::clone(&corpus.vocabulary),
        documents: train_docs,
        segments: corpus.segments.clone(),
    };
    let test = Corpus {
        vocabulary: Arc::clone(&corpus.vocabulary),
        documents: test_docs,
        segments: corpus.segments.clone(),
    };
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, key: &str, tokens: &[&str]) -> RawDocument {
        RawDocument {
            doc_id: id.to_owned(),
            segment_key: key.to_owned(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn small_vocab(words: &[&str]) -> Arc<Vocabulary> {
        Arc::new(Vocabulary::new(words.iter().map(|w| w.to_string()).collect()).unwrap())
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(tokenize("The cat sat."), vec!["the", "cat", "sat"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("TCP/IP   networks"), vec!["tcp", "ip", "networks"]);
    }

    #[test]
    fn vocabulary_keeps_unpruned_words_in_lexicographic_order() {
        let docs = vec![vec!["a".to_string(), "b".to_string()], vec!["a".to_string()]];
        let vocab = build_vocabulary(&docs, &HashSet::new(), 1, 0.0).unwrap();
        assert_eq!(vocab.words(), &["a", "b"]);
        assert_eq!(vocab.id("a"), Some(0));
        assert_eq!(vocab.id("b"), Some(1));
    }

    #[test]
    fn vocabulary_removes_stopwords() {
        let docs = vec![vec!["a".to_string(), "b".to_string()], vec!["a".to_string()]];
        let stop: HashSet<String> = ["a".to_string()].into();
        let vocab = build_vocabulary(&docs, &stop, 1, 0.0).unwrap();
        assert_eq!(vocab.words(), &["b"]);
    }

    #[test]
    fn vocabulary_prunes_by_document_fraction() {
        // "b" appears in 1 of 3 documents < ceil(0.5 * 3) = 2.
        let docs = vec![
            vec!["a".to_string(), "b".to_string()],
            vec!["a".to_string()],
            vec!["a".to_string()],
        ];
        let vocab = build_vocabulary(&docs, &HashSet::new(), 1, 0.5).unwrap();
        assert_eq!(vocab.words(), &["a"]);
    }

    #[test]
    fn vocabulary_error_when_everything_filtered() {
        let docs = vec![vec!["a".to_string()]];
        let stop: HashSet<String> = ["a".to_string()].into();
        assert!(matches!(
            build_vocabulary(&docs, &stop, 1, 0.0),
            Err(CldaError::EmptyVocabulary)
        ));
    }

    #[test]
    fn raising_thresholds_never_adds_words() {
        let docs = vec![
            vec!["a".to_string(), "b".to_string(), "b".to_string()],
            vec!["a".to_string(), "c".to_string()],
            vec!["c".to_string()],
        ];
        let base: HashSet<String> = build_vocabulary(&docs, &HashSet::new(), 1, 0.0)
            .unwrap()
            .words()
            .iter()
            .cloned()
            .collect();
        for min_count in 1..4 {
            for tenths in 0..10 {
                let frac = tenths as f64 / 10.0;
                if let Ok(v) = build_vocabulary(&docs, &HashSet::new(), min_count, frac) {
                    for w in v.words() {
                        assert!(base.contains(w), "{w} appeared under stricter thresholds");
                    }
                }
            }
        }
    }

    #[test]
    fn encode_drops_oov_and_empty_documents() {
        let vocab = small_vocab(&["a", "b"]);
        let docs = vec![
            raw("d1", "s", &["a", "x", "b"]),
            raw("d2", "s", &["x"]),
            raw("d3", "s", &["b", "a", "b"]),
        ];
        let (corpus, stats) = encode(&docs, &vocab, SegmentOrder::Lexicographic).unwrap();
        assert_eq!(corpus.documents.len(), 2);
        assert_eq!(corpus.documents[0].tokens, vec![0, 1]);
        assert_eq!(corpus.documents[1].tokens, vec![1, 0, 1]);
        assert_eq!(stats.oov_tokens, 2);
        assert_eq!(stats.dropped_documents, 1);
    }

    #[test]
    fn encode_round_trips_in_vocabulary_text() {
        let vocab = small_vocab(&["cat", "sat", "the"]);
        let docs = vec![raw("d", "s", &["the", "cat", "sat", "the"])];
        let (corpus, stats) = encode(&docs, &vocab, SegmentOrder::Lexicographic).unwrap();
        assert_eq!(stats.oov_tokens, 0);
        let decoded: Vec<&str> = corpus.documents[0]
            .tokens
            .iter()
            .map(|&id| corpus.vocabulary.word(id))
            .collect();
        assert_eq!(decoded, vec!["the", "cat", "sat", "the"]);
    }

    #[test]
    fn split_partitions_by_segment_key() {
        let vocab = small_vocab(&["a", "b"]);
        let docs = vec![
            raw("d1", "1987", &["a"]),
            raw("d2", "1987", &["b"]),
            raw("d3", "1988", &["b"]),
        ];
        let (corpus, _) = encode(&docs, &vocab, SegmentOrder::Lexicographic).unwrap();
        let segments = split_corpus(&corpus);
        assert_eq!(segments.len(), 2);
        assert_eq!(segments[0].segment_key, "1987");
        assert_eq!(segments[0].documents.len(), 2);
        assert_eq!(segments[1].documents.len(), 1);
        let total: usize = segments.iter().map(|s| s.documents.len()).sum();
        assert_eq!(total, corpus.documents.len());
    }

    #[test]
    fn split_records_local_vocabularies() {
        let vocab = small_vocab(&["a", "b"]);
        let docs = vec![raw("d1", "s1", &["a"]), raw("d2", "s2", &["b"])];
        let (corpus, _) = encode(&docs, &vocab, SegmentOrder::Lexicographic).unwrap();
        let segments = split_corpus(&corpus);
        assert_eq!(segments[0].local_vocab, BTreeSet::from([0]));
        assert_eq!(segments[1].local_vocab, BTreeSet::from([1]));
    }

    #[test]
    fn split_single_segment_is_identity() {
        let vocab = small_vocab(&["a"]);
        let docs = vec![raw("d1", "s", &["a"]), raw("d2", "s", &["a"])];
        let (corpus, _) = encode(&docs, &vocab, SegmentOrder::Lexicographic).unwrap();
        let segments = split_corpus(&corpus);
        assert_eq!(segments.len(), 1);
        assert_eq!(segments[0].documents, corpus.documents);
    }

    #[test]
    fn numeric_segment_order_sorts_numerically() {
        let vocab = small_vocab(&["a"]);
        let docs = vec![
            raw("d1", "10", &["a"]),
            raw("d2", "9", &["a"]),
            raw("d3", "100", &["a"]),
        ];
        let (lex, _) = encode(&docs, &vocab, SegmentOrder::Lexicographic).unwrap();
        assert_eq!(lex.segments, vec!["10", "100", "9"]);
        let (num, _) = encode(&docs, &vocab, SegmentOrder::Numeric).unwrap();
        assert_eq!(num.segments, vec!["9", "10", "100"]);
    }

    #[test]
    fn numeric_order_rejects_non_numeric_keys() {
        let vocab = small_vocab(&["a"]);
        let docs = vec![raw("d1", "early", &["a"])];
        assert!(matches!(
            encode(&docs, &vocab, SegmentOrder::Numeric),
            Err(CldaError::Config(_))
        ));
    }

    #[test]
    fn holdout_zero_keeps_everything_in_train() {
        let vocab = small_vocab(&["a"]);
        let docs: Vec<RawDocument> = (0..5).map(|i| raw(&format!("d{i}"), "s", &["a"])).collect();
        let (corpus, _) = encode(&docs, &vocab, SegmentOrder::Lexicographic).unwrap();
        let (train, test) = holdout_split(&corpus, 0.0, 1).unwrap();
        assert!(test.documents.is_empty());
        assert_eq!(train.documents, corpus.documents);
    }

    #[test]
    fn holdout_takes_a_fifth_of_a_ten_document_segment() {
        let vocab = small_vocab(&["a"]);
        let docs: Vec<RawDocument> = (0..10).map(|i| raw(&format!("d{i}"), "s", &["a"])).collect();
        let (corpus, _) = encode(&docs, &vocab, SegmentOrder::Lexicographic).unwrap();
        let (train, test) = holdout_split(&corpus, 0.2, 7).unwrap();
        assert_eq!(test.documents.len(), 2);
        assert_eq!(train.documents.len(), 8);
    }

    #[test]
    fn holdout_is_deterministic_and_disjoint() {
        let vocab = small_vocab(&["a", "b"]);
        let docs: Vec<RawDocument> = (0..30)
            .map(|i| raw(&format!("d{i}"), if i % 3 == 0 { "s1" } else { "s2" }, &["a", "b"]))
            .collect();
        let (corpus, _) = encode(&docs, &vocab, SegmentOrder::Lexicographic).unwrap();
        let (train1, test1) = holdout_split(&corpus, 0.3, 99).unwrap();
        let (train2, test2) = holdout_split(&corpus, 0.3, 99).unwrap();
        assert_eq!(train1.documents, train2.documents);
        assert_eq!(test1.documents, test2.documents);

        let train_ids: HashSet<&str> = train1.documents.iter().map(|d| d.doc_id.as_str()).collect();
        let test_ids: HashSet<&str> = test1.documents.iter().map(|d| d.doc_id.as_str()).collect();
        assert!(train_ids.is_disjoint(&test_ids));
        assert_eq!(train_ids.len() + test_ids.len(), corpus.documents.len());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arbitrary_corpus() -> impl Strategy<Value = Corpus> {
            proptest::collection::vec((0u8..4, proptest::collection::vec(0usize..6, 1..8)), 1..40)
                .prop_map(|docs| {
                    let vocab = small_vocab(&["a", "b", "c", "d", "e", "f"]);
                    let documents = docs
                        .into_iter()
                        .enumerate()
                        .map(|(i, (key, tokens))| Document {
                            doc_id: format!("d{i}"),
                            segment_key: format!("s{key}"),
                            tokens,
                        })
                        .collect();
                    Corpus::assemble(vocab, documents, SegmentOrder::Lexicographic).unwrap()
                })
        }

        proptest! {
            #[test]
            fn split_is_a_partition(corpus in arbitrary_corpus()) {
                let segments = split_corpus(&corpus);
                let mut seen: Vec<&str> = Vec::new();
                for segment in &segments {
                    for doc in &segment.documents {
                        prop_assert_eq!(&doc.segment_key, &segment.segment_key);
                        seen.push(&doc.doc_id);
                    }
                }
                seen.sort();
                let mut expected: Vec<&str> =
                    corpus.documents.iter().map(|d| d.doc_id.as_str()).collect();
                expected.sort();
                prop_assert_eq!(seen, expected);
            }

            #[test]
            fn holdout_is_disjoint_exact_and_stratified(
                corpus in arbitrary_corpus(),
                tenths in 0u8..10,
                seed in 0u64..1000,
            ) {
                let fraction = tenths as f64 / 10.0;
                let (train, test) = holdout_split(&corpus, fraction, seed).unwrap();
                prop_assert_eq!(
                    train.documents.len() + test.documents.len(),
                    corpus.documents.len()
                );
                let test_ids: HashSet<&str> =
                    test.documents.iter().map(|d| d.doc_id.as_str()).collect();
                for doc in &train.documents {
                    prop_assert!(!test_ids.contains(doc.doc_id.as_str()));
                }
                for key in &corpus.segments {
                    let total = corpus
                        .documents
                        .iter()
                        .filter(|d| &d.segment_key == key)
                        .count();
                    let in_test = test
                        .documents
                        .iter()
                        .filter(|d| &d.segment_key == key)
                        .count();
                    prop_assert_eq!(in_test, (fraction * total as f64).round() as usize);
                }
            }
        }
    }

    #[test]
    fn holdout_is_stratified_per_segment() {
        let vocab = small_vocab(&["a"]);
        let mut docs = Vec::new();
        for i in 0..10 {
            docs.push(raw(&format!("x{i}"), "s1", &["a"]));
        }
        for i in 0..20 {
            docs.push(raw(&format!("y{i}"), "s2", &["a"]));
        }
        let (corpus, _) = encode(&docs, &vocab, SegmentOrder::Lexicographic).unwrap();
        let (_, test) = holdout_split(&corpus, 0.2, 5).unwrap();
        let s1 = test.documents.iter().filter(|d| d.segment_key == "s1").count();
        let s2 = test.documents.iter().filter(|d| d.segment_key == "s2").count();
        assert_eq!(s1, 2);
        assert_eq!(s2, 4);
    }
}
