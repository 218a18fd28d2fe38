//! Collapsed Gibbs sampling for LDA on one corpus segment, with an optional
//! document-sharded mode that samples shards concurrently against counts
//! frozen at sweep start and reconciles their deltas at sweep end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Document, SegmentCorpus};
use crate::error::{CldaError, Result};

const TAG_INIT: u64 = 1;
const TAG_SWEEP: u64 = 2;
const TAG_FOLD: u64 = 3;
pub(crate) const TAG_RESTART: u64 = 4;
pub(crate) const TAG_FULL_LDA: u64 = 5;

/// Shards are packed into the low bits of the sweep stream index.
const SHARD_BITS: u64 = 20;
const MAX_SHARDS: usize = 1 << SHARD_BITS;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent RNG stream seed from a base seed, a purpose tag,
/// and a stream index. Every random decision in the crate goes through a
/// stream derived this way, so results never depend on scheduling.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ index)
}

fn stream_rng(base: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, index))
}

/// Sampler settings: topic count, symmetric Dirichlet priors, sweep budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub num_topics: usize,
    /// Symmetric prior on document-topic mixtures.
    pub alpha: f64,
    /// Symmetric prior on topic-word distributions.
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Burn-in sweeps when folding in a held-out document.
    pub fold_in_sweeps: usize,
}

impl SamplerConfig {
    /// Defaults: alpha = 50/K, beta = 0.01, 20 fold-in sweeps.
    pub fn new(num_topics: usize, iterations: usize, seed: u64) -> Self {
        Self {
            num_topics,
            alpha: 50.0 / num_topics.max(1) as f64,
            beta: 0.01,
            iterations,
            seed,
            fold_in_sweeps: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_topics < 1 {
            return Err(CldaError::Config("num_topics must be at least 1".into()));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(CldaError::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(CldaError::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.iterations < 1 {
            return Err(CldaError::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// A topic: probabilities over the vocabulary it was expressed against.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicDistribution {
    pub probs: Vec<f64>,
}

impl TopicDistribution {
    /// Checks the probability-form invariant: entries non-negative, sum 1
    /// within 1e-9.
    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(CldaError::Corrupt("topic has a negative or non-finite entry".into()));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CldaError::Corrupt(format!("topic sums to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// A document's mixture over topics; entries sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentMixture {
    pub props: Vec<f64>,
}

/// Topics estimated on one segment plus the per-document mixtures needed by
/// the dynamics reports.
#[derive(Debug, Clone)]
pub struct LocalTopicSet {
    pub segment_key: String,
    /// Topic vectors expressed over `local_vocab` (entry i belongs to word id
    /// `local_vocab[i]`).
    pub topics: Vec<TopicDistribution>,
    /// Sorted word ids spanning the topics' vocabulary space. Training with
    /// beta smoothing gives every vocabulary word positive mass, so trained
    /// sets carry the full id range; sets loaded from sparse files may not.
    pub local_vocab: Vec<usize>,
    pub doc_ids: Vec<String>,
    pub doc_mixtures: Vec<DocumentMixture>,
    pub doc_lengths: Vec<usize>,
}

/// Per-token topic assignments and the count matrices they induce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerState {
    /// Topic assignment per token, per document.
    pub z: Vec<Vec<usize>>,
    /// K x W topic-word counts, row-major.
    n_wk: Vec<usize>,
    /// Tokens assigned to each topic.
    n_k: Vec<usize>,
    /// Per-document topic counts.
    n_jk: Vec<Vec<usize>>,
    num_topics: usize,
    vocab_size: usize,
}

impl SamplerState {
    /// Assigns every token a uniformly random topic and builds the counts.
    pub fn init_random(docs: &[Document], vocab_size: usize, config: &SamplerConfig) -> Result<Self> {
        config.validate()?;
        let k = config.num_topics;
        let mut rng = stream_rng(config.seed, TAG_INIT, 0);
        let mut state = Self {
            z: Vec::with_capacity(docs.len()),
            n_wk: vec![0; k * vocab_size],
            n_k: vec![0; k],
            n_jk: Vec::with_capacity(docs.len()),
            num_topics: k,
            vocab_size,
        };
        for doc in docs {
            let mut z_doc = Vec::with_capacity(doc.tokens.len());
            let mut jk = vec![0usize; k];
            for &word in &doc.tokens {
                debug_assert!(word < vocab_size);
                let topic = rng.gen_range(0..k);
                z_doc.push(topic);
                jk[topic] += 1;
                state.n_k[topic] += 1;
                state.n_wk[topic * vocab_size + word] += 1;
            }
            state.z.push(z_doc);
            state.n_jk.push(jk);
        }
        Ok(state)
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn topic_word(&self, topic: usize, word: usize) -> usize {
        self.n_wk[topic * self.vocab_size + word]
    }

    pub fn topic_totals(&self) -> &[usize] {
        &self.n_k
    }

    pub fn doc_topics(&self, doc: usize) -> &[usize] {
        &self.n_jk[doc]
    }

    pub fn total_tokens(&self) -> usize {
        self.z.iter().map(Vec::len).sum()
    }

    /// Verifies the count identities: topic-word rows sum to the topic
    /// totals, per-document counts sum to document lengths, and topic totals
    /// sum to the corpus token count. All integer-exact.
    pub fn check_consistency(&self) -> Result<()> {
        for k in 0..self.num_topics {
            let row_sum: usize = self.n_wk[k * self.vocab_size..(k + 1) * self.vocab_size]
                .iter()
                .sum();
            if row_sum != self.n_k[k] {
                return Err(CldaError::Corrupt(format!(
                    "topic {k}: word counts sum to {row_sum}, topic total is {}",
                    self.n_k[k]
                )));
            }
        }
        for (j, jk) in self.n_jk.iter().enumerate() {
            let sum: usize = jk.iter().sum();
            if sum != self.z[j].len() {
                return Err(CldaError::Corrupt(format!(
                    "document {j}: topic counts sum to {sum}, document has {} tokens",
                    self.z[j].len()
                )));
            }
        }
        let total: usize = self.n_k.iter().sum();
        if total != self.total_tokens() {
            return Err(CldaError::Corrupt(format!(
                "topic totals sum to {total}, corpus has {} tokens",
                self.total_tokens()
            )));
        }
        Ok(())
    }
}

/// Collapsed conditional weights for one removed token: for each topic k,
/// (n_wk + beta) / (n_k + W*beta) * (n_jk + alpha). Counts must already
/// exclude the token being resampled.
#[inline]
#[allow(clippy::too_many_arguments)]
fn token_weights(
    word: usize,
    n_wk: &[usize],
    n_k: &[usize],
    n_jk: &[usize],
    vocab_size: usize,
    alpha: f64,
    beta: f64,
    w_beta: f64,
    weights: &mut [f64],
) -> f64 {
    let mut total = 0.0;
    for (k, slot) in weights.iter_mut().enumerate() {
        let w = (n_wk[k * vocab_size + word] as f64 + beta) / (n_k[k] as f64 + w_beta)
            * (n_jk[k] as f64 + alpha);
        *slot = w;
        total += w;
    }
    total
}

#[inline]
fn pick_topic(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Resamples every token of one document against the given counts, updating
/// them in place.
#[allow(clippy::too_many_arguments)]
fn sweep_document(
    tokens: &[usize],
    z: &mut [usize],
    n_jk: &mut [usize],
    n_wk: &mut [usize],
    n_k: &mut [usize],
    vocab_size: usize,
    alpha: f64,
    beta: f64,
    w_beta: f64,
    weights: &mut [f64],
    rng: &mut ChaCha8Rng,
) {
    for (i, &word) in tokens.iter().enumerate() {
        let old = z[i];
        n_jk[old] -= 1;
        n_k[old] -= 1;
        n_wk[old * vocab_size + word] -= 1;
        let total = token_weights(word, n_wk, n_k, n_jk, vocab_size, alpha, beta, w_beta, weights);
        let new = pick_topic(weights, total, rng);
        z[i] = new;
        n_jk[new] += 1;
        n_k[new] += 1;
        n_wk[new * vocab_size + word] += 1;
    }
}

/// One shard's working set for a sweep: (document index, its assignments,
/// its per-document topic counts).
type ShardBundle = Vec<(usize, Vec<usize>, Vec<usize>)>;

/// A training run over one segment. `num_shards == 1` is plain collapsed
/// Gibbs; more shards sample concurrently on round-robin document partitions
/// and reconcile count deltas after every sweep.
pub struct GibbsSampler<'a> {
    docs: &'a [Document],
    vocab_size: usize,
    config: SamplerConfig,
    num_shards: usize,
    state: SamplerState,
    sweeps_done: usize,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(
        docs: &'a [Document],
        vocab_size: usize,
        config: &SamplerConfig,
        num_shards: usize,
    ) -> Result<Self> {
        if docs.is_empty() {
            return Err(CldaError::Config("cannot train on an empty segment".into()));
        }
        if !(1..=MAX_SHARDS).contains(&num_shards) {
            return Err(CldaError::Config(format!(
                "num_shards must be in [1, {MAX_SHARDS}], got {num_shards}"
            )));
        }
        if let Some(doc) = docs.iter().find(|d| d.tokens.iter().any(|&w| w >= vocab_size)) {
            return Err(CldaError::Corrupt(format!(
                "document {} references a word id beyond the vocabulary",
                doc.doc_id
            )));
        }
        let state = SamplerState::init_random(docs, vocab_size, config)?;
        Ok(Self {
            docs,
            vocab_size,
            config: config.clone(),
            num_shards,
            state,
            sweeps_done: 0,
        })
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweeps_done
    }

    /// One full pass over every token.
    pub fn sweep(&mut self) {
        if self.num_shards == 1 {
            self.sweep_serial();
        } else {
            self.sweep_sharded();
        }
        self.sweeps_done += 1;
    }

    fn sweep_serial(&mut self) {
        let k = self.config.num_topics;
        let w_beta = self.vocab_size as f64 * self.config.beta;
        let mut weights = vec![0.0; k];
        let mut rng = stream_rng(self.config.seed, TAG_SWEEP, (self.sweeps_done as u64) << SHARD_BITS);
        for (j, doc) in self.docs.iter().enumerate() {
            sweep_document(
                &doc.tokens,
                &mut self.state.z[j],
                &mut self.state.n_jk[j],
                &mut self.state.n_wk,
                &mut self.state.n_k,
                self.vocab_size,
                self.config.alpha,
                self.config.beta,
                w_beta,
                &mut weights,
                &mut rng,
            );
        }
    }

    fn sweep_sharded(&mut self) {
        let k = self.config.num_topics;
        let w_beta = self.vocab_size as f64 * self.config.beta;
        let frozen_wk = self.state.n_wk.clone();
        let frozen_k = self.state.n_k.clone();

        // Hand each shard ownership of its documents' assignment vectors.
        let mut bundles: Vec<ShardBundle> = (0..self.num_shards).map(|_| Vec::new()).collect();
        for j in 0..self.docs.len() {
            bundles[j % self.num_shards].push((
                j,
                std::mem::take(&mut self.state.z[j]),
                std::mem::take(&mut self.state.n_jk[j]),
            ));
        }

        let docs = self.docs;
        let vocab_size = self.vocab_size;
        let (alpha, beta) = (self.config.alpha, self.config.beta);
        let seed = self.config.seed;
        let sweep = self.sweeps_done as u64;
        let results: Vec<(Vec<usize>, ShardBundle)> = bundles
            .into_par_iter()
            .enumerate()
            .map(|(shard, mut bundle)| {
                let mut n_wk = frozen_wk.clone();
                let mut n_k = frozen_k.clone();
                let mut weights = vec![0.0; k];
                let mut rng = stream_rng(seed, TAG_SWEEP, (sweep << SHARD_BITS) | shard as u64);
                for (j, z, n_jk) in bundle.iter_mut() {
                    sweep_document(
                        &docs[*j].tokens,
                        z,
                        n_jk,
                        &mut n_wk,
                        &mut n_k,
                        vocab_size,
                        alpha,
                        beta,
                        w_beta,
                        &mut weights,
                        &mut rng,
                    );
                }
                (n_wk, bundle)
            })
            .collect();

        // Reconcile: global counts = frozen + sum of shard deltas, applied in
        // shard order. Each token belongs to exactly one shard, so the totals
        // stay exact.
        let mut acc: Vec<i64> = frozen_wk.iter().map(|&c| c as i64).collect();
        for (shard_wk, bundle) in results {
            for (slot, (&new, &old)) in acc.iter_mut().zip(shard_wk.iter().zip(frozen_wk.iter())) {
                *slot += new as i64 - old as i64;
            }
            for (j, z, n_jk) in bundle {
                self.state.z[j] = z;
                self.state.n_jk[j] = n_jk;
            }
        }
        for (slot, &v) in self.state.n_wk.iter_mut().zip(acc.iter()) {
            debug_assert!(v >= 0);
            *slot = v as usize;
        }
        for t in 0..k {
            self.state.n_k[t] = self.state.n_wk[t * self.vocab_size..(t + 1) * self.vocab_size]
                .iter()
                .sum();
        }
    }

    pub fn run_to_completion(&mut self) {
        while self.sweeps_done < self.config.iterations {
            self.sweep();
        }
    }

    /// Smoothed point estimates phi_k[w] = (n_wk + beta) / (n_k + W*beta)
    /// from the current counts. Strictly positive everywhere.
    pub fn topics(&self) -> Vec<TopicDistribution> {
        let w = self.vocab_size;
        let w_beta = w as f64 * self.config.beta;
        (0..self.config.num_topics)
            .map(|k| {
                let denom = self.state.n_k[k] as f64 + w_beta;
                let probs = (0..w)
                    .map(|word| (self.state.n_wk[k * w + word] as f64 + self.config.beta) / denom)
                    .collect();
                TopicDistribution { probs }
            })
            .collect()
    }

    /// Smoothed mixtures theta_j[k] = (n_jk + alpha) / (N_d + K*alpha).
    pub fn mixtures(&self) -> Vec<DocumentMixture> {
        let k_alpha = self.config.num_topics as f64 * self.config.alpha;
        self.docs
            .iter()
            .enumerate()
            .map(|(j, doc)| {
                let denom = doc.tokens.len() as f64 + k_alpha;
                let props = self.state.n_jk[j]
                    .iter()
                    .map(|&c| (c as f64 + self.config.alpha) / denom)
                    .collect();
                DocumentMixture { props }
            })
            .collect()
    }

    pub fn into_local_topic_set(self, segment_key: &str) -> LocalTopicSet {
        LocalTopicSet {
            segment_key: segment_key.to_owned(),
            topics: self.topics(),
            local_vocab: (0..self.vocab_size).collect(),
            doc_ids: self.docs.iter().map(|d| d.doc_id.clone()).collect(),
            doc_mixtures: self.mixtures(),
            doc_lengths: self.docs.iter().map(|d| d.tokens.len()).collect(),
        }
    }
}

/// Trains LDA on one segment with serial collapsed Gibbs sampling.
pub fn train(segment: &SegmentCorpus, config: &SamplerConfig) -> Result<LocalTopicSet> {
    train_sharded(segment, config, 1)
}

/// Trains LDA on one segment with `num_shards` concurrent document shards.
/// One shard is exactly [`train`].
pub fn train_sharded(
    segment: &SegmentCorpus,
    config: &SamplerConfig,
    num_shards: usize,
) -> Result<LocalTopicSet> {
    let mut sampler = GibbsSampler::new(
        &segment.documents,
        segment.vocabulary.len(),
        config,
        num_shards,
    )?;
    sampler.run_to_completion();
    Ok(sampler.into_local_topic_set(&segment.segment_key))
}

/// Estimates a held-out document's topic mixture with the topics held fixed:
/// tokens are resampled from P(z = k) proportional to phi_k[word] * (n_k + alpha)
/// for `config.fold_in_sweeps` sweeps, then the mixture is read off the
/// final counts. `stream` separates RNG streams when folding many documents.
pub fn fold_in(
    topics: &[TopicDistribution],
    doc: &Document,
    config: &SamplerConfig,
    stream: u64,
) -> Result<DocumentMixture> {
    let k = topics.len();
    if k == 0 {
        return Err(CldaError::Config("fold_in requires at least one topic".into()));
    }
    if doc.tokens.is_empty() {
        return Err(CldaError::UnscorableDocument(doc.doc_id.clone()));
    }
    let mut rng = stream_rng(config.seed, TAG_FOLD, stream);
    let mut z = Vec::with_capacity(doc.tokens.len());
    let mut n_k = vec![0usize; k];
    for _ in &doc.tokens {
        let topic = rng.gen_range(0..k);
        z.push(topic);
        n_k[topic] += 1;
    }
    let mut weights = vec![0.0; k];
    for _ in 0..config.fold_in_sweeps {
        for (i, &word) in doc.tokens.iter().enumerate() {
            let old = z[i];
            n_k[old] -= 1;
            let mut total = 0.0;
            for (t, slot) in weights.iter_mut().enumerate() {
                let w = topics[t].probs[word] * (n_k[t] as f64 + config.alpha);
                *slot = w;
                total += w;
            }
            if total <= 0.0 {
                return Err(CldaError::Domain(format!(
                    "token {i} of document {} has zero probability under every topic",
                    doc.doc_id
                )));
            }
            let new = pick_topic(&weights, total, &mut rng);
            z[i] = new;
            n_k[new] += 1;
        }
    }
    let denom = doc.tokens.len() as f64 + k as f64 * config.alpha;
    Ok(DocumentMixture {
        props: n_k.iter().map(|&c| (c as f64 + config.alpha) / denom).collect(),
    })
}
