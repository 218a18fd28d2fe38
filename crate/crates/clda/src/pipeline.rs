//! Staged orchestration: ingest, train, merge, cluster, evaluate, report.
//! Every stage reads its inputs from the output directory and writes its own
//! artifacts there, so stages can be re-run individually (for example,
//! re-clustering with a different K without retraining).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::corpus::{self, Corpus, Document, RawDocument, SegmentOrder, Vocabulary};
use crate::dynamics::{self, MassWeighting, TopicAssignments};
use crate::error::{CldaError, Result};
use crate::files;
use crate::gibbs::{self, derive_seed, LocalTopicSet, SamplerConfig, TopicDistribution};
use crate::kmeans::{self, InitMode};
use crate::merge::{self, Norm};
use crate::metrics::{self, MatchReport, WordSet};

/// Input file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    /// `doc_id<TAB>segment_key<TAB>raw_text`
    #[default]
    Tsv,
    /// `doc_id<TAB>segment_key<TAB>wordid:count ...`
    Bow,
}

impl FromStr for InputFormat {
    type Err = CldaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "bow" => Ok(Self::Bow),
            other => Err(CldaError::Config(format!("unknown input format {other:?}"))),
        }
    }
}

/// Centroid initialization policy for the cluster stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterInit {
    /// Random matrix rows, `restarts` independent tries.
    #[default]
    RandomTopics,
    /// Topics from a reduced-iteration LDA run over the whole training
    /// corpus; single restart.
    FullLda,
}

impl FromStr for ClusterInit {
    type Err = CldaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random-topics" => Ok(Self::RandomTopics),
            "full-lda" => Ok(Self::FullLda),
            other => Err(CldaError::Config(format!("unknown init mode {other:?}"))),
        }
    }
}

/// Full pipeline configuration. Every field maps to one `key = value` line in
/// the config file and one CLI flag of the same name.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub format: InputFormat,
    /// Word list for `bow` input; ids are line numbers. Synthesized when
    /// absent.
    pub vocab_file: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub min_count: usize,
    pub min_doc_fraction: f64,
    pub segment_order: SegmentOrder,
    pub local_topics: usize,
    pub global_topics: usize,
    /// Document-topic prior; defaults to 50 / num_topics of the run using it.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub shards: usize,
    pub epsilon: f64,
    pub norm: Norm,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub init_mode: ClusterInit,
    /// Sweeps for the full-corpus initialization run; defaults to
    /// iterations / 10, floored at 1.
    pub full_lda_iterations: Option<usize>,
    pub holdout_fraction: f64,
    pub top_n: usize,
    pub fold_in_sweeps: usize,
    pub seed: u64,
    /// Worker pool size; 0 means all available cores.
    pub workers: usize,
    pub mass_weighting: MassWeighting,
    /// Optional external topic file matched against the centroids during
    /// evaluation.
    pub compare_topics: Option<PathBuf>,
    /// Also write per-segment raw count matrices.
    pub raw_counts: bool,
    pub output: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            format: InputFormat::Tsv,
            vocab_file: None,
            stopwords: None,
            min_count: 1,
            min_doc_fraction: 0.0,
            segment_order: SegmentOrder::Lexicographic,
            local_topics: 10,
            global_topics: 5,
            alpha: None,
            beta: 0.01,
            iterations: 200,
            shards: 1,
            epsilon: 0.0,
            norm: Norm::L2,
            restarts: 10,
            max_iters: 100,
            tol: 1e-9,
            init_mode: ClusterInit::RandomTopics,
            full_lda_iterations: None,
            holdout_fraction: 0.2,
            top_n: 20,
            fold_in_sweeps: 20,
            seed: 42,
            workers: 0,
            mass_weighting: MassWeighting::Token,
            compare_topics: None,
            raw_counts: false,
            output: PathBuf::new(),
        }
    }
}

impl PipelineConfig {
    /// Parses a flat `key = value` config file. `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config = Self::default();
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CldaError::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                msg: "expected key = value".into(),
            })?;
            config.set(key.trim(), value.trim()).map_err(|e| CldaError::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(config)
    }

    /// Sets one configuration key from its string form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| CldaError::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "input" => self.input = PathBuf::from(value),
            "format" => self.format = value.parse()?,
            "vocab_file" => self.vocab_file = Some(PathBuf::from(value)),
            "stopwords" => self.stopwords = Some(PathBuf::from(value)),
            "min_count" => self.min_count = num(key, value)?,
            "min_doc_fraction" => self.min_doc_fraction = num(key, value)?,
            "segment_order" => {
                self.segment_order = match value {
                    "lex" | "lexicographic" => SegmentOrder::Lexicographic,
                    "numeric" => SegmentOrder::Numeric,
                    other => {
                        return Err(CldaError::Config(format!("unknown segment order {other:?}")))
                    }
                }
            }
            "local_topics" => self.local_topics = num(key, value)?,
            "global_topics" => self.global_topics = num(key, value)?,
            "alpha" => self.alpha = Some(num(key, value)?),
            "beta" => self.beta = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "shards" => self.shards = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "norm" => {
                self.norm = match value {
                    "l2" => Norm::L2,
                    "l1" => Norm::L1,
                    other => return Err(CldaError::Config(format!("unknown norm {other:?}"))),
                }
            }
            "restarts" => self.restarts = num(key, value)?,
            "max_iters" => self.max_iters = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "init_mode" => self.init_mode = value.parse()?,
            "full_lda_iterations" => self.full_lda_iterations = Some(num(key, value)?),
            "holdout_fraction" => self.holdout_fraction = num(key, value)?,
            "top_n" => self.top_n = num(key, value)?,
            "fold_in_sweeps" => self.fold_in_sweeps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "mass_weighting" => {
                self.mass_weighting = match value {
                    "token" => MassWeighting::Token,
                    "doc" | "document" => MassWeighting::Document,
                    other => {
                        return Err(CldaError::Config(format!("unknown mass weighting {other:?}")))
                    }
                }
            }
            "compare_topics" => self.compare_topics = Some(PathBuf::from(value)),
            "raw_counts" => self.raw_counts = num(key, value)?,
            "output" => self.output = PathBuf::from(value),
            other => return Err(CldaError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.as_os_str().is_empty() {
            return Err(CldaError::Config("input path is required".into()));
        }
        if self.output.as_os_str().is_empty() {
            return Err(CldaError::Config("output directory is required".into()));
        }
        if self.local_topics < 1 {
            return Err(CldaError::Config("local_topics must be at least 1".into()));
        }
        if self.global_topics < 1 {
            return Err(CldaError::Config("global_topics must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(CldaError::Config(format!(
                "holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if let Some(alpha) = self.alpha {
            if alpha.is_nan() || alpha <= 0.0 {
                return Err(CldaError::Config(format!("alpha must be > 0, got {alpha}")));
            }
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(CldaError::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.iterations < 1 {
            return Err(CldaError::Config("iterations must be at least 1".into()));
        }
        if self.shards < 1 {
            return Err(CldaError::Config("shards must be at least 1".into()));
        }
        if self.epsilon < 0.0 {
            return Err(CldaError::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.restarts < 1 {
            return Err(CldaError::Config("restarts must be at least 1".into()));
        }
        if self.top_n < 1 {
            return Err(CldaError::Config("top_n must be at least 1".into()));
        }
        Ok(())
    }

    fn alpha_for(&self, num_topics: usize) -> f64 {
        self.alpha.unwrap_or(50.0 / num_topics.max(1) as f64)
    }

    fn sampler_config(&self, num_topics: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            num_topics,
            alpha: self.alpha_for(num_topics),
            beta: self.beta,
            iterations: self.iterations,
            seed,
            fold_in_sweeps: self.fold_in_sweeps,
        }
    }

    /// Key = value dump in declaration order, used by the manifest.
    pub fn dump(&self) -> Vec<(String, String)> {
        fn opt_path(p: &Option<PathBuf>) -> String {
            p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        }
        vec![
            ("input".into(), self.input.display().to_string()),
            (
                "format".into(),
                match self.format {
                    InputFormat::Tsv => "tsv".into(),
                    InputFormat::Bow => "bow".into(),
                },
            ),
            ("vocab_file".into(), opt_path(&self.vocab_file)),
            ("stopwords".into(), opt_path(&self.stopwords)),
            ("min_count".into(), self.min_count.to_string()),
            ("min_doc_fraction".into(), self.min_doc_fraction.to_string()),
            (
                "segment_order".into(),
                match self.segment_order {
                    SegmentOrder::Lexicographic => "lex".into(),
                    SegmentOrder::Numeric => "numeric".into(),
                },
            ),
            ("local_topics".into(), self.local_topics.to_string()),
            ("global_topics".into(), self.global_topics.to_string()),
            (
                "alpha".into(),
                self.alpha.map(|a| a.to_string()).unwrap_or_default(),
            ),
            ("beta".into(), self.beta.to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("shards".into(), self.shards.to_string()),
            ("epsilon".into(), self.epsilon.to_string()),
            (
                "norm".into(),
                match self.norm {
                    Norm::L2 => "l2".into(),
                    Norm::L1 => "l1".into(),
                },
            ),
            ("restarts".into(), self.restarts.to_string()),
            ("max_iters".into(), self.max_iters.to_string()),
            ("tol".into(), self.tol.to_string()),
            (
                "init_mode".into(),
                match self.init_mode {
                    ClusterInit::RandomTopics => "random".into(),
                    ClusterInit::FullLda => "full-lda".into(),
                },
            ),
            (
                "full_lda_iterations".into(),
                self.full_lda_iterations.map(|i| i.to_string()).unwrap_or_default(),
            ),
            ("holdout_fraction".into(), self.holdout_fraction.to_string()),
            ("top_n".into(), self.top_n.to_string()),
            ("fold_in_sweeps".into(), self.fold_in_sweeps.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("workers".into(), self.workers.to_string()),
            (
                "mass_weighting".into(),
                match self.mass_weighting {
                    MassWeighting::Token => "token".into(),
                    MassWeighting::Document => "doc".into(),
                },
            ),
            ("compare_topics".into(), opt_path(&self.compare_topics)),
            ("raw_counts".into(), self.raw_counts.to_string()),
            ("output".into(), self.output.display().to_string()),
        ]
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Train,
    Merge,
    Cluster,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Train,
        Stage::Merge,
        Stage::Cluster,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Merge => "merge",
            Stage::Cluster => "cluster",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CldaError;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| CldaError::Config(format!("unknown stage {s:?}")))
    }
}

/// Wall-clock record for one executed stage.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub seconds: f64,
    /// Human-readable notes (drop counts, objective, ...) printed by the CLI.
    pub notes: Vec<String>,
}

fn artifact(config: &PipelineConfig, name: &str) -> PathBuf {
    config.output.join(name)
}

fn pool(config: &PipelineConfig) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if config.workers > 0 {
        builder = builder.num_threads(config.workers);
    }
    builder
        .build()
        .map_err(|e| CldaError::Config(format!("failed to build worker pool: {e}")))
}

/// Runs one stage against the persisted artifacts, tagging any error with the
/// stage name. The manifest is refreshed afterwards.
pub fn run_stage(config: &PipelineConfig, stage: Stage) -> Result<StageOutcome> {
    config.validate().map_err(|e| e.in_stage(stage.name()))?;
    let started = Instant::now();
    let notes = exec_stage(config, stage).map_err(|e| e.in_stage(stage.name()))?;
    let outcome = StageOutcome {
        stage,
        seconds: started.elapsed().as_secs_f64(),
        notes,
    };
    write_manifest(config, std::slice::from_ref(&outcome))?;
    Ok(outcome)
}

/// Runs every stage in order and writes a manifest covering all of them.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Vec<StageOutcome>> {
    config.validate()?;
    let mut outcomes = Vec::new();
    for stage in Stage::ALL {
        let started = Instant::now();
        let notes = exec_stage(config, stage).map_err(|e| e.in_stage(stage.name()))?;
        outcomes.push(StageOutcome {
            stage,
            seconds: started.elapsed().as_secs_f64(),
            notes,
        });
    }
    write_manifest(config, &outcomes)?;
    Ok(outcomes)
}

fn exec_stage(config: &PipelineConfig, stage: Stage) -> Result<Vec<String>> {
    match stage {
        Stage::Ingest => stage_ingest(config),
        Stage::Train => stage_train(config),
        Stage::Merge => stage_merge(config),
        Stage::Cluster => stage_cluster(config),
        Stage::Evaluate => stage_evaluate(config),
        Stage::Report => stage_report(config),
    }
}

// ---------------------------------------------------------------- ingest --

fn stage_ingest(config: &PipelineConfig) -> Result<Vec<String>> {
    std::fs::create_dir_all(&config.output)?;
    let (corpus, oov_tokens, dropped_documents) = match config.format {
        InputFormat::Tsv => ingest_tsv(config)?,
        InputFormat::Bow => ingest_bow(config)?,
    };
    check_segment_dir_collisions(&corpus.segments)?;
    let (train, test) = corpus::holdout_split(&corpus, config.holdout_fraction, config.seed)?;

    files::write_vocabulary(&artifact(config, "vocab.txt"), &corpus.vocabulary)?;
    files::write_bow(&artifact(config, "train.bow"), &train.documents)?;
    files::write_bow(&artifact(config, "test.bow"), &test.documents)?;
    let stats = vec![
        ("vocabulary_size".into(), corpus.vocabulary.len().to_string()),
        ("segments".into(), corpus.segments.len().to_string()),
        ("documents".into(), corpus.documents.len().to_string()),
        ("train_documents".into(), train.documents.len().to_string()),
        ("test_documents".into(), test.documents.len().to_string()),
        ("train_tokens".into(), train.total_tokens().to_string()),
        ("test_tokens".into(), test.total_tokens().to_string()),
        ("oov_tokens_dropped".into(), oov_tokens.to_string()),
        ("documents_dropped_empty".into(), dropped_documents.to_string()),
    ];
    files::write_stats(&artifact(config, "ingest_stats.txt"), &stats)?;
    Ok(vec![format!(
        "{} documents, {} segments, vocabulary {}, {} oov tokens dropped, {} empty documents dropped",
        corpus.documents.len(),
        corpus.segments.len(),
        corpus.vocabulary.len(),
        oov_tokens,
        dropped_documents
    )])
}

fn ingest_tsv(config: &PipelineConfig) -> Result<(Corpus, usize, usize)> {
    let records = files::read_text_records(&config.input)?;
    let raw: Vec<RawDocument> = records
        .into_iter()
        .map(|(doc_id, segment_key, text)| RawDocument {
            doc_id,
            segment_key,
            tokens: corpus::tokenize(&text),
        })
        .collect();
    let stopwords: HashSet<String> = match &config.stopwords {
        Some(path) => files::read_word_list(path)?.into_iter().collect(),
        None => HashSet::new(),
    };
    let token_views: Vec<&Vec<String>> = raw.iter().map(|d| &d.tokens).collect();
    let vocabulary = Arc::new(corpus::build_vocabulary(
        &token_views,
        &stopwords,
        config.min_count,
        config.min_doc_fraction,
    )?);
    let (corpus, stats) = corpus::encode(&raw, &vocabulary, config.segment_order)?;
    Ok((corpus, stats.oov_tokens, stats.dropped_documents))
}

fn ingest_bow(config: &PipelineConfig) -> Result<(Corpus, usize, usize)> {
    let vocabulary = match &config.vocab_file {
        Some(path) => Arc::new(files::read_vocabulary(path)?),
        None => {
            // No word list given: size the vocabulary from the ids present.
            let probe = files::read_bow(&config.input, usize::MAX)?;
            let max_id = probe
                .iter()
                .flat_map(|d| d.tokens.iter())
                .copied()
                .max()
                .ok_or_else(|| CldaError::Config("input has no documents".into()))?;
            let words: Vec<String> = (0..=max_id).map(|i| format!("w{i}")).collect();
            Arc::new(Vocabulary::new(words)?)
        }
    };
    let documents = files::read_bow(&config.input, vocabulary.len())?;
    let corpus = Corpus::assemble(vocabulary, documents, config.segment_order)?;
    Ok((corpus, 0, 0))
}

fn check_segment_dir_collisions(segments: &[String]) -> Result<()> {
    let mut seen: HashMap<String, &String> = HashMap::new();
    for key in segments {
        let dir = files::segment_dir_name(key);
        if let Some(existing) = seen.insert(dir.clone(), key) {
            return Err(CldaError::Config(format!(
                "segment keys {existing:?} and {key:?} collide as directory name {dir:?}"
            )));
        }
    }
    Ok(())
}

// ----------------------------------------------------------------- train --

fn load_train_corpus(config: &PipelineConfig) -> Result<(Arc<Vocabulary>, Corpus)> {
    let vocabulary = Arc::new(files::read_vocabulary(&artifact(config, "vocab.txt"))?);
    let documents = files::read_bow(&artifact(config, "train.bow"), vocabulary.len())?;
    let corpus = Corpus::assemble(Arc::clone(&vocabulary), documents, config.segment_order)?;
    Ok((vocabulary, corpus))
}

fn stage_train(config: &PipelineConfig) -> Result<Vec<String>> {
    let (_, corpus) = load_train_corpus(config)?;
    let segments = corpus::split_corpus(&corpus);
    if segments.is_empty() {
        return Err(CldaError::Config("training corpus has no segments".into()));
    }
    if let Some(empty) = segments.iter().find(|s| s.documents.is_empty()) {
        return Err(CldaError::Config(format!(
            "segment {:?} has no training documents; lower holdout_fraction",
            empty.segment_key
        )));
    }
    let results: Vec<(LocalTopicSet, Option<Vec<Vec<usize>>>)> = pool(config)?.install(|| {
        segments
            .par_iter()
            .enumerate()
            .map(|(index, segment)| {
                let seed = config.seed.wrapping_add(index as u64);
                let sampler_config = config.sampler_config(config.local_topics, seed);
                let mut sampler = gibbs::GibbsSampler::new(
                    &segment.documents,
                    segment.vocabulary.len(),
                    &sampler_config,
                    config.shards,
                )?;
                sampler.run_to_completion();
                let counts = config.raw_counts.then(|| {
                    let state = sampler.state();
                    (0..config.local_topics)
                        .map(|k| {
                            (0..segment.vocabulary.len())
                                .map(|w| state.topic_word(k, w))
                                .collect()
                        })
                        .collect::<Vec<Vec<usize>>>()
                });
                Ok((sampler.into_local_topic_set(&segment.segment_key), counts))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (segment, (local, counts)) in segments.iter().zip(&results) {
        let topic_rows: Vec<Vec<f64>> = local.topics.iter().map(|t| t.probs.clone()).collect();
        files::write_topic_rows(
            &files::segment_topics_path(&config.output, &segment.segment_key),
            &topic_rows,
        )?;
        files::write_mixtures(
            &files::segment_mixtures_path(&config.output, &segment.segment_key),
            &local.doc_ids,
            &local.doc_mixtures,
        )?;
        if let Some(counts) = counts {
            let path = files::segment_topics_path(&config.output, &segment.segment_key)
                .with_file_name("topics.raw.tsv");
            files::write_topic_counts(&path, counts)?;
        }
    }
    Ok(vec![format!(
        "trained {} topics on each of {} segments ({} sweeps, {} shards)",
        config.local_topics,
        segments.len(),
        config.iterations,
        config.shards
    )])
}

// ----------------------------------------------------------------- merge --

fn canonical_segment_keys(config: &PipelineConfig) -> Result<Vec<String>> {
    let (_, corpus) = load_train_corpus(config)?;
    Ok(corpus.segments)
}

fn load_local_topic_set(config: &PipelineConfig, key: &str) -> Result<LocalTopicSet> {
    let path = files::segment_topics_path(&config.output, key);
    let pairs = files::read_topic_pairs(&path)?;
    let mut vocab_ids: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
    for topic in &pairs {
        vocab_ids.extend(topic.iter().map(|(id, _)| *id));
    }
    let local_vocab: Vec<usize> = vocab_ids.into_iter().collect();
    let slot_of: HashMap<usize, usize> = local_vocab
        .iter()
        .enumerate()
        .map(|(slot, &id)| (id, slot))
        .collect();
    let topics = pairs
        .into_iter()
        .map(|topic| {
            let mut probs = vec![0.0; local_vocab.len()];
            for (id, value) in topic {
                probs[slot_of[&id]] = value;
            }
            TopicDistribution { probs }
        })
        .collect();
    Ok(LocalTopicSet {
        segment_key: key.to_owned(),
        topics,
        local_vocab,
        doc_ids: Vec::new(),
        doc_mixtures: Vec::new(),
        doc_lengths: Vec::new(),
    })
}

fn stage_merge(config: &PipelineConfig) -> Result<Vec<String>> {
    let vocabulary = files::read_vocabulary(&artifact(config, "vocab.txt"))?;
    let keys = canonical_segment_keys(config)?;
    let locals: Vec<LocalTopicSet> = keys
        .iter()
        .map(|key| load_local_topic_set(config, key))
        .collect::<Result<Vec<_>>>()?;
    let matrix = merge::merge_all(&locals, vocabulary.len(), config.epsilon, config.norm)?;
    files::write_merged(&artifact(config, "merged.tsv"), &matrix)?;
    let mut notes = vec![format!(
        "merged {} local topics over vocabulary {}",
        matrix.num_rows(),
        vocabulary.len()
    )];
    if !matrix.dropped.is_empty() {
        notes.push(format!(
            "warning: dropped {} all-zero topics: {}",
            matrix.dropped.len(),
            matrix
                .dropped
                .iter()
                .map(|p| format!("({}, {})", p.segment_key, p.local_index))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    Ok(notes)
}

// --------------------------------------------------------------- cluster --

fn stage_cluster(config: &PipelineConfig) -> Result<Vec<String>> {
    let matrix = files::read_merged(&artifact(config, "merged.tsv"))?;
    let k = config.global_topics;
    if k > matrix.num_rows() {
        return Err(CldaError::Config(format!(
            "global_topics = {k} exceeds the {} pooled local topics",
            matrix.num_rows()
        )));
    }
    let (init_mode, restarts, mut notes) = match config.init_mode {
        ClusterInit::RandomTopics => (InitMode::RandomTopics, config.restarts, Vec::new()),
        ClusterInit::FullLda => {
            let centroids = full_corpus_init(config, k)?;
            (
                InitMode::Provided(centroids),
                1,
                vec!["initialized centroids from a full-corpus run".to_string()],
            )
        }
    };
    let clustering = pool(config)?.install(|| {
        kmeans::multi_restart(
            &matrix,
            k,
            restarts,
            config.seed,
            init_mode,
            config.max_iters,
            config.tol,
        )
    })?;
    files::write_topic_rows(&artifact(config, "centroids.tsv"), &clustering.centroids)?;
    files::write_assignments(&artifact(config, "assignments.tsv"), &matrix, &clustering)?;
    notes.push(format!(
        "clustered into {k} global topics, objective {:.6} after {} restarts",
        clustering.objective, clustering.restarts_run
    ));
    Ok(notes)
}

/// Topics from a reduced-iteration LDA run over the whole training corpus,
/// unit-normalized for use as initial centroids.
fn full_corpus_init(config: &PipelineConfig, k: usize) -> Result<Vec<Vec<f64>>> {
    let (vocabulary, corpus) = load_train_corpus(config)?;
    let whole = corpus::SegmentCorpus {
        segment_key: "__full__".to_owned(),
        vocabulary: Arc::clone(&vocabulary),
        documents: corpus.documents,
        local_vocab: Default::default(),
    };
    let iterations = config
        .full_lda_iterations
        .unwrap_or_else(|| (config.iterations / 10).max(1));
    let mut sampler = config.sampler_config(k, derive_seed(config.seed, gibbs::TAG_FULL_LDA, 0));
    sampler.iterations = iterations;
    let local = gibbs::train(&whole, &sampler)?;
    let rows: Vec<Vec<f64>> = local.topics.iter().map(|t| t.probs.clone()).collect();
    files::write_topic_rows(&artifact(config, "full_lda_topics.tsv"), &rows)?;
    let (unit, dropped) = merge::normalize_rows(rows, Norm::L2);
    if !dropped.is_empty() {
        return Err(CldaError::Corrupt("full-corpus topics include a zero row".into()));
    }
    Ok(unit)
}

// -------------------------------------------------------------- evaluate --

fn stage_evaluate(config: &PipelineConfig) -> Result<Vec<String>> {
    let vocabulary = files::read_vocabulary(&artifact(config, "vocab.txt"))?;
    let centroid_pairs = files::read_topic_pairs(&artifact(config, "centroids.tsv"))?;
    let centroids = files::densify_topics(
        centroid_pairs,
        vocabulary.len(),
        &artifact(config, "centroids.tsv"),
    )?;
    let test_docs = files::read_bow(&artifact(config, "test.bow"), vocabulary.len())?;
    let ingest_stats = files::read_stats(&artifact(config, "ingest_stats.txt"))?;

    // Centroids become probability distributions over words by L1 scaling;
    // entries are means of smoothed topics, so they stay strictly positive.
    let topics: Vec<TopicDistribution> = centroids
        .iter()
        .map(|row| {
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(CldaError::Corrupt("centroid with no mass".into()));
            }
            Ok(TopicDistribution {
                probs: row.iter().map(|v| v / sum).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let k = topics.len();
    let sampler = config.sampler_config(k, config.seed);
    let mut unscorable = 0usize;
    let scorable: Vec<&Document> = test_docs
        .iter()
        .filter(|d| {
            if d.tokens.is_empty() {
                unscorable += 1;
                false
            } else {
                true
            }
        })
        .collect();
    let doc_probs: Vec<Vec<f64>> = pool(config)?.install(|| {
        scorable
            .par_iter()
            .enumerate()
            .map(|(stream, doc)| {
                let mixture = gibbs::fold_in(&topics, doc, &sampler, stream as u64)?;
                Ok(doc
                    .tokens
                    .iter()
                    .map(|&word| {
                        mixture
                            .props
                            .iter()
                            .zip(&topics)
                            .map(|(&theta, topic)| theta * topic.probs[word])
                            .sum()
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let scored_tokens: usize = doc_probs.iter().map(Vec::len).sum();
    let perplexity_line = if scored_tokens == 0 {
        "n/a".to_string()
    } else {
        format!("{:.6}", metrics::perplexity(&doc_probs)?)
    };

    let oov = ingest_stats
        .iter()
        .find(|(k, _)| k == "oov_tokens_dropped")
        .map(|(_, v)| v.clone())
        .unwrap_or_else(|| "0".into());

    let mut lines = vec![
        format!("perplexity\t{perplexity_line}"),
        format!("heldout_documents\t{}", test_docs.len()),
        format!("scored_documents\t{}", doc_probs.len()),
        format!("scored_tokens\t{scored_tokens}"),
        format!("oov_tokens_dropped\t{oov}"),
        format!("unscorable_documents\t{unscorable}"),
    ];
    if let Some(compare_path) = &config.compare_topics {
        let report = match_against_file(&centroids, compare_path, config.top_n)?;
        lines.push("match_table\trank,idA,idB,jaccard,dice".into());
        for (rank, pair) in report.pairs.iter().enumerate() {
            lines.push(format!(
                "match\t{},{},{},{:.6},{:.6}",
                rank + 1,
                pair.index_a,
                pair.index_b,
                pair.jaccard,
                pair.dice
            ));
        }
    }
    std::fs::write(artifact(config, "eval.txt"), lines.join("\n") + "\n")?;
    Ok(vec![format!(
        "perplexity {perplexity_line} over {scored_tokens} held-out tokens ({unscorable} unscorable documents)"
    )])
}

fn match_against_file(centroids: &[Vec<f64>], path: &Path, top_n: usize) -> Result<MatchReport> {
    let pairs = files::read_topic_pairs(path)?;
    let w = centroids.first().map(Vec::len).unwrap_or(0);
    let external_w = pairs
        .iter()
        .flat_map(|t| t.iter().map(|(id, _)| id + 1))
        .max()
        .unwrap_or(0);
    if external_w > w {
        return Err(CldaError::Config(format!(
            "topic files cover different vocabularies ({external_w} vs {w})"
        )));
    }
    let external = files::densify_topics(pairs, w, path)?;
    let sets_a = word_sets(centroids, top_n, "centroids");
    let sets_b = word_sets(&external, top_n, "external");
    Ok(metrics::greedy_match(&sets_a, &sets_b))
}

fn word_sets(rows: &[Vec<f64>], top_n: usize, label: &str) -> Vec<WordSet> {
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            metrics::top_words(
                &TopicDistribution { probs: row.clone() },
                top_n,
                (label.to_owned(), i),
            )
        })
        .collect()
}

// ---------------------------------------------------------------- report --

fn stage_report(config: &PipelineConfig) -> Result<Vec<String>> {
    let vocabulary = files::read_vocabulary(&artifact(config, "vocab.txt"))?;
    let keys = canonical_segment_keys(config)?;
    let train_docs = files::read_bow(&artifact(config, "train.bow"), vocabulary.len())?;
    let doc_len: HashMap<&str, usize> = train_docs
        .iter()
        .map(|d| (d.doc_id.as_str(), d.tokens.len()))
        .collect();

    let mut locals = Vec::with_capacity(keys.len());
    for key in &keys {
        let mut local = load_local_topic_set(config, key)?;
        let mixtures =
            files::read_mixtures(&files::segment_mixtures_path(&config.output, key))?;
        for (doc_id, props) in mixtures {
            let len = *doc_len.get(doc_id.as_str()).ok_or_else(|| {
                CldaError::Corrupt(format!("mixture for unknown document {doc_id:?}"))
            })?;
            local.doc_ids.push(doc_id);
            local.doc_lengths.push(len);
            local
                .doc_mixtures
                .push(crate::gibbs::DocumentMixture { props });
        }
        locals.push(local);
    }

    let centroid_rows = files::read_topic_pairs(&artifact(config, "centroids.tsv"))?.len();
    let entries = files::read_assignments(&artifact(config, "assignments.tsv"))?;
    let assignments = TopicAssignments::new(centroid_rows, entries)?;
    let report = dynamics::analyze(&assignments, &locals, config.mass_weighting, config.top_n);

    // proportions.csv: one row per segment in canonical order.
    let mut proportions = String::new();
    proportions.push_str("segment");
    for g in 0..assignments.num_clusters {
        proportions.push_str(&format!(",topic_{g}"));
    }
    proportions.push('\n');
    for (key, row) in report.segment_keys.iter().zip(&report.proportions) {
        proportions.push_str(key);
        for v in row {
            proportions.push_str(&format!(",{v:.9}"));
        }
        proportions.push('\n');
    }
    std::fs::write(artifact(config, "proportions.csv"), proportions)?;

    // composition_<g>.csv: member local topics per segment.
    for g in 0..assignments.num_clusters {
        let mut csv = String::from("segment,local_index,fraction,top_words\n");
        for (s, key) in report.segment_keys.iter().enumerate() {
            for entry in &report.compositions[g][s] {
                let words: Vec<&str> = entry
                    .top_word_ids
                    .iter()
                    .map(|&id| vocabulary.word(id))
                    .collect();
                csv.push_str(&format!(
                    "{key},{},{:.9},{}\n",
                    entry.local_index,
                    entry.fraction,
                    words.join(";")
                ));
            }
        }
        std::fs::write(artifact(config, &format!("composition_{g}.csv")), csv)?;
    }

    // birth_death.tsv: presence range and absent segments per global topic.
    let mut bd = String::new();
    for g in 0..assignments.num_clusters {
        let fmt_seg = |s: Option<usize>| {
            s.map(|i| report.segment_keys[i].clone())
                .unwrap_or_else(|| "-".into())
        };
        let absent: Vec<&str> = report.absence.absences[g]
            .iter()
            .map(|&s| report.segment_keys[s].as_str())
            .collect();
        bd.push_str(&format!(
            "{g}\t{}\t{}\t{}\n",
            fmt_seg(report.absence.births[g]),
            fmt_seg(report.absence.deaths[g]),
            absent.join(";")
        ));
    }
    std::fs::write(artifact(config, "birth_death.tsv"), bd)?;

    Ok(vec![format!(
        "reported dynamics for {} segments and {} global topics",
        report.segment_keys.len(),
        assignments.num_clusters
    )])
}

// -------------------------------------------------------------- manifest --

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn collect_artifacts(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_artifacts(&path, out)?;
        } else if path.file_name().is_some_and(|n| n != "manifest.txt") {
            out.push(path);
        }
    }
    Ok(())
}

/// Writes `manifest.txt`: crate version, configuration, seed, wall-clock of
/// the stages just run, and a content hash for every artifact file.
pub fn write_manifest(config: &PipelineConfig, outcomes: &[StageOutcome]) -> Result<()> {
    let mut lines = vec![
        format!("clda_version\t{}", env!("CARGO_PKG_VERSION")),
        format!("seed\t{}", config.seed),
    ];
    for (key, value) in config.dump() {
        lines.push(format!("config\t{key} = {value}"));
    }
    for outcome in outcomes {
        lines.push(format!("stage_seconds\t{}\t{:.3}", outcome.stage, outcome.seconds));
    }
    let mut artifacts = Vec::new();
    collect_artifacts(&config.output, &mut artifacts)?;
    for path in artifacts {
        let rel = path.strip_prefix(&config.output).unwrap_or(&path);
        lines.push(format!("sha256\t{}\t{}", hash_file(&path)?, rel.display()));
    }
    std::fs::write(config.output.join("manifest.txt"), lines.join("\n") + "\n")?;
    Ok(())
}

// --------------------------------------------------------------- compare --

/// Greedy-matches two topic files by their top-`top_n` word sets and writes
/// the sorted table as CSV. Both files must cover the same vocabulary.
pub fn compare_models(
    topics_a: &Path,
    topics_b: &Path,
    top_n: usize,
    output: &Path,
) -> Result<MatchReport> {
    let pairs_a = files::read_topic_pairs(topics_a)?;
    let pairs_b = files::read_topic_pairs(topics_b)?;
    let width = |pairs: &[Vec<(usize, f64)>]| {
        pairs
            .iter()
            .flat_map(|t| t.iter().map(|(id, _)| id + 1))
            .max()
            .unwrap_or(0)
    };
    let (wa, wb) = (width(&pairs_a), width(&pairs_b));
    if wa != wb {
        return Err(CldaError::Config(format!(
            "topic files cover different vocabularies ({wa} vs {wb})"
        )));
    }
    let dense_a = files::densify_topics(pairs_a, wa, topics_a)?;
    let dense_b = files::densify_topics(pairs_b, wb, topics_b)?;
    let report = metrics::greedy_match(
        &word_sets(&dense_a, top_n, "A"),
        &word_sets(&dense_b, top_n, "B"),
    );
    let mut csv = String::from("rank,idA,idB,jaccard,dice\n");
    for (rank, pair) in report.pairs.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            rank + 1,
            pair.index_a,
            pair.index_b,
            pair.jaccard,
            pair.dice
        ));
    }
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(output, csv)?;
    Ok(report)
}
