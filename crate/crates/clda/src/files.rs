//! Readers and writers for the pipeline's on-disk artifacts. All formats are
//! line-oriented UTF-8; probabilities are written with nine decimal places,
//! merged-matrix values at full round-trip precision.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::corpus::{Document, Vocabulary};
use crate::error::{CldaError, Result};
use crate::gibbs::DocumentMixture;
use crate::kmeans::Clustering;
use crate::merge::{RowProvenance, TopicMatrix};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> CldaError {
    CldaError::Parse {
        path: path.to_owned(),
        line,
        msg: msg.into(),
    }
}

pub fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CldaError::MissingArtifact(path.to_owned()))
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    require(path)?;
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = create(path)?;
    for word in vocab.words() {
        writeln!(out, "{word}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let mut words = Vec::new();
    for line in open(path)?.lines() {
        words.push(line?);
    }
    Vocabulary::new(words)
}

pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let mut words = Vec::new();
    for line in open(path)?.lines() {
        let line = line?;
        let word = line.trim();
        if !word.is_empty() {
            words.push(word.to_owned());
        }
    }
    Ok(words)
}

/// Bag-of-words lines: `doc_id<TAB>segment_key<TAB>wordid:count ...` with
/// word ids ascending. Token order is immaterial to the sampler, so encoding
/// to counts and re-expanding in id order round-trips the model inputs.
pub fn write_bow(path: &Path, docs: &[Document]) -> Result<()> {
    let mut out = create(path)?;
    for doc in docs {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &t in &doc.tokens {
            *counts.entry(t).or_insert(0) += 1;
        }
        write!(out, "{}\t{}\t", doc.doc_id, doc.segment_key)?;
        let mut first = true;
        for (id, count) in counts {
            if !first {
                write!(out, " ")?;
            }
            write!(out, "{id}:{count}")?;
            first = false;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_bow(path: &Path, vocab_size: usize) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let doc_id = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno + 1, "missing doc id"))?;
        let segment_key = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno + 1, "missing segment key"))?;
        let body = fields.next().unwrap_or("");
        let mut tokens = Vec::new();
        for pair in body.split_whitespace() {
            let (id, count) = pair
                .split_once(':')
                .ok_or_else(|| parse_err(path, lineno + 1, format!("bad id:count pair {pair:?}")))?;
            let id: usize = id
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad word id {id:?}")))?;
            let count: usize = count
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad count {count:?}")))?;
            if id >= vocab_size {
                return Err(parse_err(
                    path,
                    lineno + 1,
                    format!("word id {id} exceeds vocabulary size {vocab_size}"),
                ));
            }
            tokens.extend(std::iter::repeat_n(id, count));
        }
        if tokens.is_empty() {
            return Err(parse_err(path, lineno + 1, "document has no tokens"));
        }
        docs.push(Document {
            doc_id: doc_id.to_owned(),
            segment_key: segment_key.to_owned(),
            tokens,
        });
    }
    Ok(docs)
}

/// Topic rows as `index<TAB>wordid:value ...`, nine decimal places.
pub fn write_topic_rows(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = create(path)?;
    for (index, row) in rows.iter().enumerate() {
        write!(out, "{index}\t")?;
        for (word, value) in row.iter().enumerate() {
            if word > 0 {
                write!(out, " ")?;
            }
            write!(out, "{word}:{value:.9}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Raw-count topic rows for debugging, same shape with integer values.
pub fn write_topic_counts(path: &Path, rows: &[Vec<usize>]) -> Result<()> {
    let mut out = create(path)?;
    for (index, row) in rows.iter().enumerate() {
        write!(out, "{index}\t")?;
        for (word, value) in row.iter().enumerate() {
            if word > 0 {
                write!(out, " ")?;
            }
            write!(out, "{word}:{value}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads topic rows as sparse (word id, value) pairs, one topic per line.
/// Lines must be indexed 0..n in order.
pub fn read_topic_pairs(path: &Path) -> Result<Vec<Vec<(usize, f64)>>> {
    let mut topics = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (index, body) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno + 1, "missing topic index"))?;
        let index: usize = index
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad topic index {index:?}")))?;
        if index != topics.len() {
            return Err(parse_err(
                path,
                lineno + 1,
                format!("expected topic index {}, found {index}", topics.len()),
            ));
        }
        let mut pairs = Vec::new();
        for pair in body.split_whitespace() {
            let (id, value) = pair
                .split_once(':')
                .ok_or_else(|| parse_err(path, lineno + 1, format!("bad id:value pair {pair:?}")))?;
            let id: usize = id
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad word id {id:?}")))?;
            let value: f64 = value
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad value {value:?}")))?;
            pairs.push((id, value));
        }
        topics.push(pairs);
    }
    Ok(topics)
}

/// Densifies sparse topic rows against a known vocabulary size.
pub fn densify_topics(pairs: Vec<Vec<(usize, f64)>>, vocab_size: usize, path: &Path) -> Result<Vec<Vec<f64>>> {
    pairs
        .into_iter()
        .map(|topic| {
            let mut row = vec![0.0; vocab_size];
            for (id, value) in topic {
                if id >= vocab_size {
                    return Err(CldaError::Corrupt(format!(
                        "{}: word id {id} exceeds vocabulary size {vocab_size}",
                        path.display()
                    )));
                }
                row[id] = value;
            }
            Ok(row)
        })
        .collect()
}

/// Mixtures mirror topic rows per document: `doc_id<TAB>topic:prob ...`.
pub fn write_mixtures(path: &Path, doc_ids: &[String], mixtures: &[DocumentMixture]) -> Result<()> {
    let mut out = create(path)?;
    for (doc_id, mixture) in doc_ids.iter().zip(mixtures) {
        write!(out, "{doc_id}\t")?;
        for (topic, p) in mixture.props.iter().enumerate() {
            if topic > 0 {
                write!(out, " ")?;
            }
            write!(out, "{topic}:{p:.9}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_mixtures(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut mixtures = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (doc_id, body) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno + 1, "missing doc id"))?;
        let mut props = Vec::new();
        for pair in body.split_whitespace() {
            let (topic, value) = pair
                .split_once(':')
                .ok_or_else(|| parse_err(path, lineno + 1, format!("bad topic:prob pair {pair:?}")))?;
            let topic: usize = topic
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad topic index {topic:?}")))?;
            if topic != props.len() {
                return Err(parse_err(path, lineno + 1, "topic indices out of order"));
            }
            let value: f64 = value
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad probability {value:?}")))?;
            props.push(value);
        }
        mixtures.push((doc_id.to_owned(), props));
    }
    Ok(mixtures)
}

/// Merged matrix: header `rows W`, then `segment<TAB>local_index<TAB>v0 v1 ...`
/// per row. Values use full round-trip precision so clustering sees exactly
/// what merging produced.
pub fn write_merged(path: &Path, matrix: &TopicMatrix) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{} {}", matrix.num_rows(), matrix.vocab_size)?;
    for (row, p) in matrix.rows.iter().zip(&matrix.provenance) {
        write!(out, "{}\t{}\t", p.segment_key, p.local_index)?;
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                write!(out, " ")?;
            }
            write!(out, "{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_merged(path: &Path) -> Result<TopicMatrix> {
    let mut lines = open(path)?.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(parse_err(path, 1, "empty merged matrix file")),
    };
    let mut parts = header.split_whitespace();
    let num_rows: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(path, 1, "bad row count in header"))?;
    let vocab_size: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(path, 1, "bad vocabulary size in header"))?;
    let mut rows = Vec::with_capacity(num_rows);
    let mut provenance = Vec::with_capacity(num_rows);
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let segment = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno + 1, "missing segment key"))?;
        let local_index: usize = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno + 1, "missing local index"))?
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, "bad local index"))?;
        let values = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno + 1, "missing row values"))?;
        let row: std::result::Result<Vec<f64>, _> =
            values.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|_| parse_err(path, lineno + 1, "bad row value"))?;
        if row.len() != vocab_size {
            return Err(parse_err(
                path,
                lineno + 1,
                format!("row has {} values, header says {vocab_size}", row.len()),
            ));
        }
        rows.push(row);
        provenance.push(RowProvenance {
            segment_key: segment.to_owned(),
            local_index,
        });
    }
    if rows.len() != num_rows {
        return Err(parse_err(
            path,
            1,
            format!("header promises {num_rows} rows, found {}", rows.len()),
        ));
    }
    Ok(TopicMatrix {
        vocab_size,
        rows,
        provenance,
        dropped: Vec::new(),
    })
}

/// Assignment triples: `segment_key<TAB>local_index<TAB>cluster_id`.
pub fn write_assignments(path: &Path, matrix: &TopicMatrix, clustering: &Clustering) -> Result<()> {
    let mut out = create(path)?;
    for (p, &cluster) in matrix.provenance.iter().zip(&clustering.assignment) {
        writeln!(out, "{}\t{}\t{}", p.segment_key, p.local_index, cluster)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_assignments(path: &Path) -> Result<Vec<(String, usize, usize)>> {
    let mut entries = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(path, lineno + 1, "expected three tab-separated fields"));
        }
        let local_index: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, "bad local index"))?;
        let cluster: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, "bad cluster id"))?;
        entries.push((fields[0].to_owned(), local_index, cluster));
    }
    Ok(entries)
}

/// Simple `key<TAB>value` stats files, order-preserving.
pub fn write_stats(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = create(path)?;
    for (key, value) in entries {
        writeln!(out, "{key}\t{value}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_stats(path: &Path) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno + 1, "expected key<TAB>value"))?;
        entries.push((key.to_owned(), value.to_owned()));
    }
    Ok(entries)
}

/// Raw text records: `doc_id<TAB>segment_key<TAB>raw_text`.
pub fn read_text_records(path: &Path) -> Result<Vec<(String, String, String)>> {
    let mut records = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let doc_id = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno + 1, "missing doc id"))?;
        let segment = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno + 1, "missing segment key"))?;
        let text = fields.next().unwrap_or("");
        records.push((doc_id.to_owned(), segment.to_owned(), text.to_owned()));
    }
    Ok(records)
}

/// Filesystem-safe directory name for a segment key. Keys that collide after
/// sanitization are rejected upstream.
pub fn segment_dir_name(key: &str) -> String {
    key.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn segment_topics_path(out_dir: &Path, key: &str) -> PathBuf {
    out_dir.join("segments").join(segment_dir_name(key)).join("topics.tsv")
}

pub fn segment_mixtures_path(out_dir: &Path, key: &str) -> PathBuf {
    out_dir.join("segments").join(segment_dir_name(key)).join("mixtures.tsv")
}
