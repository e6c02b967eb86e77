//! Dataset ingestion: annotation files, precomputed feature sequences,
//! vocabulary construction, frame sampling and padding, command encoding,
//! verb extraction, train/test splitting and the synthetic generator.

pub mod files;
pub mod synth;

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;

/// End-of-command token, always present in every vocabulary.
pub const EOC: &str = "EOC";
/// Padding token filling word slots after the end of command.
pub const EMPTY: &str = "EMPTY";

/// One annotated demonstration clip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub feature_path: String,
    pub command: String,
    pub action: String,
}

/// Parsed annotation file. Records whose action field disagrees with the
/// command's verb token are kept (the file is authoritative) but reported.
#[derive(Clone, Debug, Default)]
pub struct Annotations {
    pub records: Vec<ClipRecord>,
    pub warnings: Vec<String>,
}

/// One clip per line, four tab-separated fields:
/// clip_id, feature_path, action, command. Lines starting with '#' ignored.
pub fn load_annotations(path: &Path) -> Result<Annotations> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn parse_annotations(text: &str, path: &str) -> Result<Annotations> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashMap::new();
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: line_no,
                msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let record = ClipRecord {
            clip_id: fields[0].to_string(),
            feature_path: fields[1].to_string(),
            action: fields[2].to_string(),
            command: fields[3].to_string(),
        };
        if record.clip_id.is_empty() || record.command.is_empty() {
            return Err(Error::Parse {
                path: path.to_string(),
                line: line_no,
                msg: "empty clip_id or command".into(),
            });
        }
        if let Some(first) = seen.insert(record.clip_id.clone(), line_no) {
            return Err(Error::Parse {
                path: path.to_string(),
                line: line_no,
                msg: format!(
                    "duplicate clip_id {:?} (first seen on line {first})",
                    record.clip_id
                ),
            });
        }
        let verb = extract_action(&record.command);
        if verb != record.action {
            warnings.push(format!(
                "{path}:{line_no}: action {:?} does not match command verb {:?}; keeping the file's action",
                record.action, verb
            ));
        }
        records.push(record);
    }
    Ok(Annotations { records, warnings })
}

/// Serialize records in the annotation file format.
pub fn format_annotations(records: &[ClipRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.clip_id, r.feature_path, r.action, r.command
        ));
    }
    out
}

/// Bidirectional word <-> index map with the two reserved tokens last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    eoc: usize,
    empty: usize,
}

impl Vocabulary {
    /// Words ordered by descending corpus frequency, ties lexicographic,
    /// then EOC and EMPTY appended.
    pub fn build<'a>(commands: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for command in commands {
            any = true;
            for word in command.split_whitespace() {
                if word == EOC || word == EMPTY {
                    return Err(Error::Validation(format!(
                        "command contains reserved token {word:?}"
                    )));
                }
                *counts.entry(word).or_insert(0) += 1;
            }
        }
        if !any || counts.is_empty() {
            return Err(Error::Validation("empty training corpus".into()));
        }
        let mut ordered: Vec<(&str, usize)> = counts.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut words: Vec<String> = ordered.into_iter().map(|(w, _)| w.to_string()).collect();
        words.push(EOC.to_string());
        words.push(EMPTY.to_string());
        Self::from_words(words)
    }

    /// Rebuild from an ordered word list (e.g. out of a checkpoint).
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let index: HashMap<String, usize> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        if index.len() != words.len() {
            return Err(Error::Validation("vocabulary contains duplicates".into()));
        }
        let eoc = *index
            .get(EOC)
            .ok_or_else(|| Error::Validation("vocabulary is missing EOC".into()))?;
        let empty = *index
            .get(EMPTY)
            .ok_or_else(|| Error::Validation("vocabulary is missing EMPTY".into()))?;
        Ok(Vocabulary {
            words,
            index,
            eoc,
            empty,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn eoc_index(&self) -> usize {
        self.eoc
    }

    pub fn empty_index(&self) -> usize {
        self.empty
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

/// Exactly one 1.0 at `index`.
pub fn one_hot(index: usize, size: usize) -> Result<Tensor> {
    if index >= size {
        return Err(Error::Validation(format!(
            "one_hot index {index} out of range for size {size}"
        )));
    }
    let mut values = vec![0.0; size];
    values[index] = 1.0;
    Ok(Tensor::from_vec(values))
}

/// A command padded to a fixed length: word indices ending in EOC, then
/// EMPTY slots. The mask is true through the EOC inclusive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordSequence {
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
}

impl WordSequence {
    /// Number of real (masked-true) words, EOC included.
    pub fn real_words(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Encode a command against a vocabulary, padding to `n` slots.
pub fn encode_command(command: &str, vocab: &Vocabulary, n: usize) -> Result<WordSequence> {
    let words: Vec<&str> = command.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::Validation("cannot encode an empty command".into()));
    }
    if words.len() + 1 > n {
        return Err(Error::Validation(format!(
            "command has {} words; at most {} fit with the EOC in {} slots",
            words.len(),
            n - 1,
            n
        )));
    }
    let mut indices = Vec::with_capacity(n);
    for word in &words {
        let idx = vocab
            .lookup(word)
            .ok_or_else(|| Error::Validation(format!("word {word:?} is not in the vocabulary")))?;
        if idx == vocab.eoc_index() || idx == vocab.empty_index() {
            return Err(Error::Validation(format!(
                "command contains reserved token {word:?}"
            )));
        }
        indices.push(idx);
    }
    indices.push(vocab.eoc_index());
    let real = indices.len();
    indices.resize(n, vocab.empty_index());
    let mut mask = vec![true; real];
    mask.resize(n, false);
    Ok(WordSequence { indices, mask })
}

/// Words of the real span, EOC included.
pub fn decode_indices(seq: &WordSequence, vocab: &Vocabulary) -> Vec<String> {
    seq.indices
        .iter()
        .zip(&seq.mask)
        .filter(|(_, &m)| m)
        .map(|(&i, _)| vocab.word(i).to_string())
        .collect()
}

/// The verb of a grammar-free command "hand verb object ...": token 1.
/// Commands with fewer than two tokens have no verb.
pub fn extract_action(command: &str) -> String {
    command
        .split_whitespace()
        .nth(1)
        .unwrap_or_default()
        .to_string()
}

/// Indices of `n` frames sampled uniformly from a clip of length `total`.
/// Short clips return the identity; padding is handled separately.
pub fn sample_frames(total: usize, n: usize) -> Vec<usize> {
    assert!(total >= 1 && n >= 1);
    if total < n {
        return (0..total).collect();
    }
    if n == 1 {
        return vec![0];
    }
    (0..n)
        .map(|j| {
            let pos = j as f64 * (total - 1) as f64 / (n - 1) as f64;
            (pos.round() as usize).min(total - 1)
        })
        .collect()
}

/// Pad a (sampled) frame block to `n` rows with copies of `mean_frame`.
pub fn pad_features(frames: &Tensor, n: usize, mean_frame: &Tensor) -> Result<Tensor> {
    let d = frames.cols();
    if mean_frame.len() != d {
        return Err(Error::Shape {
            op: "pad_features",
            detail: format!(
                "mean frame {:?} vs features {:?}",
                mean_frame.shape(),
                frames.shape()
            ),
        });
    }
    let rows = frames.rows();
    let mut values = Vec::with_capacity(n * d);
    for t in 0..rows.min(n) {
        values.extend_from_slice(frames.row(t));
    }
    while values.len() < n * d {
        values.extend_from_slice(mean_frame.values());
    }
    Tensor::new(vec![n, d], values)
}

/// Sample, then pad: always yields exactly `n` rows.
pub fn prepare_features(sequence: &Tensor, n: usize, mean_frame: &Tensor) -> Result<Tensor> {
    let total = sequence.rows();
    if total == 0 {
        return Err(Error::EmptySequence);
    }
    let picks = sample_frames(total, n);
    let d = sequence.cols();
    let mut values = Vec::with_capacity(picks.len() * d);
    for &t in &picks {
        values.extend_from_slice(sequence.row(t));
    }
    let sampled = Tensor::new(vec![picks.len(), d], values)?;
    pad_features(&sampled, n, mean_frame)
}

/// Seeded shuffle, then split at floor(ratio * len).
pub fn train_test_split<T>(mut items: Vec<T>, ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::Validation(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let mut rng = Rng::substream(seed, 0x53504c49); // split stream
    rng.shuffle(&mut items);
    let cut = (ratio * items.len() as f64).floor() as usize;
    let test = items.split_off(cut);
    Ok((items, test))
}
