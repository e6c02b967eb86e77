//! Corpus-level captioning metrics (BLEU-1..4, ROUGE-L, CIDEr, an
//! exact-match METEOR variant) and the fine-grained action success rate,
//! plus the whole-test-set evaluation pipeline.
//!
//! Every clip carries a single reference. METEOR is implemented without
//! stemming or synonym resources (exact token matches only), so its absolute
//! values are not comparable to tool-based METEOR scores.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{infer, ClipExample, V2cModel};
use crate::numerics::tensor::Tensor;

/// One candidate/reference sentence pair.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub clip_id: String,
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
}

impl EvalPair {
    pub fn new(clip_id: impl Into<String>, candidate: &str, reference: &str) -> Result<Self> {
        let reference: Vec<String> = reference.split_whitespace().map(str::to_string).collect();
        if reference.is_empty() {
            return Err(Error::Validation("reference sentence is empty".into()));
        }
        Ok(EvalPair {
            clip_id: clip_id.into(),
            candidate: candidate.split_whitespace().map(str::to_string).collect(),
            reference,
        })
    }
}

fn ngram_counts(words: &[String], k: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if words.len() >= k {
        for gram in words.windows(k) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-n: clipped modified k-gram precisions aggregated over
/// the corpus for k = 1..n, geometric mean, times the brevity penalty
/// exp(min(0, 1 - R/C)). Any zero precision zeroes the score.
pub fn bleu(pairs: &[EvalPair], n: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("bleu needs at least one pair".into()));
    }
    if !(1..=4).contains(&n) {
        return Err(Error::Validation(format!(
            "bleu order must be 1..4, got {n}"
        )));
    }
    let candidate_len: usize = pairs.iter().map(|p| p.candidate.len()).sum();
    let reference_len: usize = pairs.iter().map(|p| p.reference.len()).sum();
    if candidate_len == 0 {
        return Ok(0.0);
    }

    let mut log_precision_sum = 0.0;
    for k in 1..=n {
        let mut matched = 0usize;
        let mut total = 0usize;
        for pair in pairs {
            let cand = ngram_counts(&pair.candidate, k);
            let reference = ngram_counts(&pair.reference, k);
            for (gram, &count) in &cand {
                let clip = reference.get(gram).copied().unwrap_or(0);
                matched += count.min(clip);
            }
            total += pair.candidate.len().saturating_sub(k - 1);
        }
        if matched == 0 || total == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (matched as f64 / total as f64).ln();
    }
    let brevity = (1.0 - reference_len as f64 / candidate_len as f64).min(0.0);
    Ok((log_precision_sum / n as f64 + brevity).exp())
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    let mut table = vec![0usize; (a.len() + 1) * (b.len() + 1)];
    let cols = b.len() + 1;
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i * cols + j] = if a[i - 1] == b[j - 1] {
                table[(i - 1) * cols + j - 1] + 1
            } else {
                table[(i - 1) * cols + j].max(table[i * cols + j - 1])
            };
        }
    }
    table[a.len() * cols + b.len()]
}

const ROUGE_BETA: f64 = 1.2;

/// Mean over pairs of the LCS-based F-measure with beta = 1.2.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("rouge_l needs at least one pair".into()));
    }
    let mut sum = 0.0;
    for pair in pairs {
        if pair.candidate.is_empty() {
            continue;
        }
        let lcs = lcs_length(&pair.candidate, &pair.reference);
        if lcs == 0 {
            continue;
        }
        let precision = lcs as f64 / pair.candidate.len() as f64;
        let recall = lcs as f64 / pair.reference.len() as f64;
        let beta_sq = ROUGE_BETA * ROUGE_BETA;
        sum += ((1.0 + beta_sq) * recall * precision) / (recall + beta_sq * precision);
    }
    Ok(sum / pairs.len() as f64)
}

/// TF-IDF k-gram consensus score, k = 1..4, scaled by 10. Document
/// frequencies come from the reference sentences; a gram absent from every
/// reference is weighted as if its frequency were one.
pub fn cider(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::Validation(
            "cider needs at least two pairs for document frequencies".into(),
        ));
    }
    let n_docs = pairs.len() as f64;
    let mut total = 0.0;
    for k in 1..=4usize {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for pair in pairs {
            let mut seen: Vec<&[String]> = ngram_counts(&pair.reference, k).into_keys().collect();
            seen.sort();
            for gram in seen {
                *df.entry(gram).or_insert(0) += 1;
            }
        }
        for pair in pairs {
            let cand = ngram_counts(&pair.candidate, k);
            let reference = ngram_counts(&pair.reference, k);
            let idf = |gram: &[String]| -> f64 {
                let d = df.get(gram).copied().unwrap_or(0).max(1);
                (n_docs / d as f64).ln()
            };
            let mut dot = 0.0;
            let mut cand_norm = 0.0;
            let mut ref_norm = 0.0;
            for (gram, &count) in &cand {
                let w = count as f64 * idf(gram);
                cand_norm += w * w;
                if let Some(&ref_count) = reference.get(gram) {
                    dot += w * ref_count as f64 * idf(gram);
                }
            }
            for (gram, &count) in &reference {
                let w = count as f64 * idf(gram);
                ref_norm += w * w;
            }
            if cand_norm > 0.0 && ref_norm > 0.0 {
                total += 10.0 * dot / (cand_norm.sqrt() * ref_norm.sqrt());
            }
        }
    }
    Ok(total / (4.0 * n_docs))
}

/// Minimum chunk count over all maximum one-to-one exact alignments.
/// Sentences here are short commands, so exhaustive search with a
/// feasibility bound is exact and cheap.
fn min_chunks(candidate: &[String], reference: &[String], matches: usize) -> usize {
    struct AlignmentSearch<'a> {
        candidate: &'a [String],
        reference: &'a [String],
        need: usize,
        /// Upper bound on matches obtainable from each candidate suffix.
        suffix_capacity: Vec<usize>,
        best: usize,
    }

    impl AlignmentSearch<'_> {
        fn run(
            &mut self,
            cand_pos: usize,
            used: u64,
            last_ref: Option<usize>,
            matched: usize,
            chunks: usize,
        ) {
            if chunks >= self.best {
                return;
            }
            if matched == self.need {
                self.best = chunks;
                return;
            }
            if cand_pos >= self.candidate.len()
                || matched + self.suffix_capacity[cand_pos] < self.need
            {
                return;
            }
            let word = &self.candidate[cand_pos];
            for j in 0..self.reference.len() {
                if self.reference[j] == *word && used & (1 << j) == 0 {
                    let contiguous = j > 0 && last_ref == Some(j - 1);
                    let next_chunks = if contiguous { chunks } else { chunks + 1 };
                    self.run(
                        cand_pos + 1,
                        used | (1 << j),
                        Some(j),
                        matched + 1,
                        next_chunks,
                    );
                }
            }
            // leave this candidate token unmatched
            self.run(cand_pos + 1, used, None, matched, chunks);
        }
    }

    let mut ref_counts: HashMap<&String, usize> = HashMap::new();
    for w in reference {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    let mut suffix_capacity = vec![0usize; candidate.len() + 1];
    let mut budget = ref_counts;
    for i in (0..candidate.len()).rev() {
        let take = budget
            .get_mut(&candidate[i])
            .map(|b| {
                if *b > 0 {
                    *b -= 1;
                    1
                } else {
                    0
                }
            })
            .unwrap_or(0);
        suffix_capacity[i] = suffix_capacity[i + 1] + take;
    }

    let mut search = AlignmentSearch {
        candidate,
        reference,
        need: matches,
        suffix_capacity,
        best: matches + 1,
    };
    search.run(0, 0, None, 0, 0);
    search.best
}

/// Exact-match METEOR variant: unigram precision/recall F-mean weighted 9:1
/// towards recall, discounted by the fragmentation penalty
/// 0.5 * (chunks / matches)^3. Corpus score is the mean over pairs.
pub fn meteor_exact(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("meteor needs at least one pair".into()));
    }
    if pairs.iter().any(|p| p.reference.len() > 60) {
        return Err(Error::Validation(
            "meteor alignment search supports references up to 60 tokens".into(),
        ));
    }
    let mut sum = 0.0;
    for pair in pairs {
        let mut ref_counts: HashMap<&String, usize> = HashMap::new();
        for w in &pair.reference {
            *ref_counts.entry(w).or_insert(0) += 1;
        }
        let mut matches = 0usize;
        let mut cand_counts: HashMap<&String, usize> = HashMap::new();
        for w in &pair.candidate {
            *cand_counts.entry(w).or_insert(0) += 1;
        }
        for (w, &c) in &cand_counts {
            matches += c.min(ref_counts.get(w).copied().unwrap_or(0));
        }
        if matches == 0 {
            continue;
        }
        let chunks = min_chunks(&pair.candidate, &pair.reference, matches);
        let m = matches as f64;
        let precision = m / pair.candidate.len() as f64;
        let recall = m / pair.reference.len() as f64;
        let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
        let penalty = 0.5 * (chunks as f64 / m).powi(3);
        sum += f_mean * (1.0 - penalty);
    }
    Ok(sum / pairs.len() as f64)
}

/// Exact string-match fraction over equal-length prediction/groundtruth
/// lists.
pub fn action_success_rate(predicted: &[String], groundtruth: &[String]) -> Result<f64> {
    if predicted.len() != groundtruth.len() {
        return Err(Error::Validation(format!(
            "{} predictions vs {} groundtruths",
            predicted.len(),
            groundtruth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Validation("empty action lists".into()));
    }
    let correct = predicted
        .iter()
        .zip(groundtruth)
        .filter(|(p, g)| p == g)
        .count();
    Ok(correct as f64 / predicted.len() as f64)
}

/// Corpus-level scores of one evaluation run.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    /// Success rate of verbs extracted from the generated commands.
    pub action_success_translation: f64,
    /// Success rate of the classification branch.
    pub action_success_classification: f64,
}

/// One line of the per-clip evaluation dump.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalRow {
    pub clip_id: String,
    pub gt_command: String,
    pub generated: String,
    pub gt_action: String,
    pub action_from_translation: String,
    pub action_from_classification: String,
}

/// UTF-8 TSV, one line per clip.
pub fn format_dump(rows: &[EvalRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.clip_id,
            r.gt_command,
            r.generated,
            r.gt_action,
            r.action_from_translation,
            r.action_from_classification
        ));
    }
    out
}

/// What evaluation needs to know about a clip: prepared features and the
/// groundtruth strings. Unlike training items, commands here may contain
/// words or actions the model never saw.
#[derive(Clone, Debug)]
pub struct EvalClip {
    pub clip_id: String,
    pub features: Tensor,
    pub command: String,
    pub action: String,
}

impl From<&ClipExample> for EvalClip {
    fn from(item: &ClipExample) -> Self {
        EvalClip {
            clip_id: item.clip_id.clone(),
            features: item.features.clone(),
            command: item.command.clone(),
            action: item.action.clone(),
        }
    }
}

/// Decode every clip and fill the full report. Needs at least two clips
/// (CIDEr document frequencies). `threads` caps read-only per-clip
/// parallelism; order of results is independent of it.
pub fn evaluate_all(
    model: &V2cModel,
    items: &[EvalClip],
    threads: usize,
) -> Result<(EvalReport, Vec<EvalRow>)> {
    if items.len() < 2 {
        return Err(Error::Validation(
            "evaluation needs at least two clips".into(),
        ));
    }
    let threads = threads.max(1).min(items.len());
    let inferences: Vec<crate::model::Inference> = if threads == 1 {
        items
            .iter()
            .map(|item| infer(model, &item.features))
            .collect::<Result<_>>()?
    } else {
        let chunk = items.len().div_ceil(threads);
        let mut slots: Vec<Option<Result<Vec<crate::model::Inference>>>> =
            (0..threads).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (i, block) in items.chunks(chunk).enumerate() {
                handles.push((
                    i,
                    scope.spawn(move || {
                        block
                            .iter()
                            .map(|item| infer(model, &item.features))
                            .collect::<Result<Vec<_>>>()
                    }),
                ));
            }
            for (i, handle) in handles {
                slots[i] = Some(handle.join().expect("inference thread panicked"));
            }
        });
        let mut all = Vec::with_capacity(items.len());
        for slot in slots.into_iter().flatten() {
            all.extend(slot?);
        }
        all
    };

    let mut pairs = Vec::with_capacity(items.len());
    let mut rows = Vec::with_capacity(items.len());
    let mut pred_translation = Vec::with_capacity(items.len());
    let mut pred_classification = Vec::with_capacity(items.len());
    let mut groundtruth = Vec::with_capacity(items.len());
    for (item, inference) in items.iter().zip(inferences) {
        pairs.push(EvalPair::new(
            item.clip_id.clone(),
            &inference.command,
            &item.command,
        )?);
        pred_translation.push(inference.action_from_translation.clone());
        pred_classification.push(inference.action_from_classification.clone());
        groundtruth.push(item.action.clone());
        rows.push(EvalRow {
            clip_id: item.clip_id.clone(),
            gt_command: item.command.clone(),
            generated: inference.command,
            gt_action: item.action.clone(),
            action_from_translation: inference.action_from_translation,
            action_from_classification: inference.action_from_classification,
        });
    }

    let report = EvalReport {
        bleu: [
            bleu(&pairs, 1)?,
            bleu(&pairs, 2)?,
            bleu(&pairs, 3)?,
            bleu(&pairs, 4)?,
        ],
        meteor: meteor_exact(&pairs)?,
        rouge_l: rouge_l(&pairs)?,
        cider: cider(&pairs)?,
        action_success_translation: action_success_rate(&pred_translation, &groundtruth)?,
        action_success_classification: action_success_rate(&pred_classification, &groundtruth)?,
    };
    Ok((report, rows))
}
