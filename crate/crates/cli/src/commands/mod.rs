//! Subcommand implementations and the shared dataset pipeline.

pub mod decode;
pub mod eval;
pub mod gradcheck;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use v2c_core::data::{self, files, ClipRecord};
use v2c_core::metrics::EvalClip;
use v2c_core::model::ClipExample;
use v2c_core::numerics::tensor::Tensor;
use v2c_core::tcn::ActionLabel;

/// `--seed` resolved against the V2C_SEED environment override.
pub fn resolve_seed(flag: u64) -> Result<u64> {
    match std::env::var("V2C_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .with_context(|| format!("V2C_SEED must be an integer, got {text:?}")),
        Err(_) => Ok(flag),
    }
}

/// Annotation records plus their raw feature sequences.
pub struct RawDataset {
    pub records: Vec<ClipRecord>,
    pub features: Vec<Tensor>,
    pub feature_dim: usize,
}

/// Load annotations and every referenced feature file (paths resolve
/// relative to the annotation file's directory). Warnings go to stderr.
pub fn load_raw_dataset(annotations: &Path) -> Result<RawDataset> {
    let parsed = data::load_annotations(annotations)?;
    for warning in &parsed.warnings {
        eprintln!("warning: {warning}");
    }
    if parsed.records.is_empty() {
        bail!("{} contains no clips", annotations.display());
    }
    let base = annotations.parent().unwrap_or(Path::new("."));
    let mut features = Vec::with_capacity(parsed.records.len());
    let mut feature_dim = None;
    for record in &parsed.records {
        let path = base.join(&record.feature_path);
        let tensor =
            files::load_features(&path).with_context(|| format!("clip {}", record.clip_id))?;
        match feature_dim {
            None => feature_dim = Some(tensor.cols()),
            Some(d) if d != tensor.cols() => bail!(
                "clip {} has feature dim {}, expected {}",
                record.clip_id,
                tensor.cols(),
                d
            ),
            _ => {}
        }
        features.push(tensor);
    }
    Ok(RawDataset {
        records: parsed.records,
        features,
        feature_dim: feature_dim.unwrap(),
    })
}

/// Which side of a split a command operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitSide {
    Train,
    Test,
    All,
}

/// Deterministically partition clip indices. `ratio = None` keeps everything.
pub fn split_indices(
    count: usize,
    ratio: Option<f64>,
    split_seed: u64,
    side: SplitSide,
) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..count).collect();
    match (ratio, side) {
        (None, _) | (_, SplitSide::All) => Ok(all),
        (Some(r), side) => {
            let (train, test) = data::train_test_split(all, r, split_seed)?;
            Ok(match side {
                SplitSide::Train => train,
                SplitSide::Test => test,
                SplitSide::All => unreachable!(),
            })
        }
    }
}

/// The padding frame: an explicit file wins, then a constant fill value,
/// otherwise the mean feature vector of the given clips.
pub fn resolve_mean_frame(
    flag: Option<&PathBuf>,
    fill: Option<f64>,
    dataset: &RawDataset,
    indices: &[usize],
) -> Result<Tensor> {
    if flag.is_some() && fill.is_some() {
        bail!("--mean-frame and --mean-fill are mutually exclusive");
    }
    if let Some(path) = flag {
        return Ok(files::load_mean_frame(path)?);
    }
    if let Some(value) = fill {
        if !value.is_finite() {
            bail!("--mean-fill must be finite, got {value}");
        }
        return Ok(Tensor::from_vec(vec![value; dataset.feature_dim]));
    }
    let d = dataset.feature_dim;
    let mut sum = vec![0.0f64; d];
    let mut frames = 0usize;
    for &i in indices {
        for t in 0..dataset.features[i].rows() {
            for (s, v) in sum.iter_mut().zip(dataset.features[i].row(t)) {
                *s += v;
            }
        }
        frames += dataset.features[i].rows();
    }
    if frames == 0 {
        bail!("cannot compute a mean frame from zero frames");
    }
    Ok(Tensor::from_vec(
        sum.into_iter().map(|s| s / frames as f64).collect(),
    ))
}

/// Sorted unique action names of the given clips.
pub fn action_classes(dataset: &RawDataset, indices: &[usize]) -> Vec<String> {
    let mut actions: Vec<String> = indices
        .iter()
        .map(|&i| dataset.records[i].action.clone())
        .collect();
    actions.sort();
    actions.dedup();
    actions
}

/// Encode training clips against the vocabulary and action set.
pub fn prepare_train_items(
    dataset: &RawDataset,
    indices: &[usize],
    vocab: &data::Vocabulary,
    actions: &[String],
    frames: usize,
    mean_frame: &Tensor,
) -> Result<Vec<ClipExample>> {
    indices
        .iter()
        .map(|&i| {
            let record = &dataset.records[i];
            let class = actions
                .iter()
                .position(|a| *a == record.action)
                .with_context(|| format!("clip {} has unknown action", record.clip_id))?;
            Ok(ClipExample {
                clip_id: record.clip_id.clone(),
                features: data::prepare_features(&dataset.features[i], frames, mean_frame)?,
                target: data::encode_command(&record.command, vocab, frames)?,
                label: ActionLabel::new(class, actions.len())?,
                command: record.command.clone(),
                action: record.action.clone(),
            })
        })
        .collect()
}

/// Prepare clips for evaluation only (no encoding against the vocabulary).
pub fn prepare_eval_clips(
    dataset: &RawDataset,
    indices: &[usize],
    frames: usize,
    mean_frame: &Tensor,
) -> Result<Vec<EvalClip>> {
    indices
        .iter()
        .map(|&i| {
            let record = &dataset.records[i];
            Ok(EvalClip {
                clip_id: record.clip_id.clone(),
                features: data::prepare_features(&dataset.features[i], frames, mean_frame)?,
                command: record.command.clone(),
                action: record.action.clone(),
            })
        })
        .collect()
}
