//! Synthetic fine-grained demonstration generator.
//!
//! Each clip pairs a command "hand action object" with a feature sequence
//! built from fixed random unit embeddings: the hand and object embeddings
//! are static across frames, while the action embedding is scaled by a
//! temporal envelope, so the action is identifiable from temporal structure.
//! A confusion pair makes two actions share the static embedding and differ
//! only in envelope orientation: their frame-value distributions match and
//! only the ordering in time tells them apart.

use std::path::{Path, PathBuf};

use crate::data::files;
use crate::data::{format_annotations, ClipRecord};
use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;

const HAND_NAMES: &[&str] = &["righthand", "lefthand", "bothhand"];
const ACTION_NAMES: &[&str] = &[
    "cut", "pour", "stir", "shake", "carry", "place", "reach", "take", "crack", "transfer",
    "spread", "open",
];
const OBJECT_NAMES: &[&str] = &[
    "apple", "milk", "bowl", "egg", "pan", "cup", "knife", "salt", "butter", "teabag", "kettle",
    "spatula",
];

fn name_pool(pool: &[&str], prefix: &str, count: usize) -> Vec<String> {
    (0..count)
        .map(|i| {
            pool.get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("{prefix}{i}"))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub num_clips: usize,
    pub hands: usize,
    pub actions: usize,
    pub objects: usize,
    pub feature_dim: usize,
    /// Inclusive range of raw frame counts per clip.
    pub frames_range: (usize, usize),
    pub noise_sigma: f64,
    /// action -> look-alike action, by name. The look-alike reuses the
    /// action's static embedding with a time-reversed envelope.
    pub confusion: Vec<(String, String)>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_clips: 64,
            hands: 3,
            actions: 8,
            objects: 6,
            feature_dim: 32,
            frames_range: (18, 42),
            noise_sigma: 0.05,
            confusion: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Envelope {
    /// Rise over the first quarter, hold, fall over the last quarter.
    Trapezoid,
    /// Rise over the first half, then hold.
    RampHold,
    /// Hold, then fall over the second half; time reversal of RampHold.
    HoldRamp,
}

impl Envelope {
    fn value(self, t: usize, total: usize) -> f64 {
        if total <= 1 {
            return 1.0;
        }
        let u = t as f64 / (total - 1) as f64;
        match self {
            Envelope::Trapezoid => (u.min(1.0 - u) / 0.25).min(1.0),
            Envelope::RampHold => (u / 0.5).min(1.0),
            Envelope::HoldRamp => ((1.0 - u) / 0.5).min(1.0),
        }
    }
}

/// One generated clip with its feature sequence still in memory.
#[derive(Clone, Debug)]
pub struct SynthClip {
    pub record: ClipRecord,
    pub features: Tensor,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub clips: Vec<SynthClip>,
    pub mean_frame: Tensor,
    pub hand_names: Vec<String>,
    pub action_names: Vec<String>,
    pub object_names: Vec<String>,
}

fn unit_embedding(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Generate the dataset in memory. All draws come from the seeded stream in
/// a fixed order, so the same seed yields the same dataset byte for byte.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthData> {
    if spec.num_clips == 0 || spec.hands == 0 || spec.actions == 0 || spec.objects == 0 {
        return Err(Error::Validation(
            "synthetic spec needs at least one clip, hand, action and object".into(),
        ));
    }
    if spec.feature_dim < spec.hands + spec.actions + spec.objects {
        return Err(Error::Validation(format!(
            "feature dim {} is below hands+actions+objects = {}",
            spec.feature_dim,
            spec.hands + spec.actions + spec.objects
        )));
    }
    let (t_min, t_max) = spec.frames_range;
    if t_min < 4 || t_max < t_min {
        return Err(Error::Validation(format!(
            "frame range ({t_min}, {t_max}) must satisfy 4 <= min <= max"
        )));
    }
    if spec.noise_sigma < 0.0 {
        return Err(Error::Validation(format!(
            "noise sigma must be nonnegative, got {}",
            spec.noise_sigma
        )));
    }

    let hand_names = name_pool(HAND_NAMES, "hand", spec.hands);
    let action_names = name_pool(ACTION_NAMES, "act", spec.actions);
    let object_names = name_pool(OBJECT_NAMES, "obj", spec.objects);

    let find_action = |name: &str| -> Result<usize> {
        action_names
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::Validation(format!("confusion names unknown action {name:?}")))
    };
    let mut envelopes = vec![Envelope::Trapezoid; spec.actions];
    let mut share_embedding: Vec<usize> = (0..spec.actions).collect();
    for (base, twin) in &spec.confusion {
        let base = find_action(base)?;
        let twin = find_action(twin)?;
        if base == twin {
            return Err(Error::Validation(
                "confusion pair maps an action to itself".into(),
            ));
        }
        envelopes[base] = Envelope::RampHold;
        envelopes[twin] = Envelope::HoldRamp;
        share_embedding[twin] = base;
    }

    let d = spec.feature_dim;
    let hand_span = (d / 4).max(1);
    let object_span = (d / 4).max(1);
    let action_span = d - hand_span - object_span;

    let mut rng = Rng::substream(seed, 0x53594e54); // synth stream
    let hand_embed: Vec<Vec<f64>> = (0..spec.hands)
        .map(|_| unit_embedding(hand_span, &mut rng))
        .collect();
    let action_embed_raw: Vec<Vec<f64>> = (0..spec.actions)
        .map(|_| unit_embedding(action_span, &mut rng))
        .collect();
    let object_embed: Vec<Vec<f64>> = (0..spec.objects)
        .map(|_| unit_embedding(object_span, &mut rng))
        .collect();
    let action_embed: Vec<&Vec<f64>> = share_embedding
        .iter()
        .map(|&src| &action_embed_raw[src])
        .collect();

    let mut clips = Vec::with_capacity(spec.num_clips);
    let mut sum = vec![0.0f64; d];
    let mut frame_count = 0usize;
    for clip_idx in 0..spec.num_clips {
        let total = t_min + rng.below(t_max - t_min + 1);
        let hand = rng.below(spec.hands);
        let action = rng.below(spec.actions);
        let object = rng.below(spec.objects);
        let envelope = envelopes[action];

        let mut values = Vec::with_capacity(total * d);
        for t in 0..total {
            let env = envelope.value(t, total);
            for &h in &hand_embed[hand] {
                values.push(h + spec.noise_sigma * rng.normal());
            }
            for &a in action_embed[action] {
                values.push(env * a + spec.noise_sigma * rng.normal());
            }
            for &o in &object_embed[object] {
                values.push(o + spec.noise_sigma * rng.normal());
            }
        }
        for frame in values.chunks_exact(d) {
            for (s, v) in sum.iter_mut().zip(frame) {
                *s += v;
            }
        }
        frame_count += total;

        let clip_id = format!("clip{clip_idx:04}");
        clips.push(SynthClip {
            record: ClipRecord {
                clip_id: clip_id.clone(),
                feature_path: format!("features/{clip_id}.v2cf"),
                command: format!(
                    "{} {} {}",
                    hand_names[hand], action_names[action], object_names[object]
                ),
                action: action_names[action].clone(),
            },
            features: Tensor::new(vec![total, d], values)?,
        });
    }

    let mean_frame = Tensor::from_vec(sum.iter().map(|s| s / frame_count as f64).collect());
    Ok(SynthData {
        clips,
        mean_frame,
        hand_names,
        action_names,
        object_names,
    })
}

/// Paths produced by [`write_dataset`].
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub annotations: PathBuf,
    pub mean_frame: PathBuf,
    pub feature_dir: PathBuf,
}

/// Write annotations, per-clip feature files and the mean frame under `dir`.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<DatasetPaths> {
    let feature_dir = dir.join("features");
    std::fs::create_dir_all(&feature_dir)
        .map_err(|e| Error::io(feature_dir.display().to_string(), e))?;
    for clip in &data.clips {
        files::write_features(&dir.join(&clip.record.feature_path), &clip.features)?;
    }
    let annotations = dir.join("annotations.tsv");
    let records: Vec<ClipRecord> = data.clips.iter().map(|c| c.record.clone()).collect();
    std::fs::write(&annotations, format_annotations(&records))
        .map_err(|e| Error::io(annotations.display().to_string(), e))?;
    let mean_frame = dir.join("mean.v2cm");
    files::write_mean_frame(&mean_frame, &data.mean_frame)?;
    Ok(DatasetPaths {
        annotations,
        mean_frame,
        feature_dir,
    })
}
