//! `v2c synth`: write a synthetic demonstration dataset.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use v2c_core::data::synth::{synth_generate, write_dataset, SynthSpec};

use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for annotations, features and the mean frame.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub clips: usize,
    #[arg(long, default_value_t = 3)]
    pub hands: usize,
    #[arg(long, default_value_t = 8)]
    pub actions: usize,
    #[arg(long, default_value_t = 6)]
    pub objects: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 18)]
    pub frames_min: usize,
    #[arg(long, default_value_t = 42)]
    pub frames_max: usize,
    /// Per-coordinate Gaussian noise level.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Look-alike action pairs "base:twin", repeatable or comma separated.
    /// The twin shares the base's static embedding with a time-reversed
    /// envelope.
    #[arg(long, value_delimiter = ',')]
    pub confuse: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let seed = super::resolve_seed(args.seed)?;
    if args.noise < 0.0 {
        bail!("--noise must be nonnegative, got {}", args.noise);
    }
    if args.out.exists() {
        let non_empty = std::fs::read_dir(&args.out)
            .with_context(|| format!("reading {}", args.out.display()))?
            .next()
            .is_some();
        if non_empty && !args.force {
            bail!(
                "output directory {} is not empty (use --force to overwrite)",
                args.out.display()
            );
        }
    }

    let mut confusion = Vec::new();
    for entry in &args.confuse {
        let Some((base, twin)) = entry.split_once(':') else {
            bail!("--confuse entries must look like base:twin, got {entry:?}");
        };
        confusion.push((base.to_string(), twin.to_string()));
    }

    let spec = SynthSpec {
        num_clips: args.clips,
        hands: args.hands,
        actions: args.actions,
        objects: args.objects,
        feature_dim: args.dim,
        frames_range: (args.frames_min, args.frames_max),
        noise_sigma: args.noise,
        confusion,
    };
    let mut manifest = ManifestBuilder::new("synth", seed);
    manifest.config(serde_json::json!({
        "clips": spec.num_clips,
        "hands": spec.hands,
        "actions": spec.actions,
        "objects": spec.objects,
        "dim": spec.feature_dim,
        "frames_min": spec.frames_range.0,
        "frames_max": spec.frames_range.1,
        "noise": spec.noise_sigma,
        "confuse": spec.confusion,
    }))?;

    let dataset = synth_generate(&spec, seed)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let paths = write_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} clips ({} hands, {} actions, {} objects, dim {}) under {}",
        spec.num_clips,
        spec.hands,
        spec.actions,
        spec.objects,
        spec.feature_dim,
        args.out.display()
    );

    manifest.output(&paths.annotations);
    manifest.output(&paths.mean_frame);
    manifest.output(&paths.feature_dir);
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}
