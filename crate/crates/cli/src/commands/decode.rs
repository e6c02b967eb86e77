//! `v2c decode`: translate a single feature file. Prints one line:
//! command<TAB>action<TAB>truncated?

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use v2c_core::data::{files, prepare_features};
use v2c_core::model::checkpoint::load_checkpoint;
use v2c_core::model::infer;
use v2c_core::numerics::tensor::Tensor;

use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Feature file to decode.
    #[arg(long)]
    pub features: PathBuf,
    /// Padding frame file; defaults to a zero vector.
    #[arg(long)]
    pub mean_frame: Option<PathBuf>,
    /// Write a run manifest here.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(args: DecodeArgs) -> Result<()> {
    let trainer = load_checkpoint(&args.checkpoint)?;
    let model = trainer.model;
    let sequence = files::load_features(&args.features)?;
    if sequence.cols() != model.config.feature_dim {
        bail!(
            "checkpoint expects feature dim {}, file has {}",
            model.config.feature_dim,
            sequence.cols()
        );
    }
    let mean_frame = match &args.mean_frame {
        Some(path) => files::load_mean_frame(path)?,
        None => Tensor::zeros(vec![model.config.feature_dim]),
    };
    let prepared = prepare_features(&sequence, model.config.frames, &mean_frame)?;
    let out = infer(&model, &prepared)?;
    println!(
        "{}\t{}\t{}",
        out.command,
        out.action,
        if out.truncated {
            "truncated"
        } else {
            "complete"
        }
    );

    if let Some(path) = &args.manifest {
        let mut manifest = ManifestBuilder::new("decode", model.config.seed);
        manifest.config(serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "features": args.features.display().to_string(),
        }))?;
        manifest.input(&args.checkpoint)?;
        manifest.input(&args.features)?;
        manifest.write(path)?;
    }
    Ok(())
}
