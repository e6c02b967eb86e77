//! `v2c eval`: run the checkpoint over a dataset and print the corpus
//! metric report, Table-style at three decimals.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use v2c_core::metrics::{evaluate_all, format_dump, EvalReport};
use v2c_core::model::checkpoint::load_checkpoint;

use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Padding frame file; defaults to the mean feature vector of the
    /// evaluated clips.
    #[arg(long)]
    pub mean_frame: Option<PathBuf>,
    /// Pad with a constant vector of this value instead.
    #[arg(long, conflicts_with = "mean_frame")]
    pub mean_fill: Option<f64>,
    /// Reproduce a training split and evaluate one side of it.
    #[arg(long)]
    pub split: Option<f64>,
    /// Seed of the split shuffle; defaults to the checkpoint's seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Which side to evaluate when --split is given.
    #[arg(long, value_enum, default_value_t = super::SplitSide::Test)]
    pub on: super::SplitSide,
    /// Write the per-clip TSV dump here.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Directory for the run manifest; defaults next to --dump or nowhere.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Read-only inference threads.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

pub fn print_report(report: &EvalReport) {
    println!("Bleu_1  Bleu_2  Bleu_3  Bleu_4  METEOR  ROUGE_L CIDEr");
    println!(
        "{:<7.3} {:<7.3} {:<7.3} {:<7.3} {:<7.3} {:<7.3} {:<7.3}",
        report.bleu[0],
        report.bleu[1],
        report.bleu[2],
        report.bleu[3],
        report.meteor,
        report.rouge_l,
        report.cider
    );
    println!(
        "action success (translation branch):    {:.2}%",
        100.0 * report.action_success_translation
    );
    println!(
        "action success (classification branch): {:.2}%",
        100.0 * report.action_success_classification
    );
}

pub fn run(args: EvalArgs) -> Result<()> {
    if args.threads < 1 {
        bail!("--threads must be at least 1");
    }
    let trainer = load_checkpoint(&args.checkpoint)?;
    let model = trainer.model;
    let seed = super::resolve_seed(model.config.seed)?;
    let dataset = super::load_raw_dataset(&args.annotations)?;
    if dataset.feature_dim != model.config.feature_dim {
        bail!(
            "checkpoint expects feature dim {}, dataset has {} ({})",
            model.config.feature_dim,
            dataset.feature_dim,
            args.annotations.display()
        );
    }

    let split_seed = args.split_seed.unwrap_or(model.config.seed);
    let indices = super::split_indices(dataset.records.len(), args.split, split_seed, args.on)?;
    if indices.len() < 2 {
        bail!("evaluation needs at least two clips, got {}", indices.len());
    }
    let mean_frame =
        super::resolve_mean_frame(args.mean_frame.as_ref(), args.mean_fill, &dataset, &indices)?;
    let clips = super::prepare_eval_clips(&dataset, &indices, model.config.frames, &mean_frame)?;

    let mut manifest = ManifestBuilder::new("eval", seed);
    manifest.config(serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "annotations": args.annotations.display().to_string(),
        "split": args.split,
        "split_seed": split_seed,
        "on": format!("{:?}", args.on),
        "threads": args.threads,
        "clips": clips.len(),
        "model": &model.config,
    }))?;
    manifest.input(&args.checkpoint)?;
    manifest.input(&args.annotations)?;

    let (report, rows) = evaluate_all(&model, &clips, args.threads)?;
    print_report(&report);

    if let Some(dump) = &args.dump {
        std::fs::write(dump, format_dump(&rows))
            .with_context(|| format!("writing {}", dump.display()))?;
        println!("per-clip dump written to {}", dump.display());
        manifest.output(dump);
    }
    if let Some(dir) = &args.manifest {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        manifest.write(&dir.join("manifest.json"))?;
    } else if let Some(dump) = &args.dump {
        let next_to_dump = dump.with_extension("manifest.json");
        manifest.write(&next_to_dump)?;
    }
    Ok(())
}
