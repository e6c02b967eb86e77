//! `v2c train`: train on an annotated dataset and write checkpoint, loss
//! log and manifest.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use v2c_core::data::Vocabulary;
use v2c_core::model::checkpoint::{load_checkpoint, save_checkpoint};
use v2c_core::model::{InitStateMode, ModelConfig, Trainer, V2cModel};
use v2c_core::recurrent::CellKind;
use v2c_core::tcn::{ClsLossKind, TcnConfig};
use v2c_core::translator::InferenceFeeding;

use crate::manifest::ManifestBuilder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CellFlag {
    Lstm,
    Gru,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FeedingFlag {
    Zeros,
    Autoregressive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ClsLossFlag {
    Sigmoid,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum InitStateFlag {
    Zero,
    Uniform,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Annotation file; feature paths resolve relative to its directory.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Output directory for checkpoint.v2c, loss.tsv and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Padding frame file; defaults to the mean feature vector of the
    /// training clips.
    #[arg(long)]
    pub mean_frame: Option<PathBuf>,
    /// Pad with a constant vector of this value instead.
    #[arg(long, conflicts_with = "mean_frame")]
    pub mean_fill: Option<f64>,
    #[arg(long, value_enum, default_value_t = CellFlag::Lstm)]
    pub cell: CellFlag,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Frames per clip (also the padded command length).
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Train the translation-only baseline (classification branch held at
    /// its initialization).
    #[arg(long)]
    pub ednet: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on this fraction of the clips (seeded shuffle); the rest is
    /// held out for evaluation.
    #[arg(long)]
    pub split: Option<f64>,
    /// Seed of the split shuffle; defaults to --seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = FeedingFlag::Zeros)]
    pub feeding: FeedingFlag,
    #[arg(long, value_enum, default_value_t = ClsLossFlag::Sigmoid)]
    pub cls_loss: ClsLossFlag,
    #[arg(long, value_enum, default_value_t = InitStateFlag::Zero)]
    pub init_state: InitStateFlag,
    /// Weight on the classification loss term.
    #[arg(long, default_value_t = 1.0)]
    pub cls_weight: f64,
    /// Convolution filter counts, e.g. 128,64,32.
    #[arg(long, value_delimiter = ',', default_values_t = [128, 64, 32])]
    pub tcn_filters: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub tcn_fc: usize,
    /// Continue training from an existing checkpoint; epoch numbering
    /// resumes where it stopped.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    if args.tcn_filters.len() != 3 {
        bail!(
            "--tcn-filters needs exactly three comma-separated counts, got {:?}",
            args.tcn_filters
        );
    }
    let seed = super::resolve_seed(args.seed)?;
    let dataset = super::load_raw_dataset(&args.annotations)?;
    let split_seed = args.split_seed.unwrap_or(seed);
    let train_indices = super::split_indices(
        dataset.records.len(),
        args.split,
        split_seed,
        super::SplitSide::Train,
    )?;
    if train_indices.is_empty() {
        bail!("the training side of the split is empty");
    }

    let mut trainer = match &args.resume {
        Some(path) => {
            let trainer = load_checkpoint(path)?;
            if trainer.model.config.feature_dim != dataset.feature_dim {
                bail!(
                    "checkpoint expects feature dim {}, dataset has {}",
                    trainer.model.config.feature_dim,
                    dataset.feature_dim
                );
            }
            trainer
        }
        None => {
            let config = ModelConfig {
                frames: args.frames,
                hidden: args.hidden,
                cell: match args.cell {
                    CellFlag::Lstm => CellKind::Lstm,
                    CellFlag::Gru => CellKind::Gru,
                },
                feature_dim: dataset.feature_dim,
                classes: 0, // set below once the action set is known
                joint: !args.ednet,
                epochs: args.epochs,
                batch_size: args.batch,
                learning_rate: args.lr,
                seed,
                inference_feeding: match args.feeding {
                    FeedingFlag::Zeros => InferenceFeeding::Zeros,
                    FeedingFlag::Autoregressive => InferenceFeeding::Autoregressive,
                },
                cls_loss_kind: match args.cls_loss {
                    ClsLossFlag::Sigmoid => ClsLossKind::Sigmoid,
                    ClsLossFlag::Softmax => ClsLossKind::Softmax,
                },
                init_state: match args.init_state {
                    InitStateFlag::Zero => InitStateMode::Zero,
                    InitStateFlag::Uniform => InitStateMode::Uniform,
                },
                cls_weight: args.cls_weight,
                tcn: TcnConfig {
                    filters: [
                        args.tcn_filters[0],
                        args.tcn_filters[1],
                        args.tcn_filters[2],
                    ],
                    fc_hidden: args.tcn_fc,
                    ..Default::default()
                },
            };
            let actions = super::action_classes(&dataset, &train_indices);
            let commands: Vec<&str> = train_indices
                .iter()
                .map(|&i| dataset.records[i].command.as_str())
                .collect();
            let vocab = Vocabulary::build(commands)?;
            let config = ModelConfig {
                classes: actions.len(),
                ..config
            };
            Trainer::new(V2cModel::new(config, vocab, actions)?)
        }
    };

    let config = trainer.model.config.clone();
    println!(
        "training {} | cell={} hidden={} n={} batch={} lr={} epochs={} seed={} clips={}",
        if config.joint {
            "joint model"
        } else {
            "translation-only baseline"
        },
        config.cell,
        config.hidden,
        config.frames,
        config.batch_size,
        config.learning_rate,
        args.epochs,
        config.seed,
        train_indices.len(),
    );

    let mean_frame =
        super::resolve_mean_frame(args.mean_frame.as_ref(), args.mean_fill, &dataset, &train_indices)?;
    let items = super::prepare_train_items(
        &dataset,
        &train_indices,
        &trainer.model.vocab,
        &trainer.model.actions.clone(),
        config.frames,
        &mean_frame,
    )?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut manifest = ManifestBuilder::new("train", seed);
    manifest.config(&config)?;
    manifest.input(&args.annotations)?;
    if let Some(mf) = &args.mean_frame {
        manifest.input(mf)?;
    }

    let loss_path = args.out.join("loss.tsv");
    let mut loss_log = std::io::BufWriter::new(
        std::fs::File::create(&loss_path)
            .with_context(|| format!("creating {}", loss_path.display()))?,
    );
    writeln!(loss_log, "epoch\ttotal\tcls\ttrans")?;
    let report_every = (args.epochs / 10).max(1);
    trainer.run(&items, args.epochs, |record| {
        let _ = writeln!(
            loss_log,
            "{}\t{:.12e}\t{:.12e}\t{:.12e}",
            record.epoch, record.total, record.cls, record.trans
        );
        if record.epoch % report_every == 0 || record.epoch == args.epochs {
            println!(
                "epoch {:>5}  loss {:.6}  cls {:.6}  trans {:.6}",
                record.epoch, record.total, record.cls, record.trans
            );
        }
    })?;
    loss_log.flush()?;

    let ckpt_path = args.out.join("checkpoint.v2c");
    save_checkpoint(&trainer, &ckpt_path)?;
    println!("checkpoint written to {}", ckpt_path.display());

    manifest.output(&ckpt_path);
    manifest.output(&loss_path);
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}
