//! The joint two-branch network: shared feature input, classification and
//! translation branches, the single multi-task loss, the training loop,
//! inference and checkpointing. Disabling the classification term turns the
//! same network into the translation-only baseline.

pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::data::{extract_action, Vocabulary, WordSequence};
use crate::error::{Error, Result};
use crate::numerics::adam::{AdamConfig, Optimizer};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::{ParamSet, Tensor};
use crate::recurrent::{state_from_values, CellKind, RnnState};
use crate::tcn::{
    classify, cls_loss, init_tcn, tcn_forward, ActionLabel, ClsLossKind, TcnConfig, TcnParams,
};
use crate::translator::{
    assemble_command, decode_greedy, decode_train, encode, init_translator, trans_loss,
    InferenceFeeding, TranslatorParams,
};

const INIT_STREAM: u64 = 0x494e4954;
const SHUFFLE_STREAM: u64 = 0x53485546;
const STATE_STREAM: u64 = 0x53544154;

/// How the recurrent layers' first state is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStateMode {
    Zero,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frames per clip (and padded command length).
    pub frames: usize,
    pub hidden: usize,
    pub cell: CellKind,
    pub feature_dim: usize,
    pub classes: usize,
    /// true trains both branches jointly; false is the translation-only
    /// baseline (the classification term is dropped and its branch receives
    /// no gradient).
    pub joint: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub inference_feeding: InferenceFeeding,
    pub cls_loss_kind: ClsLossKind,
    pub init_state: InitStateMode,
    /// Weight on the classification term.
    pub cls_weight: f64,
    pub tcn: TcnConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: 30,
            hidden: 64,
            cell: CellKind::Lstm,
            feature_dim: 0,
            classes: 0,
            joint: true,
            epochs: 300,
            batch_size: 16,
            learning_rate: 1e-4,
            seed: 0,
            inference_feeding: InferenceFeeding::Zeros,
            cls_loss_kind: ClsLossKind::Sigmoid,
            init_state: InitStateMode::Zero,
            cls_weight: 1.0,
            tcn: TcnConfig::default(),
        }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.frames < 1
            || self.hidden < 1
            || self.feature_dim < 1
            || self.classes < 1
            || self.batch_size < 1
        {
            return Err(Error::Validation(format!(
                "config needs frames/hidden/feature_dim/classes/batch_size >= 1, got {self:?}"
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Validation(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.cls_weight < 0.0 {
            return Err(Error::Validation("cls_weight must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Fixed first-state vectors for both recurrent layers.
#[derive(Clone, Debug, PartialEq)]
pub struct InitStates {
    pub encoder_hidden: Tensor,
    pub encoder_cell: Tensor,
    pub decoder_hidden: Tensor,
    pub decoder_cell: Tensor,
}

impl InitStates {
    fn build(config: &ModelConfig) -> Self {
        let h = config.hidden;
        match config.init_state {
            InitStateMode::Zero => InitStates {
                encoder_hidden: Tensor::zeros(vec![h]),
                encoder_cell: Tensor::zeros(vec![h]),
                decoder_hidden: Tensor::zeros(vec![h]),
                decoder_cell: Tensor::zeros(vec![h]),
            },
            InitStateMode::Uniform => {
                let mut rng = Rng::substream(config.seed, STATE_STREAM);
                let mut draw = || Tensor::uniform(vec![h], -0.1, 0.1, &mut rng);
                InitStates {
                    encoder_hidden: draw(),
                    encoder_cell: draw(),
                    decoder_hidden: draw(),
                    decoder_cell: draw(),
                }
            }
        }
    }
}

/// The whole trainable model plus everything inference needs.
#[derive(Clone, Debug)]
pub struct V2cModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub tcn: TcnParams,
    pub translator: TranslatorParams,
    pub vocab: Vocabulary,
    /// Class index -> action name, fixed at training time.
    pub actions: Vec<String>,
    pub init_states: InitStates,
}

impl V2cModel {
    /// Construct with all parameters drawn from the seed. The classification
    /// branch is always built (and always drawn first), so joint and
    /// baseline runs of the same seed start from identical translators.
    pub fn new(config: ModelConfig, vocab: Vocabulary, actions: Vec<String>) -> Result<Self> {
        config.validate()?;
        if actions.len() != config.classes {
            return Err(Error::Validation(format!(
                "{} action names for {} classes",
                actions.len(),
                config.classes
            )));
        }
        let mut rng = Rng::substream(config.seed, INIT_STREAM);
        let mut params = ParamSet::new();
        let tcn = init_tcn(
            &mut params,
            "tcn",
            config.frames,
            config.feature_dim,
            config.classes,
            config.tcn.clone(),
            &mut rng,
        );
        let translator = init_translator(
            &mut params,
            "translator",
            config.feature_dim,
            config.hidden,
            vocab.len(),
            config.cell,
            &mut rng,
        );
        let init_states = InitStates::build(&config);
        Ok(V2cModel {
            config,
            params,
            tcn,
            translator,
            vocab,
            actions,
            init_states,
        })
    }

    fn encoder_initial(&self, g: &mut Graph) -> RnnState {
        state_from_values(
            g,
            self.config.cell,
            self.init_states.encoder_hidden.clone(),
            Some(self.init_states.encoder_cell.clone()),
        )
    }

    fn decoder_initial(&self, g: &mut Graph) -> RnnState {
        state_from_values(
            g,
            self.config.cell,
            self.init_states.decoder_hidden.clone(),
            Some(self.init_states.decoder_cell.clone()),
        )
    }
}

/// One prepared clip: fixed-length features plus encoded supervision.
#[derive(Clone, Debug)]
pub struct ClipExample {
    pub clip_id: String,
    pub features: Tensor,
    pub target: WordSequence,
    pub label: ActionLabel,
    pub command: String,
    pub action: String,
}

/// Loss nodes of one forward pass over a batch.
pub struct BatchLoss {
    pub graph: Graph,
    pub total: NodeId,
    pub total_value: f64,
    pub cls_value: f64,
    pub trans_value: f64,
}

/// Mean over the batch of (cls_weight * L_cls + L_trans); in baseline mode
/// the classification term is identically zero and the branch is not run.
pub fn forward_loss(model: &V2cModel, batch: &[&ClipExample]) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut g = Graph::new();
    let mut clip_losses = Vec::with_capacity(batch.len());
    let mut cls_losses = Vec::new();
    let mut trans_losses = Vec::with_capacity(batch.len());
    for example in batch {
        let features = g.input(example.features.clone());
        let enc_init = model.encoder_initial(&mut g);
        let enc = encode(&mut g, features, &model.translator, enc_init, &model.params)?;
        let dec_init = model.decoder_initial(&mut g);
        let logits = decode_train(
            &mut g,
            &enc,
            &example.target,
            &model.vocab,
            &model.translator,
            dec_init,
            &model.params,
        )?;
        let trans = trans_loss(&mut g, &logits, &example.target)?;
        trans_losses.push(trans);

        if model.config.joint {
            let cls_logits = tcn_forward(&mut g, features, &model.tcn, &model.params)?;
            let cls = cls_loss(
                &mut g,
                cls_logits,
                &example.label,
                model.config.cls_loss_kind,
            )?;
            cls_losses.push(cls);
            let weighted = if model.config.cls_weight == 1.0 {
                cls
            } else {
                g.scale(cls, model.config.cls_weight)
            };
            clip_losses.push(g.add(weighted, trans)?);
        } else {
            clip_losses.push(trans);
        }
    }
    let total = g.mean_many(&clip_losses)?;
    let trans_mean = g.mean_many(&trans_losses)?;
    let cls_value = if cls_losses.is_empty() {
        0.0
    } else {
        let cls_mean = g.mean_many(&cls_losses)?;
        g.value(cls_mean).item()?
    };
    let total_value = g.value(total).item()?;
    let trans_value = g.value(trans_mean).item()?;
    if !total_value.is_finite() {
        return Err(Error::Numeric(format!("loss diverged: {total_value}")));
    }
    Ok(BatchLoss {
        graph: g,
        total,
        total_value,
        cls_value,
        trans_value,
    })
}

/// Per-epoch mean losses over the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub cls: f64,
    pub trans: f64,
}

/// Owns the parameters during training; supports resuming mid-run.
pub struct Trainer {
    pub model: V2cModel,
    pub optimizer: Optimizer,
    pub shuffle_rng: Rng,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: V2cModel) -> Self {
        let optimizer = Optimizer::new(
            &model.params,
            AdamConfig::with_learning_rate(model.config.learning_rate),
        );
        let shuffle_rng = Rng::substream(model.config.seed, SHUFFLE_STREAM);
        Trainer {
            model,
            optimizer,
            shuffle_rng,
            epoch: 0,
        }
    }

    /// Train until `epochs` epochs have completed (counting any resumed
    /// progress), appending one loss record per epoch.
    pub fn run(
        &mut self,
        data: &[ClipExample],
        epochs: usize,
        mut on_epoch: impl FnMut(&EpochLoss),
    ) -> Result<Vec<EpochLoss>> {
        if data.is_empty() {
            return Err(Error::Validation("training dataset is empty".into()));
        }
        for example in data {
            let shape = example.features.shape();
            if shape != [self.model.config.frames, self.model.config.feature_dim] {
                return Err(Error::Validation(format!(
                    "clip {} features {:?} do not match the configured [{} x {}]",
                    example.clip_id, shape, self.model.config.frames, self.model.config.feature_dim
                )));
            }
        }
        let mut history = Vec::new();
        let batch_size = self.model.config.batch_size;
        let mut order: Vec<usize> = (0..data.len()).collect();
        while self.epoch < epochs {
            self.shuffle_rng.shuffle(&mut order);
            let mut sums = (0.0, 0.0, 0.0);
            for chunk in order.chunks(batch_size) {
                let batch: Vec<&ClipExample> = chunk.iter().map(|&i| &data[i]).collect();
                let out = forward_loss(&self.model, &batch)?;
                out.graph.backward(out.total, &mut self.model.params)?;
                self.optimizer.step(&mut self.model.params);
                let w = batch.len() as f64;
                sums.0 += out.total_value * w;
                sums.1 += out.cls_value * w;
                sums.2 += out.trans_value * w;
            }
            self.epoch += 1;
            let n = data.len() as f64;
            let record = EpochLoss {
                epoch: self.epoch,
                total: sums.0 / n,
                cls: sums.1 / n,
                trans: sums.2 / n,
            };
            if !record.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {} loss is not finite: {}",
                    record.epoch, record.total
                )));
            }
            on_epoch(&record);
            history.push(record);
        }
        Ok(history)
    }
}

/// Inference output for one clip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inference {
    pub command: String,
    /// Action per the active mode: the classification branch when joint,
    /// the command's verb otherwise.
    pub action: String,
    pub action_from_translation: String,
    pub action_from_classification: String,
    pub truncated: bool,
}

/// Greedy decode plus action classification for one prepared feature block.
pub fn infer(model: &V2cModel, features: &Tensor) -> Result<Inference> {
    if features.shape() != [model.config.frames, model.config.feature_dim] {
        return Err(Error::Validation(format!(
            "infer features {:?} do not match the configured [{} x {}]",
            features.shape(),
            model.config.frames,
            model.config.feature_dim
        )));
    }
    let mut g = Graph::new();
    let features_node = g.input(features.clone());
    let enc_init = model.encoder_initial(&mut g);
    let enc = encode(
        &mut g,
        features_node,
        &model.translator,
        enc_init,
        &model.params,
    )?;
    let dec_init = model.decoder_initial(&mut g);
    let decoded = decode_greedy(
        &mut g,
        &enc,
        &model.vocab,
        model.config.inference_feeding,
        &model.translator,
        dec_init,
        &model.params,
    )?;
    let (command, truncated) = assemble_command(&decoded.words);

    let cls_logits = tcn_forward(&mut g, features_node, &model.tcn, &model.params)?;
    let class_index = classify(g.value(cls_logits));
    let action_from_classification = model.actions[class_index].clone();
    let action_from_translation = extract_action(&command);
    let action = if model.config.joint {
        action_from_classification.clone()
    } else {
        action_from_translation.clone()
    };
    Ok(Inference {
        command,
        action,
        action_from_translation,
        action_from_classification,
        truncated,
    })
}
