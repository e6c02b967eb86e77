//! Translation branch: a two-layer encoder-decoder over the fixed-length
//! feature sequence. The encoder turns n frames into n hidden states; the
//! decoder runs in lockstep, consuming at each step the concatenation of a
//! word one-hot and the encoder hidden state for that step, and a linear
//! projection maps each decoder state to vocabulary logits.

use serde::{Deserialize, Serialize};

use crate::data::{one_hot, Vocabulary, WordSequence};
use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::{ParamId, ParamSet, Tensor};
use crate::recurrent::{init_cell, unroll, CellKind, CellParams, RnnState};

#[derive(Clone, Debug)]
pub struct TranslatorParams {
    pub encoder: CellParams,
    pub decoder: CellParams,
    /// `[|D| x h]` word prediction layer.
    pub proj_weight: ParamId,
    /// `[|D|]`.
    pub proj_bias: ParamId,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
}

/// How the decoder's word-input slot is filled at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceFeeding {
    /// Zero vector at every step: inference conditions only on the encoder
    /// hidden states.
    Zeros,
    /// One-hot of the previously emitted word.
    Autoregressive,
}

pub fn init_translator(
    params: &mut ParamSet,
    prefix: &str,
    feature_dim: usize,
    hidden_dim: usize,
    vocab_size: usize,
    kind: CellKind,
    rng: &mut Rng,
) -> TranslatorParams {
    let encoder = init_cell(
        kind,
        params,
        &format!("{prefix}.encoder"),
        feature_dim,
        hidden_dim,
        rng,
    );
    let decoder = init_cell(
        kind,
        params,
        &format!("{prefix}.decoder"),
        vocab_size + hidden_dim,
        hidden_dim,
        rng,
    );
    let proj_weight = params.add_uniform(
        format!("{prefix}.proj.weight"),
        vec![vocab_size, hidden_dim],
        rng,
    );
    let proj_bias = params.add_uniform(format!("{prefix}.proj.bias"), vec![vocab_size], rng);
    TranslatorParams {
        encoder,
        decoder,
        proj_weight,
        proj_bias,
        feature_dim,
        hidden_dim,
        vocab_size,
    }
}

/// Encoder pass: one hidden state per frame, no averaging.
pub fn encode(
    g: &mut Graph,
    features: NodeId,
    p: &TranslatorParams,
    initial: RnnState,
    params: &ParamSet,
) -> Result<Vec<NodeId>> {
    let shape = g.value(features).shape().to_vec();
    if shape.len() != 2 || shape[1] != p.feature_dim {
        return Err(Error::Validation(format!(
            "encode expects [n x {}] features, got {:?}",
            p.feature_dim, shape
        )));
    }
    let steps: Vec<NodeId> = (0..shape[0])
        .map(|t| g.row(features, t))
        .collect::<Result<_>>()?;
    unroll(g, &steps, &p.encoder, initial, params)
}

fn project(
    g: &mut Graph,
    hidden: NodeId,
    p: &TranslatorParams,
    params: &ParamSet,
) -> Result<NodeId> {
    g.affine(hidden, p.proj_weight, p.proj_bias, params)
}

/// Teacher-forced decoder pass: step t consumes the groundtruth word t-1
/// (EMPTY at the first step) concatenated with the encoder state for step t,
/// and emits logits over the vocabulary.
pub fn decode_train(
    g: &mut Graph,
    encoder_states: &[NodeId],
    target: &WordSequence,
    vocab: &Vocabulary,
    p: &TranslatorParams,
    initial: RnnState,
    params: &ParamSet,
) -> Result<Vec<NodeId>> {
    if encoder_states.len() != target.indices.len() {
        return Err(Error::Validation(format!(
            "decode_train got {} encoder states but {} target slots",
            encoder_states.len(),
            target.indices.len()
        )));
    }
    let mut state = initial;
    let mut logits = Vec::with_capacity(encoder_states.len());
    for (t, &enc) in encoder_states.iter().enumerate() {
        let prev_word = if t == 0 {
            vocab.empty_index()
        } else {
            target.indices[t - 1]
        };
        let word = g.input(one_hot(prev_word, p.vocab_size)?);
        let step_input = g.concat(word, enc);
        state = crate::recurrent::cell_step(g, step_input, &state, &p.decoder, params)?;
        logits.push(project(g, state.hidden, p, params)?);
    }
    Ok(logits)
}

/// Mean word loss over the real (unmasked) steps; EMPTY padding contributes
/// nothing.
pub fn trans_loss(g: &mut Graph, logits: &[NodeId], target: &WordSequence) -> Result<NodeId> {
    if logits.len() != target.indices.len() {
        return Err(Error::Validation(format!(
            "trans_loss got {} logit steps but {} target slots",
            logits.len(),
            target.indices.len()
        )));
    }
    let mut terms = Vec::new();
    for ((&step_logits, &index), &real) in logits.iter().zip(&target.indices).zip(&target.mask) {
        if real {
            terms.push(g.softmax_cross_entropy(step_logits, index)?);
        }
    }
    if terms.is_empty() {
        return Err(Error::Validation(
            "trans_loss target has no real words".into(),
        ));
    }
    g.mean_many(&terms)
}

/// Greedy decoding result. `words` includes the EOC token when one was
/// emitted; `truncated` marks a decode that ran out of steps without it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedCommand {
    pub words: Vec<String>,
    pub indices: Vec<usize>,
    pub truncated: bool,
}

/// Run the decoder greedily for up to `encoder_states.len()` steps, emitting
/// the argmax word each step and stopping at the first EOC.
pub fn decode_greedy(
    g: &mut Graph,
    encoder_states: &[NodeId],
    vocab: &Vocabulary,
    feeding: InferenceFeeding,
    p: &TranslatorParams,
    initial: RnnState,
    params: &ParamSet,
) -> Result<DecodedCommand> {
    let mut state = initial;
    let mut words = Vec::new();
    let mut indices = Vec::new();
    let mut prev_emitted: Option<usize> = None;
    for &enc in encoder_states {
        let word_slot = match (feeding, prev_emitted) {
            (InferenceFeeding::Autoregressive, Some(w)) => g.input(one_hot(w, p.vocab_size)?),
            _ => g.input(Tensor::zeros(vec![p.vocab_size])),
        };
        let step_input = g.concat(word_slot, enc);
        state = crate::recurrent::cell_step(g, step_input, &state, &p.decoder, params)?;
        let logits = project(g, state.hidden, p, params)?;
        let emitted = crate::tcn::classify(g.value(logits));
        words.push(vocab.word(emitted).to_string());
        indices.push(emitted);
        prev_emitted = Some(emitted);
        if emitted == vocab.eoc_index() {
            return Ok(DecodedCommand {
                words,
                indices,
                truncated: false,
            });
        }
    }
    Ok(DecodedCommand {
        words,
        indices,
        truncated: true,
    })
}

/// Join the emitted words from the first through the last word preceding
/// EOC. Returns the command and whether the sequence lacked an EOC.
pub fn assemble_command(words: &[String]) -> (String, bool) {
    let eoc_pos = words.iter().position(|w| w == crate::data::EOC);
    let span = match eoc_pos {
        Some(pos) => &words[..pos],
        None => words,
    };
    (span.join(" "), eoc_pos.is_none())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_command, EMPTY, EOC};
    use crate::numerics::finite_diff_check;
    use crate::recurrent::zero_state;

    fn test_vocab() -> Vocabulary {
        Vocabulary::build(["righthand cut apple", "lefthand pour milk"]).unwrap()
    }

    fn zero_params(params: &mut ParamSet) {
        for id in params.ids().collect::<Vec<_>>() {
            for v in params.get_mut(id).value.values_mut() {
                *v = 0.0;
            }
        }
    }

    fn micro_translator(
        vocab: &Vocabulary,
        kind: CellKind,
        seed: u64,
    ) -> (ParamSet, TranslatorParams) {
        let mut params = ParamSet::new();
        let p = init_translator(
            &mut params,
            "tr",
            2,
            3,
            vocab.len(),
            kind,
            &mut Rng::new(seed),
        );
        (params, p)
    }

    #[test]
    fn encode_zero_parameters_gives_zero_states() {
        let vocab = test_vocab();
        let (mut params, p) = micro_translator(&vocab, CellKind::Lstm, 1);
        zero_params(&mut params);
        let mut g = Graph::new();
        let x = g.input(Tensor::uniform(vec![4, 2], -1.0, 1.0, &mut Rng::new(2)));
        let init = zero_state(&mut g, CellKind::Lstm, 3);
        let states = encode(&mut g, x, &p, init, &params).unwrap();
        assert_eq!(states.len(), 4);
        for s in states {
            assert_eq!(g.value(s).values(), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn encode_single_frame_matches_direct_unroll() {
        let vocab = test_vocab();
        let (params, p) = micro_translator(&vocab, CellKind::Gru, 3);
        let frame = Tensor::uniform(vec![1, 2], -1.0, 1.0, &mut Rng::new(4));

        let mut g = Graph::new();
        let x = g.input(frame.clone());
        let init = zero_state(&mut g, CellKind::Gru, 3);
        let states = encode(&mut g, x, &p, init, &params).unwrap();
        assert_eq!(states.len(), 1);

        let mut g2 = Graph::new();
        let row = g2.input(Tensor::from_vec(frame.row(0).to_vec()));
        let init2 = zero_state(&mut g2, CellKind::Gru, 3);
        let direct = unroll(&mut g2, &[row], &p.encoder, init2, &params).unwrap();
        assert_eq!(g.value(states[0]).values(), g2.value(direct[0]).values());
    }

    #[test]
    fn decode_train_zero_parameters_emit_projection_bias() {
        let vocab = test_vocab();
        let (mut params, p) = micro_translator(&vocab, CellKind::Lstm, 5);
        zero_params(&mut params);
        let bias = vec![0.3, -0.7, 0.1, 0.0, 0.9, -0.2, 0.5, -0.4];
        assert_eq!(vocab.len(), 8);
        params
            .get_mut(p.proj_bias)
            .value
            .values_mut()
            .copy_from_slice(&bias);

        let target = encode_command("righthand cut apple", &vocab, 5).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![5, 2]));
        let enc_init = zero_state(&mut g, CellKind::Lstm, 3);
        let enc = encode(&mut g, x, &p, enc_init, &params).unwrap();
        let dec_init = zero_state(&mut g, CellKind::Lstm, 3);
        let logits = decode_train(&mut g, &enc, &target, &vocab, &p, dec_init, &params).unwrap();
        for l in logits {
            assert_eq!(g.value(l).values(), bias.as_slice());
        }
    }

    #[test]
    fn decode_train_length_mismatch_is_rejected() {
        let vocab = test_vocab();
        let (params, p) = micro_translator(&vocab, CellKind::Lstm, 6);
        let target = encode_command("righthand cut apple", &vocab, 5).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![4, 2]));
        let init = zero_state(&mut g, CellKind::Lstm, 3);
        let enc = encode(&mut g, x, &p, init, &params).unwrap();
        let init = zero_state(&mut g, CellKind::Lstm, 3);
        assert!(matches!(
            decode_train(&mut g, &enc, &target, &vocab, &p, init, &params),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn two_step_decoder_matches_scalar_hand_evaluation() {
        // Plain-f64 recomputation of two teacher-forced decoder steps for a
        // one-unit LSTM over a three-word vocabulary.
        let vocab = Vocabulary::build(["go"]).unwrap();
        assert_eq!(vocab.len(), 3);
        let mut params = ParamSet::new();
        let p = init_translator(&mut params, "tr", 1, 1, 3, CellKind::Lstm, &mut Rng::new(40));
        let decoder = match &p.decoder {
            crate::recurrent::CellParams::Lstm(d) => d.clone(),
            _ => unreachable!(),
        };
        let read = |id: crate::numerics::tensor::ParamId| params.value(id).values().to_vec();
        let gate_weights = |gate: &crate::recurrent::GateParams| {
            (read(gate.input_weight), read(gate.hidden_weight)[0], read(gate.bias)[0])
        };
        let input_gate = gate_weights(&decoder.input_gate);
        let forget_gate = gate_weights(&decoder.forget_gate);
        let output_gate = gate_weights(&decoder.output_gate);
        let candidate = gate_weights(&decoder.candidate);
        let proj_w = read(p.proj_weight);
        let proj_b = read(p.proj_bias);

        // the encoder hidden states act as given scalars
        let target = encode_command("go", &vocab, 2).unwrap();
        let enc_values = [0.37, -0.52];
        let mut g = Graph::new();
        let enc: Vec<NodeId> = enc_values
            .iter()
            .map(|&v| g.input(Tensor::from_vec(vec![v])))
            .collect();
        let init = zero_state(&mut g, CellKind::Lstm, 1);
        let logits = decode_train(&mut g, &enc, &target, &vocab, &p, init, &params).unwrap();

        // hand evaluation: step input is concat(one_hot(prev word), enc_t)
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let step = |word: usize, enc_t: f64, h: f64, c: f64| -> (f64, f64) {
            let mut input = [0.0; 4];
            input[word] = 1.0;
            input[3] = enc_t;
            let pre = |(wx, wh, b): &(Vec<f64>, f64, f64)| {
                input.iter().zip(wx).map(|(x, w)| x * w).sum::<f64>() + wh * h + b
            };
            let i = sig(pre(&input_gate));
            let f = sig(pre(&forget_gate));
            let o = sig(pre(&output_gate));
            let cand = pre(&candidate).tanh();
            let c_new = f * c + i * cand;
            (o * c_new.tanh(), c_new)
        };
        let (mut h, mut c) = (0.0, 0.0);
        for (t, &l) in logits.iter().enumerate() {
            let prev_word = if t == 0 {
                vocab.empty_index()
            } else {
                target.indices[t - 1]
            };
            let (h_new, c_new) = step(prev_word, enc_values[t], h, c);
            h = h_new;
            c = c_new;
            for (k, got) in g.value(l).values().iter().enumerate() {
                let expect = proj_w[k] * h + proj_b[k];
                assert!((got - expect).abs() < 1e-14, "step {t} word {k}");
            }
        }
    }

    #[test]
    fn teacher_forcing_is_causal() {
        // Changing the target word at step t may only alter logits at
        // steps strictly after t.
        let vocab = test_vocab();
        let (params, p) = micro_translator(&vocab, CellKind::Gru, 7);
        let features = Tensor::uniform(vec![5, 2], -1.0, 1.0, &mut Rng::new(8));
        let base = encode_command("righthand cut apple", &vocab, 5).unwrap();
        let mut changed = base.clone();
        changed.indices[1] = vocab.lookup("pour").unwrap();

        let run = |target: &WordSequence| -> Vec<Vec<f64>> {
            let mut g = Graph::new();
            let x = g.input(features.clone());
            let init = zero_state(&mut g, CellKind::Gru, 3);
            let enc = encode(&mut g, x, &p, init, &params).unwrap();
            let init = zero_state(&mut g, CellKind::Gru, 3);
            let logits = decode_train(&mut g, &enc, target, &vocab, &p, init, &params).unwrap();
            logits
                .iter()
                .map(|&l| g.value(l).values().to_vec())
                .collect()
        };
        let a = run(&base);
        let b = run(&changed);
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        assert_ne!(a[2], b[2]);
    }

    #[test]
    fn trans_loss_uniform_logits_is_log_vocab() {
        let corpus = ["a b c d e f"];
        let vocab = Vocabulary::build(corpus).unwrap();
        assert_eq!(vocab.len(), 8);
        for n in [8usize, 12, 20] {
            let target = encode_command("a b c", &vocab, n).unwrap();
            let mut g = Graph::new();
            let logits: Vec<NodeId> = (0..n).map(|_| g.input(Tensor::zeros(vec![8]))).collect();
            let loss = trans_loss(&mut g, &logits, &target).unwrap();
            assert!(
                (g.value(loss).item().unwrap() - 8.0f64.ln()).abs() < 1e-12,
                "n = {n}"
            );
        }
    }

    #[test]
    fn trans_loss_saturated_correct_is_tiny() {
        let vocab = test_vocab();
        let target = encode_command("righthand cut apple", &vocab, 6).unwrap();
        let mut g = Graph::new();
        let logits: Vec<NodeId> = (0..6)
            .map(|t| {
                let mut v = vec![-40.0; vocab.len()];
                v[target.indices[t]] = 40.0;
                g.input(Tensor::from_vec(v))
            })
            .collect();
        let loss = trans_loss(&mut g, &logits, &target).unwrap();
        assert!(g.value(loss).item().unwrap() < 1e-8);
    }

    #[test]
    fn trans_loss_ignores_padding_steps() {
        let vocab = test_vocab();
        let mut rng = Rng::new(9);
        let short = encode_command("righthand cut apple", &vocab, 5).unwrap();
        let long = encode_command("righthand cut apple", &vocab, 9).unwrap();
        let step_logits: Vec<Tensor> = (0..9)
            .map(|_| Tensor::uniform(vec![vocab.len()], -2.0, 2.0, &mut rng))
            .collect();

        let eval = |target: &WordSequence, n: usize| -> f64 {
            let mut g = Graph::new();
            let logits: Vec<NodeId> = (0..n).map(|t| g.input(step_logits[t].clone())).collect();
            let loss = trans_loss(&mut g, &logits, target).unwrap();
            g.value(loss).item().unwrap()
        };
        assert_eq!(eval(&short, 5), eval(&long, 9));
    }

    #[test]
    fn trans_loss_rejects_all_masked_target() {
        let vocab = test_vocab();
        let target = WordSequence {
            indices: vec![vocab.empty_index(); 3],
            mask: vec![false; 3],
        };
        let mut g = Graph::new();
        let logits: Vec<NodeId> = (0..3).map(|_| g.input(Tensor::zeros(vec![7]))).collect();
        assert!(matches!(
            trans_loss(&mut g, &logits, &target),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn per_step_probability_product_matches_loss() {
        // The chain of per-step softmaxes factorizes the sequence
        // probability: prod softmax(logits_t)[y_t] = exp(-m * loss).
        let vocab = test_vocab();
        let (params, p) = micro_translator(&vocab, CellKind::Lstm, 10);
        let features = Tensor::uniform(vec![6, 2], -1.0, 1.0, &mut Rng::new(11));
        let target = encode_command("lefthand pour milk", &vocab, 6).unwrap();

        let mut g = Graph::new();
        let x = g.input(features);
        let init = zero_state(&mut g, CellKind::Lstm, 3);
        let enc = encode(&mut g, x, &p, init, &params).unwrap();
        let init = zero_state(&mut g, CellKind::Lstm, 3);
        let logits = decode_train(&mut g, &enc, &target, &vocab, &p, init, &params).unwrap();
        let loss = trans_loss(&mut g, &logits, &target).unwrap();
        let loss_v = g.value(loss).item().unwrap();

        let m = target.real_words() as f64;
        let mut product = 1.0;
        for (t, &l) in logits.iter().enumerate() {
            if target.mask[t] {
                let probs = crate::numerics::softmax_values(g.value(l));
                product *= probs.values()[target.indices[t]];
            }
        }
        assert!((product - (-m * loss_v).exp()).abs() < 1e-9);
    }

    #[test]
    fn decode_greedy_stops_at_immediate_eoc() {
        let vocab = test_vocab();
        let (mut params, p) = micro_translator(&vocab, CellKind::Lstm, 12);
        zero_params(&mut params);
        params.get_mut(p.proj_bias).value.values_mut()[vocab.eoc_index()] = 5.0;

        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![4, 2]));
        let init = zero_state(&mut g, CellKind::Lstm, 3);
        let enc = encode(&mut g, x, &p, init, &params).unwrap();
        let init = zero_state(&mut g, CellKind::Lstm, 3);
        let out = decode_greedy(
            &mut g,
            &enc,
            &vocab,
            InferenceFeeding::Zeros,
            &p,
            init,
            &params,
        )
        .unwrap();
        assert_eq!(out.words, vec![EOC.to_string()]);
        assert!(!out.truncated);
        let (command, truncated) = assemble_command(&out.words);
        assert_eq!(command, "");
        assert!(!truncated);
    }

    #[test]
    fn decode_greedy_is_deterministic_and_bounded() {
        let vocab = test_vocab();
        let (params, p) = micro_translator(&vocab, CellKind::Gru, 13);
        let features = Tensor::uniform(vec![5, 2], -1.0, 1.0, &mut Rng::new(14));
        let run = |feeding: InferenceFeeding| {
            let mut g = Graph::new();
            let x = g.input(features.clone());
            let init = zero_state(&mut g, CellKind::Gru, 3);
            let enc = encode(&mut g, x, &p, init, &params).unwrap();
            let init = zero_state(&mut g, CellKind::Gru, 3);
            decode_greedy(&mut g, &enc, &vocab, feeding, &p, init, &params).unwrap()
        };
        for feeding in [InferenceFeeding::Zeros, InferenceFeeding::Autoregressive] {
            let a = run(feeding);
            let b = run(feeding);
            assert_eq!(a, b);
            assert!(a.indices.len() <= 5);
            assert!(a.indices.iter().all(|&i| i < vocab.len()));
        }
    }

    #[test]
    fn assemble_command_examples() {
        let words = |list: &[&str]| list.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(
            assemble_command(&words(&["righthand", "cut", "apple", EOC])),
            ("righthand cut apple".to_string(), false)
        );
        assert_eq!(assemble_command(&words(&[EOC])), (String::new(), false));
        assert_eq!(
            assemble_command(&words(&["lefthand", "pour", "milk"])),
            ("lefthand pour milk".to_string(), true)
        );
        assert_eq!(assemble_command(&[]), (String::new(), true));
        // EMPTY tokens are ordinary words for assembly purposes
        assert_eq!(
            assemble_command(&words(&["a", EMPTY, "b", EOC])),
            (format!("a {EMPTY} b"), false)
        );
    }

    #[test]
    fn full_translator_gradient_check() {
        let vocab = test_vocab();
        let (mut params, p) = micro_translator(&vocab, CellKind::Lstm, 15);
        // widen the init so no gradient coordinate sits in the
        // finite-difference noise floor
        for id in params.ids().collect::<Vec<_>>() {
            for v in params.get_mut(id).value.values_mut() {
                *v *= 5.0;
            }
        }
        let features = Tensor::uniform(vec![4, 2], -1.0, 1.0, &mut Rng::new(16));
        let target = encode_command("righthand cut apple", &vocab, 4).unwrap();
        let ids: Vec<ParamId> = params.ids().collect();
        let err = finite_diff_check(
            &mut params,
            &ids,
            &mut |ps: &ParamSet| {
                let mut g = Graph::new();
                let x = g.input(features.clone());
                let init = zero_state(&mut g, CellKind::Lstm, 3);
                let enc = encode(&mut g, x, &p, init, ps)?;
                let init = zero_state(&mut g, CellKind::Lstm, 3);
                let logits = decode_train(&mut g, &enc, &target, &vocab, &p, init, ps)?;
                let loss = trans_loss(&mut g, &logits, &target)?;
                Ok((g, loss))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
