//! Action classification branch: three temporal convolutions with ReLU and
//! time-axis max pooling, two dense layers, argmax classification and the
//! classification loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::{ParamId, ParamSet, Tensor};

/// Structural hyperparameters of the branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnConfig {
    /// Output channels of the three convolutions.
    pub filters: [usize; 3],
    pub kernel_width: usize,
    pub pool_width: usize,
    pub pool_stride: usize,
    /// Width of the first dense layer.
    pub fc_hidden: usize,
}

impl Default for TcnConfig {
    fn default() -> Self {
        TcnConfig {
            filters: [128, 64, 32],
            kernel_width: 3,
            pool_width: 2,
            pool_stride: 2,
            fc_hidden: 256,
        }
    }
}

impl TcnConfig {
    /// Full-size filter counts (2048/1024/512).
    pub fn full_scale() -> Self {
        TcnConfig {
            filters: [2048, 1024, 512],
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct TcnParams {
    pub convs: Vec<ConvLayer>,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
    pub frames: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub config: TcnConfig,
}

/// Time steps surviving each pooling stage, and the flattened width entering
/// the first dense layer.
fn stage_lengths(frames: usize, cfg: &TcnConfig) -> (usize, usize, usize) {
    let after_first = frames.div_ceil(cfg.pool_stride);
    let after_second = after_first.div_ceil(cfg.pool_stride);
    (frames, after_first, after_second)
}

pub fn flat_width(frames: usize, cfg: &TcnConfig) -> usize {
    let (_, _, last) = stage_lengths(frames, cfg);
    last * cfg.filters[2]
}

pub fn init_tcn(
    params: &mut ParamSet,
    prefix: &str,
    frames: usize,
    feature_dim: usize,
    classes: usize,
    config: TcnConfig,
    rng: &mut Rng,
) -> TcnParams {
    let dims = [feature_dim, config.filters[0], config.filters[1]];
    let convs = (0..3)
        .map(|layer| ConvLayer {
            kernel: params.add_uniform(
                format!("{prefix}.conv{layer}.kernel"),
                vec![config.kernel_width, dims[layer], config.filters[layer]],
                rng,
            ),
            bias: params.add_uniform(
                format!("{prefix}.conv{layer}.bias"),
                vec![config.filters[layer]],
                rng,
            ),
        })
        .collect();
    let flat = flat_width(frames, &config);
    let hidden = DenseLayer {
        weight: params.add_uniform(
            format!("{prefix}.fc0.weight"),
            vec![config.fc_hidden, flat],
            rng,
        ),
        bias: params.add_uniform(format!("{prefix}.fc0.bias"), vec![config.fc_hidden], rng),
    };
    let output = DenseLayer {
        weight: params.add_uniform(
            format!("{prefix}.fc1.weight"),
            vec![classes, config.fc_hidden],
            rng,
        ),
        bias: params.add_uniform(format!("{prefix}.fc1.bias"), vec![classes], rng),
    };
    TcnParams {
        convs,
        hidden,
        output,
        frames,
        feature_dim,
        classes,
        config,
    }
}

/// conv -> (pool . relu . conv) x2 -> relu -> flatten -> dense+relu -> dense.
/// The final dense layer has no activation; it emits one logit per class.
pub fn tcn_forward(
    g: &mut Graph,
    features: NodeId,
    p: &TcnParams,
    params: &ParamSet,
) -> Result<NodeId> {
    let shape = g.value(features).shape().to_vec();
    if shape.len() != 2 || shape[0] != p.frames || shape[1] != p.feature_dim {
        return Err(Error::Validation(format!(
            "tcn_forward expects [{} x {}] features, got {:?}",
            p.frames, p.feature_dim, shape
        )));
    }
    let mut current = features;
    for (layer, conv) in p.convs.iter().enumerate() {
        if layer > 0 {
            let activated = g.relu(current);
            current = g.temporal_maxpool(activated, p.config.pool_width, p.config.pool_stride)?;
        }
        let kernel = g.param(conv.kernel, params);
        let bias = g.param(conv.bias, params);
        current = g.temporal_conv(current, kernel, bias)?;
    }
    let activated = g.relu(current);
    let flat = g.flatten(activated);
    let pre_hidden = g.affine(flat, p.hidden.weight, p.hidden.bias, params)?;
    let hidden = g.relu(pre_hidden);
    g.affine(hidden, p.output.weight, p.output.bias, params)
}

/// Index of the highest score; ties resolve to the lowest index.
pub fn classify(logits: &Tensor) -> usize {
    let mut best = 0;
    for (i, &v) in logits.values().iter().enumerate() {
        if v > logits.values()[best] {
            best = i;
        }
    }
    best
}

/// Groundtruth action for one clip.
#[derive(Clone, Debug)]
pub struct ActionLabel {
    pub class_index: usize,
    pub one_hot: Tensor,
}

impl ActionLabel {
    pub fn new(class_index: usize, classes: usize) -> Result<Self> {
        if class_index >= classes {
            return Err(Error::Validation(format!(
                "action class {class_index} out of range for {classes} classes"
            )));
        }
        let mut one_hot = vec![0.0; classes];
        one_hot[class_index] = 1.0;
        Ok(ActionLabel {
            class_index,
            one_hot: Tensor::from_vec(one_hot),
        })
    }
}

/// Which loss the classification branch trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClsLossKind {
    Sigmoid,
    Softmax,
}

pub fn cls_loss(
    g: &mut Graph,
    logits: NodeId,
    label: &ActionLabel,
    kind: ClsLossKind,
) -> Result<NodeId> {
    match kind {
        ClsLossKind::Sigmoid => {
            let target = g.input(label.one_hot.clone());
            g.sigmoid_cross_entropy(logits, target)
        }
        ClsLossKind::Softmax => g.softmax_cross_entropy(logits, label.class_index),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;

    fn micro_config() -> TcnConfig {
        TcnConfig {
            filters: [2, 2, 2],
            kernel_width: 3,
            pool_width: 2,
            pool_stride: 2,
            fc_hidden: 3,
        }
    }

    #[test]
    fn pooling_arithmetic_30_15_8() {
        let cfg = TcnConfig::default();
        let (a, b, c) = stage_lengths(30, &cfg);
        assert_eq!((a, b, c), (30, 15, 8));
        assert_eq!(flat_width(30, &cfg), 8 * cfg.filters[2]);
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let mut params = ParamSet::new();
        let p = init_tcn(
            &mut params,
            "tcn",
            4,
            2,
            3,
            micro_config(),
            &mut Rng::new(1),
        );
        for id in params.ids().collect::<Vec<_>>() {
            for v in params.get_mut(id).value.values_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::uniform(vec![4, 2], -1.0, 1.0, &mut Rng::new(2)));
        let logits = tcn_forward(&mut g, x, &p, &params).unwrap();
        assert_eq!(g.value(logits).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn frame_count_mismatch_is_a_validation_error() {
        let mut params = ParamSet::new();
        let p = init_tcn(
            &mut params,
            "tcn",
            4,
            2,
            3,
            micro_config(),
            &mut Rng::new(3),
        );
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![5, 2]));
        assert!(matches!(
            tcn_forward(&mut g, x, &p, &params),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn channel_symmetric_parameters_ignore_channel_permutation() {
        // Kernels constant across input channels: permuting feature channels
        // leaves every convolution sum unchanged.
        let mut params = ParamSet::new();
        let mut rng = Rng::new(4);
        let p = init_tcn(&mut params, "tcn", 4, 3, 2, micro_config(), &mut rng);
        {
            let conv0 = &p.convs[0];
            let kernel = params.get_mut(conv0.kernel);
            let shape = kernel.value.shape().to_vec(); // [w, d_in, d_out]
            let (w, d_in, d_out) = (shape[0], shape[1], shape[2]);
            let mut fresh = Rng::new(5);
            for j in 0..w {
                for o in 0..d_out {
                    let v = fresh.uniform(-0.5, 0.5);
                    for i in 0..d_in {
                        kernel.value.values_mut()[j * d_in * d_out + i * d_out + o] = v;
                    }
                }
            }
        }

        let x = Tensor::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![-1.0, 0.5, 0.25],
            vec![0.0, 1.5, -2.0],
            vec![2.0, 2.0, 0.1],
        ])
        .unwrap();
        let permuted = Tensor::from_rows(&[
            vec![3.0, 1.0, 2.0],
            vec![0.25, -1.0, 0.5],
            vec![-2.0, 0.0, 1.5],
            vec![0.1, 2.0, 2.0],
        ])
        .unwrap();

        let run = |input: Tensor| {
            let mut g = Graph::new();
            let x = g.input(input);
            let logits = tcn_forward(&mut g, x, &p, &params).unwrap();
            g.value(logits).values().to_vec()
        };
        let a = run(x);
        let b = run(permuted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Plain-f64 recomputation of the whole branch, layer by layer.
    fn oracle_forward(x: &Tensor, p: &TcnParams, params: &ParamSet) -> Vec<f64> {
        let cfg = &p.config;
        let conv = |x: &Vec<Vec<f64>>, kernel: &Tensor, bias: &Tensor| -> Vec<Vec<f64>> {
            let steps = x.len();
            let d_in = x[0].len();
            let shape = kernel.shape();
            let (w, d_out) = (shape[0], shape[2]);
            let half = w / 2;
            (0..steps)
                .map(|t| {
                    (0..d_out)
                        .map(|o| {
                            let mut acc = bias.values()[o];
                            for j in 0..w {
                                let src = t as isize + j as isize - half as isize;
                                if src < 0 || src >= steps as isize {
                                    continue;
                                }
                                for (i, xv) in x[src as usize].iter().enumerate() {
                                    acc += xv * kernel.values()[j * d_in * d_out + i * d_out + o];
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        };
        let relu = |x: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| row.iter().map(|v| v.max(0.0)).collect())
                .collect()
        };
        let pool = |x: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            let steps = x.len();
            let d = x[0].len();
            (0..steps.div_ceil(cfg.pool_stride))
                .map(|tp| {
                    let start = tp * cfg.pool_stride;
                    let end = (start + cfg.pool_width).min(steps);
                    (0..d)
                        .map(|c| {
                            (start..end)
                                .map(|t| x[t][c])
                                .fold(f64::NEG_INFINITY, f64::max)
                        })
                        .collect()
                })
                .collect()
        };
        let dense = |x: &[f64], weight: &Tensor, bias: &Tensor| -> Vec<f64> {
            (0..weight.shape()[0])
                .map(|o| {
                    bias.values()[o] + x.iter().zip(weight.row(o)).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        };

        let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|t| x.row(t).to_vec()).collect();
        for (layer, c) in p.convs.iter().enumerate() {
            if layer > 0 {
                rows = pool(&relu(&rows));
            }
            rows = conv(&rows, params.value(c.kernel), params.value(c.bias));
        }
        let flat: Vec<f64> = relu(&rows).into_iter().flatten().collect();
        let hidden: Vec<f64> = dense(
            &flat,
            params.value(p.hidden.weight),
            params.value(p.hidden.bias),
        )
        .iter()
        .map(|v| v.max(0.0))
        .collect();
        dense(
            &hidden,
            params.value(p.output.weight),
            params.value(p.output.bias),
        )
    }

    #[test]
    fn micro_tcn_matches_layer_by_layer_oracle() {
        let mut params = ParamSet::new();
        let mut rng = Rng::new(6);
        let p = init_tcn(&mut params, "tcn", 4, 2, 2, micro_config(), &mut rng);
        let x = Tensor::uniform(vec![4, 2], -1.0, 1.0, &mut rng);

        let mut g = Graph::new();
        let xn = g.input(x.clone());
        let logits = tcn_forward(&mut g, xn, &p, &params).unwrap();
        let expected = oracle_forward(&x, &p, &params);
        for (a, b) in g.value(logits).values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn classify_argmax_with_tie_rule() {
        assert_eq!(classify(&Tensor::from_vec(vec![0.1, 0.9])), 1);
        assert_eq!(classify(&Tensor::from_vec(vec![0.4, 0.4, 0.4])), 0);
        assert_eq!(classify(&Tensor::from_vec(vec![3.0, -1.0, 2.0])), 0);
    }

    #[test]
    fn classify_invariant_under_monotone_transform() {
        let mut rng = Rng::new(7);
        for _ in 0..30 {
            let logits: Vec<f64> = (0..6).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let raw = classify(&Tensor::from_vec(logits.clone()));
            let squashed: Vec<f64> = logits
                .iter()
                .map(|v| (0.5 * v).tanh() * 3.0 + 1.0)
                .collect();
            assert_eq!(raw, classify(&Tensor::from_vec(squashed)));
        }
    }

    #[test]
    fn cls_loss_values_and_monotonicity() {
        let label = ActionLabel::new(0, 2).unwrap();
        let loss_at = |l0: f64| {
            let mut g = Graph::new();
            let logits = g.input(Tensor::from_vec(vec![l0, 0.0]));
            let loss = cls_loss(&mut g, logits, &label, ClsLossKind::Sigmoid).unwrap();
            g.value(loss).item().unwrap()
        };
        assert!((loss_at(0.0) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

        let mut g = Graph::new();
        let logits = g.input(Tensor::from_vec(vec![40.0, -40.0]));
        let loss = cls_loss(&mut g, logits, &label, ClsLossKind::Sigmoid).unwrap();
        assert!(g.value(loss).item().unwrap() < 1e-8);

        let mut prev = f64::INFINITY;
        for step in 0..20 {
            let v = loss_at(-2.0 + 0.4 * step as f64);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn softmax_loss_kind_is_selectable() {
        let label = ActionLabel::new(1, 4).unwrap();
        let mut g = Graph::new();
        let logits = g.input(Tensor::zeros(vec![4]));
        let loss = cls_loss(&mut g, logits, &label, ClsLossKind::Softmax).unwrap();
        assert!((g.value(loss).item().unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn micro_tcn_gradient_check() {
        let mut params = ParamSet::new();
        let mut rng = Rng::new(8);
        let p = init_tcn(&mut params, "tcn", 4, 2, 2, micro_config(), &mut rng);
        let x = Tensor::uniform(vec![4, 2], -1.0, 1.0, &mut rng);
        let label = ActionLabel::new(1, 2).unwrap();
        let ids: Vec<_> = params.ids().collect();
        let err = finite_diff_check(
            &mut params,
            &ids,
            &mut |ps: &ParamSet| {
                let mut g = Graph::new();
                let xn = g.input(x.clone());
                let logits = tcn_forward(&mut g, xn, &p, ps)?;
                let loss = cls_loss(&mut g, logits, &label, ClsLossKind::Sigmoid)?;
                Ok((g, loss))
            },
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }
}
