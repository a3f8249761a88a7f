//! Normalization folding: rewrites the first convolution so the per-channel
//! affine image normalization can be deleted from the inference path.
//!
//! With normalization `I_n = (I_r - m) / s` feeding a dense convolution
//! `f = W * I_n + b`, the merged form `f = W' * I_r + b'` uses
//! `W'[o][d] = W[o][d] / s[d]` and
//! `b'[o] = b[o] - Σ_d (m[d]/s[d]) · Σ_j W[o][d][j]`.
//! A bilinear resize between the input and the first convolution is
//! transparent to the rewrite because resizing commutes with per-channel
//! affine maps (asserted by a property test, not assumed).

use thiserror::Error;

use crate::tensor::Tensor;

use super::{GraphModel, OpKind};

#[derive(Debug, Error, PartialEq)]
pub enum FoldError {
    #[error("model carries no normalization record; folding is a no-op")]
    NoNormalization,
    #[error("first weight-bearing consumer `{node}` of the image input is not a dense convolution")]
    FirstConsumerNotConv { node: String },
    #[error("image input feeds {count} consumers; folding requires a single chain")]
    MultipleConsumers { count: usize },
    #[error("nothing consumes the image input")]
    DeadInput,
    #[error("first convolution consumes {c_in} channels; normalization is per-RGB (3)")]
    ChannelMismatch { c_in: usize },
    #[error(
        "first convolution `{node}` uses zero padding; folding would be inexact at the borders \
         (a padded tap stands for the mean pixel before folding but a black pixel after)"
    )]
    PaddedFirstConv { node: String },
}

/// Returns a copy of `model` with the normalization record removed and the
/// first convolution's weights and bias rewritten to absorb it. Every other
/// tensor, the node list and the parameter count are untouched.
pub fn fold_normalization(model: &GraphModel) -> Result<GraphModel, FoldError> {
    let norm = model.metadata.normalization.ok_or(FoldError::NoNormalization)?;

    // Walk input -> (resize)* -> first weight-bearing node.
    let mut cursor = model.input.clone();
    let conv_id = loop {
        let consumers = model.consumers(&cursor);
        match consumers.len() {
            0 => return Err(FoldError::DeadInput),
            1 => {}
            count => return Err(FoldError::MultipleConsumers { count }),
        }
        let node = consumers[0];
        match &node.op {
            OpKind::Resize { .. } => cursor = node.id.clone(),
            OpKind::Conv { spec, .. } if spec.groups == 1 => {
                if spec.padding != crate::tensor::Padding::NONE {
                    return Err(FoldError::PaddedFirstConv { node: node.id.clone() });
                }
                break node.id.clone();
            }
            _ => return Err(FoldError::FirstConsumerNotConv { node: node.id.clone() }),
        }
    };

    let mut folded = model.clone();
    let node = folded.node(&conv_id).expect("cursor node exists").clone();
    let (spec, weight_name, bias_name) = match &node.op {
        OpKind::Conv { spec, weight, bias } => (*spec, weight.clone(), bias.clone()),
        _ => unreachable!(),
    };

    let w = folded.weights.get(&weight_name).expect("validated weight").clone();
    let [c_out, c_in, k_h, k_w] = w.shape();
    if c_in != 3 {
        return Err(FoldError::ChannelMismatch { c_in });
    }

    // W' = W / s, per input channel d; accumulate the bias correction from
    // the *original* weights in f64 before rounding back.
    let mut new_w = w.clone();
    let mut correction = vec![0.0f64; c_out];
    for o in 0..c_out {
        for d in 0..c_in {
            let mut kernel_sum = 0.0f64;
            for ky in 0..k_h {
                for kx in 0..k_w {
                    kernel_sum += w.at(o, d, ky, kx) as f64;
                    let scaled = w.at(o, d, ky, kx) / norm.std[d];
                    new_w.set(o, d, ky, kx, scaled);
                }
            }
            correction[o] += norm.mean[d] as f64 / norm.std[d] as f64 * kernel_sum;
        }
    }

    let old_bias: Vec<f32> = match &bias_name {
        Some(name) => folded.weights.get(name).expect("validated bias").data().to_vec(),
        None => vec![0.0; c_out],
    };
    let new_bias: Vec<f32> =
        old_bias.iter().zip(&correction).map(|(&b, &c)| (b as f64 - c) as f32).collect();

    folded.weights.insert(weight_name, new_w);
    let bias_name = bias_name.unwrap_or_else(|| {
        // Bias-free first conv gains one to carry the correction term.
        let name = format!("{conv_id}.folded_bias");
        for n in folded.nodes.iter_mut() {
            if n.id == conv_id {
                if let OpKind::Conv { spec: s, bias, .. } = &mut n.op {
                    *bias = Some(name.clone());
                    s.has_bias = true;
                }
            }
        }
        name
    });
    folded
        .weights
        .insert(bias_name, Tensor::new([c_out, 1, 1, 1], new_bias).expect("bias shape"));
    let _ = spec;

    folded.metadata.normalization = None;
    Ok(folded)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::graph::{ModelMetadata, Node, NormalizationParams};
    use crate::tensor::ConvSpec;

    fn one_conv_model(
        w: Vec<f32>,
        bias: Option<Vec<f32>>,
        norm: Option<NormalizationParams>,
    ) -> GraphModel {
        let c_out = w.len() / 3;
        let mut weights = BTreeMap::new();
        weights.insert("conv.weight".to_string(), Tensor::new([c_out, 3, 1, 1], w).unwrap());
        let bias_name = bias.map(|b| {
            weights.insert(
                "conv.bias".to_string(),
                Tensor::new([c_out, 1, 1, 1], b).unwrap(),
            );
            "conv.bias".to_string()
        });
        GraphModel {
            nodes: vec![
                Node { id: "image".into(), op: OpKind::Input, inputs: vec![] },
                Node {
                    id: "conv".into(),
                    op: OpKind::Conv {
                        spec: ConvSpec { has_bias: bias_name.is_some(), ..ConvSpec::dense(1, 1, 0) },
                        weight: "conv.weight".into(),
                        bias: bias_name,
                    },
                    inputs: vec!["image".into()],
                },
            ],
            weights,
            input: "image".into(),
            output: "conv".into(),
            metadata: ModelMetadata { input_resolution: (2, 2), normalization: norm },
        }
    }

    #[test]
    fn identity_normalization_keeps_weights() {
        let norm = NormalizationParams::new([0.0; 3], [1.0; 3]).unwrap();
        let model = one_conv_model(vec![1.0, 2.0, 3.0], Some(vec![0.5]), Some(norm));
        let folded = fold_normalization(&model).unwrap();
        assert_eq!(folded.weights["conv.weight"].data(), &[1.0, 2.0, 3.0]);
        assert_eq!(folded.weights["conv.bias"].data(), &[0.5]);
        assert!(folded.metadata.normalization.is_none());
    }

    #[test]
    fn hand_computed_single_channel_fold() {
        // W = 2, b = 1, m = 0.5, s = 0.25 -> W' = 8, b' = 1 - (0.5/0.25)*2 = -3.
        let norm = NormalizationParams::new([0.5, 0.0, 0.0], [0.25, 1.0, 1.0]).unwrap();
        let model = one_conv_model(vec![2.0, 0.0, 0.0], Some(vec![1.0]), Some(norm));
        let folded = fold_normalization(&model).unwrap();
        assert_eq!(folded.weights["conv.weight"].data()[0], 8.0);
        assert_eq!(folded.weights["conv.bias"].data()[0], -3.0);

        // Cross-check by executing both forms on an arbitrary image.
        let img = Tensor::from_fn([1, 3, 2, 2], |_, c, y, x| (c * 4 + y * 2 + x) as f32 * 13.0);
        let a = model.run(&img, true).unwrap();
        let b = folded.run(&img, false).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-4);
    }

    #[test]
    fn refold_is_a_diagnosed_no_op() {
        let model = one_conv_model(
            vec![1.0; 3],
            Some(vec![0.0]),
            Some(NormalizationParams::imagenet()),
        );
        let folded = fold_normalization(&model).unwrap();
        assert_eq!(fold_normalization(&folded).unwrap_err(), FoldError::NoNormalization);
    }

    #[test]
    fn refuses_non_conv_first_consumer() {
        let mut model = one_conv_model(
            vec![1.0; 3],
            Some(vec![0.0]),
            Some(NormalizationParams::imagenet()),
        );
        // Squeeze an activation between input and conv.
        model.nodes.insert(
            1,
            Node {
                id: "act".into(),
                op: OpKind::Act { kind: crate::tensor::Activation::Relu },
                inputs: vec!["image".into()],
            },
        );
        if let OpKind::Conv { .. } = model.nodes[2].op {
            model.nodes[2].inputs = vec!["act".into()];
        }
        assert_eq!(
            fold_normalization(&model).unwrap_err(),
            FoldError::FirstConsumerNotConv { node: "act".into() }
        );
    }

    #[test]
    fn refuses_padded_first_conv() {
        let mut model = one_conv_model(
            vec![1.0; 3],
            Some(vec![0.0]),
            Some(NormalizationParams::imagenet()),
        );
        if let OpKind::Conv { spec, .. } = &mut model.nodes[1].op {
            spec.padding = crate::tensor::Padding::same(1);
        }
        assert_eq!(
            fold_normalization(&model).unwrap_err(),
            FoldError::PaddedFirstConv { node: "conv".into() }
        );
    }

    #[test]
    fn bias_free_conv_gains_a_bias() {
        let norm = NormalizationParams::new([10.0, 20.0, 30.0], [2.0, 4.0, 5.0]).unwrap();
        let model = one_conv_model(vec![2.0, 4.0, 10.0], None, Some(norm));
        let folded = fold_normalization(&model).unwrap();
        // b' = 0 - (10/2*2 + 20/4*4 + 30/5*10) = -(10 + 20 + 60) = -90.
        let bias = &folded.weights["conv.folded_bias"];
        assert_eq!(bias.data(), &[-90.0]);
        let img = Tensor::from_fn([1, 3, 2, 2], |_, c, y, x| (c + y + x) as f32 * 31.0);
        let a = model.run(&img, true).unwrap();
        let b = folded.run(&img, false).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-4);
    }
}
