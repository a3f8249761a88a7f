//! Computation-graph representation and execution.
//!
//! A [`GraphModel`] is a topologically ordered node list plus a named weight
//! store. Nodes reference weights by name and earlier nodes by id, so one
//! serialized file carries the whole model. Execution is pure: the model is
//! immutable and per-run scratch lives on the stack of [`GraphModel::run`],
//! so independent threads may process images concurrently.

mod build;
mod fold;
mod ldw;

pub use build::{build_litedepth, BuildError, LiteDepthConfig};
pub use fold::{fold_normalization, FoldError};
pub use ldw::{load_model, save_model, LdwError, LDW_MAGIC};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{self, Activation, ConvSpec, Tensor, TensorError};

/// Per-channel affine image normalization `(I - mean) / std` in raw pixel
/// units (0..255 scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl NormalizationParams {
    /// Standard ImageNet statistics in 0-255 pixel scale.
    pub fn imagenet() -> Self {
        NormalizationParams {
            mean: [123.675, 116.28, 103.53],
            std: [58.395, 57.12, 57.375],
        }
    }

    pub fn new(mean: [f32; 3], std: [f32; 3]) -> Result<Self, GraphError> {
        if std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(GraphError::BadNormalization { std });
        }
        Ok(NormalizationParams { mean, std })
    }

    /// Applies the transform to an `(n, 3, h, w)` image tensor.
    pub fn apply(&self, image: &Tensor) -> Tensor {
        let [n, c, h, w] = image.shape();
        assert_eq!(c, 3, "normalization expects 3 channels");
        let mut out = image.clone();
        let plane = h * w;
        for bi in 0..n {
            for ci in 0..3 {
                let base = (bi * 3 + ci) * plane;
                let (m, s) = (self.mean[ci], self.std[ci]);
                for v in &mut out.data_mut()[base..base + plane] {
                    *v = (*v - m) / s;
                }
            }
        }
        out
    }
}

/// Graph node operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpKind {
    /// The image entry point.
    Input,
    Conv {
        spec: ConvSpec,
        weight: String,
        bias: Option<String>,
    },
    Act {
        #[serde(rename = "activation")]
        kind: Activation,
    },
    Resize {
        h: usize,
        w: usize,
        align_corners: bool,
    },
    /// Channel concatenation of exactly two inputs.
    Concat,
    /// Elementwise sum of exactly two inputs.
    Add,
    GlobalAvgPool,
    /// Channel attention: gate = hardsigmoid(expand(relu(reduce(gap(x)))))
    /// broadcast-multiplied onto x. Reduce/expand are 1x1 convolutions whose
    /// weights live in the store like any conv's.
    SqueezeExcite {
        reduce_weight: String,
        reduce_bias: String,
        expand_weight: String,
        expand_bias: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub op: OpKind,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// (height, width) of the raw image the model consumes.
    pub input_resolution: (usize, usize),
    /// When present, [`GraphModel::run`] can prepend the normalization
    /// transform; the fold pass consumes and removes this record.
    pub normalization: Option<NormalizationParams>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}` references `{input}` which is not an earlier node")]
    BadTopology { node: String, input: String },
    #[error("node `{node}` expects {want} inputs, has {got}")]
    BadArity { node: String, want: usize, got: usize },
    #[error("graph has no node named `{0}`")]
    UnknownNode(String),
    #[error("node `{node}`: weight `{name}` missing from the store")]
    MissingWeight { node: String, name: String },
    #[error("node `{node}`: weight `{name}` has kernel {got:?}, spec says {want:?}")]
    WeightKernelMismatch { node: String, name: String, got: (usize, usize), want: (usize, usize) },
    #[error("node `{node}`: {source}")]
    Op { node: String, source: TensorError },
    #[error("input shape {got:?} does not match model input {want:?}")]
    InputShape { got: [usize; 4], want: [usize; 4] },
    #[error("normalization requested but the model carries no normalization record")]
    NormalizationMissing,
    #[error("normalization std must be strictly positive, got {std:?}")]
    BadNormalization { std: [f32; 3] },
}

/// Ordered node list + named weight store + IO metadata.
#[derive(Debug, Clone)]
pub struct GraphModel {
    pub nodes: Vec<Node>,
    pub weights: std::collections::BTreeMap<String, Tensor>,
    pub input: String,
    pub output: String,
    pub metadata: ModelMetadata,
}

impl GraphModel {
    /// Structural validation: unique ids, topological input references,
    /// arity, weight-store resolution and kernel-shape consistency.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if seen.insert(node.id.as_str(), i).is_some() {
                return Err(GraphError::DuplicateNode(node.id.clone()));
            }
            for input in &node.inputs {
                match seen.get(input.as_str()) {
                    Some(&j) if j < i => {}
                    _ => {
                        return Err(GraphError::BadTopology {
                            node: node.id.clone(),
                            input: input.clone(),
                        })
                    }
                }
            }
            let want_arity = match node.op {
                OpKind::Input => 0,
                OpKind::Concat | OpKind::Add => 2,
                _ => 1,
            };
            if node.inputs.len() != want_arity {
                return Err(GraphError::BadArity {
                    node: node.id.clone(),
                    want: want_arity,
                    got: node.inputs.len(),
                });
            }
            self.validate_node_weights(node)?;
        }
        for id in [&self.input, &self.output] {
            if !seen.contains_key(id.as_str()) {
                return Err(GraphError::UnknownNode(id.clone()));
            }
        }
        Ok(())
    }

    fn validate_node_weights(&self, node: &Node) -> Result<(), GraphError> {
        let lookup = |name: &String| -> Result<&Tensor, GraphError> {
            self.weights.get(name).ok_or_else(|| GraphError::MissingWeight {
                node: node.id.clone(),
                name: name.clone(),
            })
        };
        match &node.op {
            OpKind::Conv { spec, weight, bias } => {
                let w = lookup(weight)?;
                let [_, _, kh, kw] = w.shape();
                if (kh, kw) != spec.kernel {
                    return Err(GraphError::WeightKernelMismatch {
                        node: node.id.clone(),
                        name: weight.clone(),
                        got: (kh, kw),
                        want: spec.kernel,
                    });
                }
                if let Some(b) = bias {
                    lookup(b)?;
                }
            }
            OpKind::SqueezeExcite {
                reduce_weight,
                reduce_bias,
                expand_weight,
                expand_bias,
            } => {
                for name in [reduce_weight, reduce_bias, expand_weight, expand_bias] {
                    lookup(name)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Total number of stored weight scalars.
    pub fn param_count(&self) -> usize {
        self.weights.values().map(Tensor::len).sum()
    }

    /// Serialized weight payload size (f32).
    pub fn weight_bytes(&self) -> usize {
        self.param_count() * 4
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Every node that lists `id` among its inputs, in graph order.
    pub fn consumers(&self, id: &str) -> Vec<&Node> {
        self.nodes.iter().filter(|n| n.inputs.iter().any(|i| i == id)).collect()
    }

    /// Executes the graph on `image`. With `apply_normalization` the
    /// per-channel affine transform from the metadata record is applied
    /// first; the model must carry one.
    pub fn run(&self, image: &Tensor, apply_normalization: bool) -> Result<Tensor, GraphError> {
        let [_, c, h, w] = image.shape();
        let (want_h, want_w) = self.metadata.input_resolution;
        if c != 3 || h != want_h || w != want_w {
            return Err(GraphError::InputShape {
                got: image.shape(),
                want: [image.shape()[0], 3, want_h, want_w],
            });
        }

        let fed = if apply_normalization {
            let norm = self
                .metadata
                .normalization
                .as_ref()
                .ok_or(GraphError::NormalizationMissing)?;
            norm.apply(image)
        } else {
            image.clone()
        };

        let index: HashMap<&str, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];

        for (i, node) in self.nodes.iter().enumerate() {
            let arg = |k: usize| -> Result<&Tensor, GraphError> {
                let j = *index.get(node.inputs[k].as_str()).ok_or_else(|| {
                    GraphError::BadTopology { node: node.id.clone(), input: node.inputs[k].clone() }
                })?;
                values[j].as_ref().ok_or_else(|| GraphError::BadTopology {
                    node: node.id.clone(),
                    input: node.inputs[k].clone(),
                })
            };
            let op_err = |source: TensorError| GraphError::Op { node: node.id.clone(), source };

            let out = match &node.op {
                OpKind::Input => fed.clone(),
                OpKind::Conv { spec, weight, bias } => {
                    let w = self.weights.get(weight).ok_or_else(|| GraphError::MissingWeight {
                        node: node.id.clone(),
                        name: weight.clone(),
                    })?;
                    let b = match bias {
                        Some(name) => Some(
                            self.weights
                                .get(name)
                                .ok_or_else(|| GraphError::MissingWeight {
                                    node: node.id.clone(),
                                    name: name.clone(),
                                })?
                                .data(),
                        ),
                        None => None,
                    };
                    tensor::conv2d(arg(0)?, w, b, spec).map_err(op_err)?
                }
                OpKind::Act { kind } => tensor::activation(arg(0)?, *kind),
                OpKind::Resize { h, w, align_corners } => {
                    tensor::resize_bilinear(arg(0)?, *h, *w, *align_corners).map_err(op_err)?
                }
                OpKind::Concat => tensor::concat_channels(arg(0)?, arg(1)?).map_err(op_err)?,
                OpKind::Add => tensor::add(arg(0)?, arg(1)?).map_err(op_err)?,
                OpKind::GlobalAvgPool => tensor::global_avg_pool(arg(0)?),
                OpKind::SqueezeExcite {
                    reduce_weight,
                    reduce_bias,
                    expand_weight,
                    expand_bias,
                } => {
                    let get = |name: &String| {
                        self.weights.get(name).ok_or_else(|| GraphError::MissingWeight {
                            node: node.id.clone(),
                            name: name.clone(),
                        })
                    };
                    let x = arg(0)?;
                    let spec = ConvSpec::dense(1, 1, 0);
                    let pooled = tensor::global_avg_pool(x);
                    let reduced = tensor::conv2d(
                        &pooled,
                        get(reduce_weight)?,
                        Some(get(reduce_bias)?.data()),
                        &spec,
                    )
                    .map_err(op_err)?;
                    let reduced = tensor::activation(&reduced, Activation::Relu);
                    let expanded = tensor::conv2d(
                        &reduced,
                        get(expand_weight)?,
                        Some(get(expand_bias)?.data()),
                        &spec,
                    )
                    .map_err(op_err)?;
                    let gate = tensor::activation(&expanded, Activation::HardSigmoid);
                    scale_channels(x, &gate).map_err(op_err)?
                }
            };
            values[i] = Some(out);
        }

        let out_idx = *index
            .get(self.output.as_str())
            .ok_or_else(|| GraphError::UnknownNode(self.output.clone()))?;
        Ok(values[out_idx].take().expect("output node evaluated"))
    }
}

/// Multiplies each channel of `x` by the matching scalar from `gate`
/// (shape `(n, c, 1, 1)`).
fn scale_channels(x: &Tensor, gate: &Tensor) -> Result<Tensor, TensorError> {
    let [n, c, h, w] = x.shape();
    if gate.shape() != [n, c, 1, 1] {
        return Err(TensorError::ShapeMismatch {
            op: "scale_channels",
            detail: format!("gate {:?} vs input {:?}", gate.shape(), x.shape()),
        });
    }
    let mut out = x.clone();
    let plane = h * w;
    for bi in 0..n {
        for ci in 0..c {
            let g = gate.at(bi, ci, 0, 0);
            let base = (bi * c + ci) * plane;
            for v in &mut out.data_mut()[base..base + plane] {
                *v *= g;
            }
        }
    }
    Ok(out)
}
