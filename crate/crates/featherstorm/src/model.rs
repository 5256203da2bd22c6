//! Compact CNN classifiers: layer specs, deterministic initialization,
//! SGD-with-momentum training, prediction, named feature taps, and a
//! bit-exact checkpoint format.
//!
//! The zoo deliberately contains architecturally distinct models (kernel
//! sizes, depths, pooling vs strided convolution) so that surrogate→target
//! transfer is measured across genuinely different feature extractors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::graph::{conv_geometry, Graph, NodeId, Padding};
use crate::rng::RandomStream;
use crate::tensor::Tensor;

/// One layer of a sequential CNN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: PadMode,
    },
    Relu,
    MaxPool2,
    Flatten,
    Dense {
        out_features: usize,
    },
}

/// Serializable mirror of [`Padding`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PadMode {
    Same,
    Valid,
}

impl From<PadMode> for Padding {
    fn from(p: PadMode) -> Padding {
        match p {
            PadMode::Same => Padding::Same,
            PadMode::Valid => Padding::Valid,
        }
    }
}

/// Architecture description: a layer chain plus named feature-tap positions.
///
/// Tap positions index graph outputs: position 0 is the raw input, position
/// `i ≥ 1` is the output of `layers[i-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    pub feature_taps: BTreeMap<String, usize>,
}

impl ModelSpec {
    /// Walk the layer chain, returning the activation shape at every
    /// position (length `layers.len() + 1`, starting with the input shape).
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        let invalid = |detail: String| Error::InvalidModelSpec {
            name: self.name.clone(),
            detail,
        };
        if self.layers.is_empty() {
            return Err(invalid("no layers".into()));
        }
        if self.num_classes == 0 {
            return Err(invalid("num_classes must be positive".into()));
        }
        let mut shapes: Vec<Vec<usize>> = vec![self.input_shape.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().unwrap().clone();
            let next = match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if cur.len() != 3 {
                        return Err(invalid(format!("layer {i}: conv needs [H, W, C], got {cur:?}")));
                    }
                    let (oh, ow, _, _) = conv_geometry(
                        cur[0],
                        cur[1],
                        *kernel,
                        *kernel,
                        *stride,
                        (*padding).into(),
                    )
                    .map_err(|e| invalid(format!("layer {i}: {e}")))?;
                    vec![oh, ow, *out_channels]
                }
                LayerSpec::Relu => cur,
                LayerSpec::MaxPool2 => {
                    if cur.len() != 3 || cur[0] % 2 != 0 || cur[1] % 2 != 0 {
                        return Err(invalid(format!(
                            "layer {i}: maxpool needs even [H, W, C], got {cur:?}"
                        )));
                    }
                    vec![cur[0] / 2, cur[1] / 2, cur[2]]
                }
                LayerSpec::Flatten => vec![cur.iter().product()],
                LayerSpec::Dense { out_features } => {
                    if cur.len() != 1 {
                        return Err(invalid(format!(
                            "layer {i}: dense needs a flat input, got {cur:?}"
                        )));
                    }
                    vec![*out_features]
                }
            };
            shapes.push(next);
        }
        let last = shapes.last().unwrap();
        if last != &[self.num_classes] {
            return Err(invalid(format!(
                "chain ends in {last:?}, want [{}]",
                self.num_classes
            )));
        }
        for (tap, &pos) in &self.feature_taps {
            if pos >= shapes.len() {
                return Err(invalid(format!(
                    "tap '{tap}' points at position {pos}, chain has {}",
                    shapes.len()
                )));
            }
        }
        Ok(shapes)
    }

    /// Parameter tensor shapes per layer (empty for parameterless layers).
    pub fn param_shapes(&self) -> Result<Vec<Vec<Vec<usize>>>> {
        let shapes = self.shape_chain()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    ..
                } => {
                    let cin = shapes[i][2];
                    vec![
                        vec![*kernel, *kernel, cin, *out_channels],
                        vec![*out_channels],
                    ]
                }
                LayerSpec::Dense { out_features } => {
                    vec![vec![shapes[i][0], *out_features], vec![*out_features]]
                }
                _ => Vec::new(),
            })
            .collect())
    }
}

/// Training provenance recorded inside a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// A spec plus its parameters; immutable during attack and evaluation.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub spec: ModelSpec,
    /// `params[i]` holds layer i's tensors: `[kernel, bias]` for conv,
    /// `[weight, bias]` for dense, empty otherwise.
    pub params: Vec<Vec<Tensor>>,
    pub train_meta: TrainMeta,
}

/// Deterministic He-style initialization: uniform over
/// `±√(6 / fan_in)` (stddev `√(2 / fan_in)`), biases zero.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<ModelCheckpoint> {
    let param_shapes = spec.param_shapes()?;
    let mut params = Vec::with_capacity(spec.layers.len());
    for (i, shapes) in param_shapes.iter().enumerate() {
        if shapes.is_empty() {
            params.push(Vec::new());
            continue;
        }
        let mut rng = RandomStream::substream(seed, "init", i as u64);
        let weight_shape = &shapes[0];
        let fan_in: usize = match &spec.layers[i] {
            LayerSpec::Conv { kernel, .. } => kernel * kernel * weight_shape[2],
            LayerSpec::Dense { .. } => weight_shape[0],
            _ => unreachable!("only conv/dense carry parameters"),
        };
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = weight_shape.iter().product();
        let weight = Tensor::new(
            weight_shape,
            (0..n).map(|_| rng.uniform_in(-bound, bound)).collect(),
        );
        let bias = Tensor::zeros(&shapes[1]);
        params.push(vec![weight, bias]);
    }
    Ok(ModelCheckpoint {
        spec: spec.clone(),
        params,
        train_meta: TrainMeta {
            seed,
            ..TrainMeta::default()
        },
    })
}

/// A fully built forward graph for one input image.
pub struct ForwardPass {
    pub graph: Graph,
    pub input: NodeId,
    pub logits: NodeId,
    /// Node at every chain position (input plus each layer output).
    pub positions: Vec<NodeId>,
    /// Leaf ids of the parameters, aligned with `ModelCheckpoint::params`.
    pub param_nodes: Vec<Vec<NodeId>>,
}

impl ForwardPass {
    /// Node for a named feature tap.
    pub fn tap(&self, ckpt: &ModelCheckpoint, tap: &str) -> Result<NodeId> {
        let pos = *ckpt
            .spec
            .feature_taps
            .get(tap)
            .ok_or_else(|| Error::UnknownTap {
                model: ckpt.spec.name.clone(),
                tap: tap.to_string(),
            })?;
        Ok(self.positions[pos])
    }
}

fn apply_layer(
    graph: &mut Graph,
    node: NodeId,
    layer: &LayerSpec,
    params: &[NodeId],
) -> Result<NodeId> {
    match layer {
        LayerSpec::Conv {
            stride, padding, ..
        } => graph.conv2d(node, params[0], Some(params[1]), *stride, (*padding).into()),
        LayerSpec::Relu => Ok(graph.relu(node)),
        LayerSpec::MaxPool2 => graph.maxpool2(node),
        LayerSpec::Flatten => Ok(graph.flatten(node)),
        LayerSpec::Dense { .. } => graph.dense(node, params[0], params[1]),
    }
}

impl ModelCheckpoint {
    /// Build the full differentiable forward graph for `pixels`.
    pub fn forward(&self, pixels: &Tensor) -> Result<ForwardPass> {
        if pixels.shape() != self.spec.input_shape {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!(
                    "input {:?} vs spec {:?}",
                    pixels.shape(),
                    self.spec.input_shape
                ),
            });
        }
        let mut graph = Graph::new();
        let input = graph.leaf(pixels.clone());
        let mut param_nodes = Vec::with_capacity(self.params.len());
        for layer_params in &self.params {
            param_nodes.push(
                layer_params
                    .iter()
                    .map(|t| graph.leaf(t.clone()))
                    .collect::<Vec<_>>(),
            );
        }
        let mut positions = vec![input];
        let mut node = input;
        for (layer, params) in self.spec.layers.iter().zip(&param_nodes) {
            node = apply_layer(&mut graph, node, layer, params)?;
            positions.push(node);
        }
        Ok(ForwardPass {
            graph,
            input,
            logits: node,
            positions,
            param_nodes,
        })
    }

    /// Forward from an arbitrary chain position: treats `values` as the
    /// activation at `position` and applies the remaining layers.
    pub fn forward_from(&self, position: usize, values: &Tensor) -> Result<ForwardPass> {
        let mut graph = Graph::new();
        let input = graph.leaf(values.clone());
        let mut param_nodes = Vec::with_capacity(self.params.len());
        for layer_params in &self.params {
            param_nodes.push(
                layer_params
                    .iter()
                    .map(|t| graph.leaf(t.clone()))
                    .collect::<Vec<_>>(),
            );
        }
        let mut node = input;
        let mut positions = vec![input];
        for (layer, params) in self.spec.layers.iter().zip(&param_nodes).skip(position) {
            node = apply_layer(&mut graph, node, layer, params)?;
            positions.push(node);
        }
        Ok(ForwardPass {
            graph,
            input,
            logits: node,
            positions,
            param_nodes,
        })
    }

    /// Predicted label (argmax, ties to the lowest index) and raw logits.
    pub fn predict(&self, pixels: &Tensor) -> Result<(usize, Tensor)> {
        let pass = self.forward(pixels)?;
        let logits = pass.graph.value(pass.logits).clone();
        let mut best = 0usize;
        for (i, &v) in logits.data().iter().enumerate() {
            if v > logits.data()[best] {
                best = i;
            }
        }
        Ok((best, logits))
    }
}

/// Fraction of images the model labels correctly.
pub fn accuracy(ckpt: &ModelCheckpoint, data: &DatasetHandle) -> Result<f64> {
    let mut correct = 0usize;
    for img in data.images() {
        if ckpt.predict(&img.pixels)?.0 == img.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

const TRAIN_BATCH: usize = 16;
const TRAIN_MOMENTUM: f64 = 0.9;
const GRAD_CLIP_NORM: f64 = 5.0;

/// SGD with momentum 0.9 over seeded-shuffle minibatches of 16. Gradients
/// are averaged per batch; a fixed seed yields bitwise-identical parameters.
pub fn train(
    ckpt: &ModelCheckpoint,
    data: &DatasetHandle,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<ModelCheckpoint> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    for img in data.images() {
        if img.label >= ckpt.spec.num_classes {
            return Err(Error::Dataset(format!(
                "image {}: label {} >= model classes {}",
                img.id,
                img.label,
                ckpt.spec.num_classes
            )));
        }
    }
    let mut out = ckpt.clone();
    let mut velocity: Vec<Vec<Tensor>> = out
        .params
        .iter()
        .map(|layer| layer.iter().map(|t| Tensor::zeros(t.shape())).collect())
        .collect();

    for epoch in 0..epochs {
        // Step decay: drop to lr/2 at 60 % and lr/4 at 85 % of the run.
        let progress = epoch as f64 / epochs as f64;
        let epoch_lr = if progress >= 0.85 {
            lr * 0.25
        } else if progress >= 0.6 {
            lr * 0.5
        } else {
            lr
        };
        let mut order: Vec<usize> = (0..data.len()).collect();
        RandomStream::substream(seed, "train-order", epoch as u64).shuffle(&mut order);
        for batch in order.chunks(TRAIN_BATCH) {
            let mut grads: Vec<Vec<Tensor>> = out
                .params
                .iter()
                .map(|layer| layer.iter().map(|t| Tensor::zeros(t.shape())).collect())
                .collect();
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let img = &data.images()[idx];
                let mut pass = out.forward(&img.pixels)?;
                let loss = pass.graph.softmax_ce(pass.logits, img.label)?;
                pass.graph.backward(loss)?;
                for (layer_nodes, layer_grads) in pass.param_nodes.iter().zip(&mut grads) {
                    for (&node, grad) in layer_nodes.iter().zip(layer_grads.iter_mut()) {
                        // A parameter can miss the gradient path (fully dead
                        // relu block); that reads as zero gradient.
                        if let Ok(g) = pass.graph.grad_at(node) {
                            grad.add_scaled(g, scale);
                        }
                    }
                }
            }
            // Global-norm gradient clipping keeps one pathological batch
            // from blowing away the weights (and with them, entire relu
            // blocks) early in training.
            let total_sq: f64 = grads
                .iter()
                .flatten()
                .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
                .sum();
            let clip = if total_sq.sqrt() > GRAD_CLIP_NORM {
                GRAD_CLIP_NORM / total_sq.sqrt()
            } else {
                1.0
            };
            for ((layer_params, layer_vel), layer_grads) in
                out.params.iter_mut().zip(&mut velocity).zip(&grads)
            {
                for ((param, vel), grad) in
                    layer_params.iter_mut().zip(layer_vel.iter_mut()).zip(layer_grads)
                {
                    vel.scale(TRAIN_MOMENTUM);
                    vel.add_scaled(grad, -epoch_lr * clip);
                    param.add_scaled(vel, 1.0);
                }
            }
        }
    }
    out.train_meta.seed = seed;
    out.train_meta.epochs = epochs;
    out.train_meta.train_accuracy = accuracy(&out, data)?;
    Ok(out)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"FSTM";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: ModelSpec,
    train_meta: TrainMeta,
}

/// Serialize as magic, version, length-prefixed canonical JSON header, then
/// little-endian f64 parameter blobs in layer order. Round-trips bit-exactly.
pub fn save_checkpoint(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    let header = serde_json::to_vec(&CheckpointHeader {
        spec: ckpt.spec.clone(),
        train_meta: ckpt.train_meta,
    })
    .map_err(|e| Error::Format {
        path: path.display().to_string(),
        detail: format!("header encode failed: {e}"),
    })?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    for layer in &ckpt.params {
        for tensor in layer {
            for v in tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let fail = |detail: String| Error::Format {
        path: path.display().to_string(),
        detail,
    };
    if bytes.len() < 10 {
        return Err(fail(format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!(
            "unsupported version {version}, want {CHECKPOINT_VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let body_start = 10 + header_len;
    if bytes.len() < body_start {
        return Err(fail("truncated header".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[10..body_start]).map_err(|e| fail(format!("bad header: {e}")))?;
    let param_shapes = header.spec.param_shapes()?;
    let total: usize = param_shapes
        .iter()
        .flatten()
        .map(|s| s.iter().product::<usize>())
        .sum();
    if bytes.len() != body_start + total * 8 {
        return Err(fail(format!(
            "parameter blob is {} bytes, want {}",
            bytes.len() - body_start,
            total * 8
        )));
    }
    let mut offset = body_start;
    let mut params = Vec::with_capacity(param_shapes.len());
    for shapes in &param_shapes {
        let mut layer = Vec::with_capacity(shapes.len());
        for shape in shapes {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = bytes[offset..offset + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += n * 8;
            layer.push(Tensor::new(shape, data));
        }
        params.push(layer);
    }
    Ok(ModelCheckpoint {
        spec: header.spec,
        params,
        train_meta: header.train_meta,
    })
}

/// The three stock architectures. All share the tap names `early`, `mid`,
/// and `late`; they differ in kernel size (3 vs 5), depth (2 vs 4 conv
/// blocks), and downsampling style (max pooling vs strided convolution).
pub fn zoo(input_shape: [usize; 3], num_classes: usize) -> Vec<ModelSpec> {
    let conv = |out_channels, kernel, stride| LayerSpec::Conv {
        out_channels,
        kernel,
        stride,
        padding: PadMode::Same,
    };
    let taps = |list: &[(&str, usize)]| {
        list.iter()
            .map(|&(name, pos)| (name.to_string(), pos))
            .collect::<BTreeMap<_, _>>()
    };
    vec![
        ModelSpec {
            name: "m0".into(),
            input_shape,
            num_classes,
            layers: vec![
                conv(12, 3, 1),
                LayerSpec::Relu,
                conv(16, 3, 2),
                LayerSpec::Relu,
                conv(20, 3, 2),
                LayerSpec::Relu,
                conv(24, 3, 1),
                LayerSpec::Relu,
                conv(24, 3, 2),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    out_features: num_classes,
                },
            ],
            feature_taps: taps(&[("early", 2), ("mid", 6), ("late", 10)]),
        },
        ModelSpec {
            name: "m1".into(),
            input_shape,
            num_classes,
            layers: vec![
                conv(12, 5, 1),
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                conv(24, 5, 1),
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    out_features: num_classes,
                },
            ],
            feature_taps: taps(&[("early", 2), ("mid", 5), ("late", 6)]),
        },
        ModelSpec {
            name: "m2".into(),
            input_shape,
            num_classes,
            layers: vec![
                conv(8, 3, 1),
                LayerSpec::Relu,
                conv(12, 3, 2),
                LayerSpec::Relu,
                conv(16, 3, 2),
                LayerSpec::Relu,
                conv(20, 3, 1),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    out_features: num_classes,
                },
            ],
            feature_taps: taps(&[("early", 2), ("mid", 4), ("late", 8)]),
        },
    ]
}

/// Look up one zoo spec by model name.
pub fn zoo_spec(name: &str, input_shape: [usize; 3], num_classes: usize) -> Result<ModelSpec> {
    zoo(input_shape, num_classes)
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownModel(name.to_string()))
}
