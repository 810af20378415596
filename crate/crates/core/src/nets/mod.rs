//! Small convolutional source classifiers: architecture, seeded init,
//! forward pass, training and checkpoints.

mod checkpoint;
mod train;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::Pipeline;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::optim::Trainable;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, read_entries, save_checkpoint, write_entries};
pub use train::{train_adversarial, train_standard, Monitor, TrainHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// conv → bias → relu blocks, then an optional relu hidden layer, then a
/// dense output layer with `n_classes` logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvNetSpec {
    /// `(C, H, W)`
    pub input_size: (usize, usize, usize),
    pub conv_blocks: Vec<ConvBlock>,
    /// Zero means no hidden layer.
    pub hidden_width: usize,
    pub n_classes: usize,
}

impl Default for ConvNetSpec {
    fn default() -> Self {
        ConvNetSpec {
            input_size: (1, 32, 32),
            conv_blocks: vec![
                ConvBlock {
                    filters: 8,
                    kernel: 5,
                    stride: 2,
                },
                ConvBlock {
                    filters: 16,
                    kernel: 3,
                    stride: 2,
                },
            ],
            hidden_width: 64,
            n_classes: 20,
        }
    }
}

impl ConvNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidSpec(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            )));
        }
        let (c, h, w) = self.input_size;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidSpec(format!("input size {:?}", self.input_size)));
        }
        self.feature_shape().map(|_| ())
    }

    /// `(C, H, W)` after the last conv block.
    pub fn feature_shape(&self) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = self.input_size;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.filters == 0 || b.kernel == 0 || b.stride == 0 {
                return Err(Error::InvalidSpec(format!("conv block {i} is degenerate: {b:?}")));
            }
            if b.kernel > h || b.kernel > w {
                return Err(Error::InvalidSpec(format!(
                    "conv block {i}: kernel {} exceeds {h}x{w} feature map",
                    b.kernel
                )));
            }
            h = (h - b.kernel) / b.stride + 1;
            w = (w - b.kernel) / b.stride + 1;
            c = b.filters;
        }
        Ok((c, h, w))
    }

    /// Parameter names and shapes in forward order.
    pub fn layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut out = Vec::new();
        let mut channels = self.input_size.0;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            out.push((
                format!("conv{i}.weight"),
                vec![b.filters, channels, b.kernel, b.kernel],
            ));
            out.push((format!("conv{i}.bias"), vec![b.filters]));
            channels = b.filters;
        }
        let (c, h, w) = self.feature_shape()?;
        let mut width = c * h * w;
        if self.hidden_width > 0 {
            out.push(("hidden.weight".into(), vec![width, self.hidden_width]));
            out.push(("hidden.bias".into(), vec![self.hidden_width]));
            width = self.hidden_width;
        }
        out.push(("out.weight".into(), vec![width, self.n_classes]));
        out.push(("out.bias".into(), vec![self.n_classes]));
        Ok(out)
    }
}

/// Fan-in of a weight tensor: everything but the output axis.
fn fan_in(shape: &[usize]) -> usize {
    match shape.len() {
        4 => shape[1] * shape[2] * shape[3],
        2 => shape[0],
        _ => 1,
    }
}

/// Named parameter set of a [`ConvNetSpec`] network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: ConvNetSpec,
    tensors: BTreeMap<String, Tensor>,
    frozen: bool,
}

impl ModelParams {
    pub fn from_tensors(spec: ConvNetSpec, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let layout = spec.layout()?;
        if layout.len() != tensors.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &layout {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::InvalidSpec(format!(
                        "`{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::InvalidSpec(format!("missing tensor `{name}`"))),
            }
        }
        Ok(ModelParams {
            spec,
            tensors,
            frozen: false,
        })
    }

    pub fn spec(&self) -> &ConvNetSpec {
        &self.spec
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn size_bytes(&self) -> usize {
        self.tensors.values().map(Tensor::size_bytes).sum()
    }

    /// FNV-1a over every name and value bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for (name, t) in &self.tensors {
            name.bytes().for_each(&mut eat);
            for v in t.data() {
                v.to_bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }

    /// Records the network on `graph`. With `trainable`, parameters become
    /// gradient leaves and are returned by name.
    pub fn record(
        &self,
        graph: &mut Graph,
        input: Var,
        trainable: bool,
    ) -> Result<(Var, Vec<(String, Var)>)> {
        let (c, h, w) = self.spec.input_size;
        let shape = graph.value(input).shape();
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(Error::shape(
                "forward",
                format!(
                    "batch {shape:?} does not match input size {:?}",
                    self.spec.input_size
                ),
            ));
        }
        let mut vars = Vec::with_capacity(self.tensors.len());
        let mut leaf = |graph: &mut Graph, name: String| {
            let t = self.tensors[&name].clone();
            let v = if trainable {
                graph.param(t)
            } else {
                graph.constant(t)
            };
            vars.push((name, v));
            v
        };
        let mut x = input;
        for (i, b) in self.spec.conv_blocks.iter().enumerate() {
            let k = leaf(graph, format!("conv{i}.weight"));
            let bias = leaf(graph, format!("conv{i}.bias"));
            x = graph.conv2d(x, k, b.stride)?;
            x = graph.add_channel_bias(x, bias)?;
            x = graph.relu(x)?;
        }
        x = graph.flatten(x)?;
        if self.spec.hidden_width > 0 {
            let wv = leaf(graph, "hidden.weight".into());
            let bv = leaf(graph, "hidden.bias".into());
            x = graph.matmul(x, wv)?;
            x = graph.add_row_bias(x, bv)?;
            x = graph.relu(x)?;
        }
        let wv = leaf(graph, "out.weight".into());
        let bv = leaf(graph, "out.bias".into());
        x = graph.matmul(x, wv)?;
        x = graph.add_row_bias(x, bv)?;
        Ok((x, vars))
    }
}

impl Trainable for ModelParams {
    fn named_tensors_mut(&mut self) -> Result<Vec<(&str, &mut Tensor)>> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v)).collect())
    }
}

impl Pipeline for ModelParams {
    fn input_shape(&self) -> (usize, usize, usize) {
        self.spec.input_size
    }

    fn logits(&self, graph: &mut Graph, input: Var) -> Result<Var> {
        self.record(graph, input, false).map(|(v, _)| v)
    }
}

/// Uniform `±sqrt(6 / fan_in)` weights, zero biases, drawn in layout order.
pub fn init_params(spec: &ConvNetSpec, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape) in spec.layout()? {
        let t = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let bound = (6.0 / fan_in(&shape) as f32).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
            Tensor::new(&shape, data)?
        };
        tensors.insert(name, t);
    }
    ModelParams::from_tensors(spec.clone(), tensors)
}

/// Raw logits `N×n_classes` for a batch.
pub fn forward(params: &ModelParams, batch: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let x = graph.constant(batch.clone());
    let (logits, _) = params.record(&mut graph, x, false)?;
    Ok(graph.value(logits).clone())
}
