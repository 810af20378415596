use std::path::Path;

use crate::autodiff::{FrameLayout, Graph, Var};
use crate::error::{Error, Result};
use crate::nets::{read_entries, write_entries};
use crate::optim::Trainable;
use crate::tensor::Tensor;

use super::LabelMapping;

/// Initial border value: the mid-gray background of the synthetic tasks.
pub const PROMPT_INIT: f32 = 0.5;

pub const PROMPT_PARAMS: &str = "prompt.params";

/// A trainable border frame of width `pad` around a downstream image.
///
/// Only border pixels have parameters; the interior window belongs to the
/// downstream image and is never written by the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualPrompt {
    layout: FrameLayout,
    params: Tensor,
}

impl VisualPrompt {
    /// `canvas` is the source model's `(C, H, W)`.
    pub fn new(canvas: (usize, usize, usize), pad: usize, init: f32) -> Result<Self> {
        let (c, h, w) = canvas;
        if pad == 0 || c == 0 || h <= 2 * pad || w <= 2 * pad {
            return Err(Error::InvalidSpec(format!(
                "pad width {pad} leaves no interior on a {c}x{h}x{w} canvas"
            )));
        }
        let layout = FrameLayout {
            channels: c,
            height: h,
            width: w,
            pad,
        };
        let params = Tensor::full(&[layout.param_count()], init);
        Ok(VisualPrompt { layout, params })
    }

    pub fn from_params(canvas: (usize, usize, usize), pad: usize, params: Tensor) -> Result<Self> {
        let mut p = Self::new(canvas, pad, 0.0)?;
        if params.numel() != p.params.numel() {
            return Err(Error::shape(
                "prompt",
                format!(
                    "{} parameters for {} border pixels",
                    params.numel(),
                    p.params.numel()
                ),
            ));
        }
        p.params = params.reshape(&[p.layout.param_count()])?;
        Ok(p)
    }

    pub fn layout(&self) -> FrameLayout {
        self.layout
    }

    pub fn pad(&self) -> usize {
        self.layout.pad
    }

    pub fn canvas(&self) -> (usize, usize, usize) {
        (self.layout.channels, self.layout.height, self.layout.width)
    }

    /// `(C, h, w)` expected of downstream images.
    pub fn interior_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.layout.interior();
        (self.layout.channels, h, w)
    }

    pub fn params(&self) -> &Tensor {
        &self.params
    }

    /// `C×H×W` support mask, true on the border frame.
    pub fn mask(&self) -> Vec<bool> {
        let l = self.layout;
        (0..l.channels)
            .flat_map(|_| (0..l.height).flat_map(move |y| (0..l.width).map(move |x| l.is_border(y, x))))
            .collect()
    }

    /// The clamped border on a `C×H×W` canvas with `interior` everywhere else.
    pub fn render(&self, interior: f32) -> Tensor {
        let l = self.layout;
        let mut k = 0;
        let mut data = Vec::with_capacity(l.channels * l.height * l.width);
        for _ in 0..l.channels {
            for y in 0..l.height {
                for x in 0..l.width {
                    if l.is_border(y, x) {
                        data.push(self.params.data()[k].clamp(0.0, 1.0));
                        k += 1;
                    } else {
                        data.push(interior);
                    }
                }
            }
        }
        Tensor::new(&[l.channels, l.height, l.width], data).expect("canvas shape")
    }

    /// Records `frame(clamp01(prompt), x_t)` where `prompt` is a graph
    /// variable holding [`params`](Self::params).
    pub fn record(&self, graph: &mut Graph, prompt: Var, images: Var) -> Result<Var> {
        let border = graph.clamp01(prompt)?;
        graph.frame(border, images, self.layout)
    }

    pub fn save(&self, path: &Path, temperature: Option<usize>, mapping: &LabelMapping) -> Result<()> {
        let (c, h, w) = self.canvas();
        let entries = vec![
            (PROMPT_PARAMS.to_string(), self.params.clone()),
            ("meta.pad_width".into(), Tensor::scalar(self.pad() as f32)),
            (
                "meta.canvas".into(),
                Tensor::new(&[3], vec![c as f32, h as f32, w as f32])?,
            ),
            (
                "meta.temperature".into(),
                Tensor::scalar(temperature.unwrap_or(0) as f32),
            ),
            (
                "meta.reduced_dim".into(),
                Tensor::scalar(mapping.reduced_dim() as f32),
            ),
            (
                "prompt.mapping".into(),
                Tensor::new(
                    &[mapping.len()],
                    mapping.as_slice().iter().map(|&v| v as f32).collect(),
                )?,
            ),
        ];
        write_entries(path, &entries)
    }

    /// Returns the prompt, its temperature (`None` for no reduction) and
    /// the label mapping it was trained with.
    pub fn load(path: &Path) -> Result<(Self, Option<usize>, LabelMapping)> {
        let entries = read_entries(path)?;
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let find = |name: &str| {
            entries
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, t)| t)
                .ok_or_else(|| corrupt(&format!("missing `{name}`")))
        };
        let ints = |t: &Tensor| t.data().iter().map(|&v| v as usize).collect::<Vec<_>>();
        let canvas = ints(find("meta.canvas")?);
        if canvas.len() != 3 {
            return Err(corrupt("malformed meta.canvas"));
        }
        let pad = ints(find("meta.pad_width")?)[0];
        let temperature = ints(find("meta.temperature")?)[0];
        let m = ints(find("meta.reduced_dim")?)[0];
        let mapping = LabelMapping::new(ints(find("prompt.mapping")?), m)
            .map_err(|e| corrupt(&format!("label mapping: {e}")))?;
        let prompt = Self::from_params(
            (canvas[0], canvas[1], canvas[2]),
            pad,
            find(PROMPT_PARAMS)?.clone(),
        )
        .map_err(|e| corrupt(&format!("shape table mismatch: {e}")))?;
        Ok((prompt, (temperature > 0).then_some(temperature), mapping))
    }
}

impl Trainable for VisualPrompt {
    fn named_tensors_mut(&mut self) -> Result<Vec<(&str, &mut Tensor)>> {
        Ok(vec![(PROMPT_PARAMS, &mut self.params)])
    }
}

/// Composes downstream images `N×C×h×w` into prompted canvases `N×C×H×W`.
pub fn apply_prompt(prompt: &VisualPrompt, images: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let p = graph.constant(prompt.params().clone());
    let x = graph.constant(images.clone());
    let out = prompt.record(&mut graph, p, x)?;
    Ok(graph.value(out).clone())
}
