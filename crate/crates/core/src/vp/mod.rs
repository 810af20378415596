//! Visual prompting on a frozen source model: the border prompt, block-max
//! reduction of source logits, label mapping, and prompt training.
//!
//! The full downstream classifier is
//!
//! ```text
//! x_t ──frame(prompt)──▶ source ──block max (T)──▶ select(map) ──▶ logits
//! ```
//!
//! with the reduction stage optional; a [`PblConfig`] with `T = 1` is
//! numerically identical to leaving it out.

mod mapping;
mod pbl;
mod prompt;
mod train;

use crate::attack::Pipeline;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nets::ModelParams;

pub use mapping::{
    ilm_update, map_labels, prediction_frequencies, rlm_init, FrequencyMatrix, LabelMapping, LabelMethod,
};
pub use pbl::{block_reduce, PblConfig};
pub use prompt::{apply_prompt, VisualPrompt, PROMPT_INIT, PROMPT_PARAMS};
pub use train::{train_prompt, PromptRun, PromptTrainConfig};

/// Source model seen through a prompt, an optional reduction and a label
/// mapping. Inputs are downstream images sized to the prompt's interior.
#[derive(Debug, Clone, Copy)]
pub struct PromptedPipeline<'a> {
    pub source: &'a ModelParams,
    pub prompt: &'a VisualPrompt,
    pub reduction: Option<PblConfig>,
    pub mapping: &'a LabelMapping,
}

impl<'a> PromptedPipeline<'a> {
    pub fn new(
        source: &'a ModelParams,
        prompt: &'a VisualPrompt,
        reduction: Option<PblConfig>,
        mapping: &'a LabelMapping,
    ) -> Result<Self> {
        let n = source.spec().n_classes;
        if prompt.canvas() != source.spec().input_size {
            return Err(Error::shape(
                "prompted pipeline",
                format!(
                    "prompt canvas {:?} vs source input {:?}",
                    prompt.canvas(),
                    source.spec().input_size
                ),
            ));
        }
        let m = match reduction {
            Some(cfg) if cfg.source_dim() != n => {
                return Err(Error::shape(
                    "prompted pipeline",
                    format!("reduction over {} logits, source emits {n}", cfg.source_dim()),
                ))
            }
            Some(cfg) => cfg.reduced_dim(),
            None => n,
        };
        if mapping.reduced_dim() != m {
            return Err(Error::shape(
                "prompted pipeline",
                format!(
                    "mapping targets {} indices, reduced width is {m}",
                    mapping.reduced_dim()
                ),
            ));
        }
        Ok(PromptedPipeline {
            source,
            prompt,
            reduction,
            mapping,
        })
    }

    /// Width of the reduced logits the mapping selects from.
    pub fn reduced_dim(&self) -> usize {
        self.mapping.reduced_dim()
    }

    /// Records everything up to, but excluding, the label mapping.
    pub fn record_reduced(&self, graph: &mut Graph, prompt: Var, images: Var) -> Result<Var> {
        let canvas = self.prompt.record(graph, prompt, images)?;
        let logits = self.source.logits(graph, canvas)?;
        match self.reduction {
            Some(cfg) => graph.block_max(logits, cfg.temperature()),
            None => Ok(logits),
        }
    }

    pub fn record_full(&self, graph: &mut Graph, prompt: Var, images: Var) -> Result<Var> {
        let reduced = self.record_reduced(graph, prompt, images)?;
        graph.select_columns(reduced, self.mapping.as_slice())
    }

    /// The pipeline minus its label mapping.
    pub fn without_mapping(self) -> ReducedPipeline<'a> {
        ReducedPipeline(self)
    }
}

impl Pipeline for PromptedPipeline<'_> {
    fn input_shape(&self) -> (usize, usize, usize) {
        self.prompt.interior_shape()
    }

    fn logits(&self, graph: &mut Graph, input: Var) -> Result<Var> {
        let p = graph.constant(self.prompt.params().clone());
        self.record_full(graph, p, input)
    }
}

/// Emits the reduced logits of a [`PromptedPipeline`].
#[derive(Debug, Clone, Copy)]
pub struct ReducedPipeline<'a>(PromptedPipeline<'a>);

impl Pipeline for ReducedPipeline<'_> {
    fn input_shape(&self) -> (usize, usize, usize) {
        self.0.input_shape()
    }

    fn logits(&self, graph: &mut Graph, input: Var) -> Result<Var> {
        let p = graph.constant(self.0.prompt.params().clone());
        self.0.record_reduced(graph, p, input)
    }
}
