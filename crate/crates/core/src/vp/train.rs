use serde::{Deserialize, Serialize};

use super::{
    ilm_update, prediction_frequencies, rlm_init, LabelMapping, LabelMethod, PblConfig, PromptedPipeline,
    VisualPrompt, PROMPT_INIT, PROMPT_PARAMS,
};
use crate::attack::{adversarial_accuracy, fgsm_metered, AttackConfig, EvalReport};
use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::epochs::{run_epochs, EpochTask, StepOutcome};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::nets::{ModelParams, Monitor, TrainHyper};
use crate::optim::{NamedGrads, Sgd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTrainConfig {
    pub pad_width: usize,
    pub label_method: LabelMethod,
    /// Block size of the reduction stage; `None` leaves the stage out.
    pub temperature: Option<usize>,
    /// FGSM-perturb every batch through the full pipeline before the step.
    pub adversarial: bool,
    pub attack: AttackConfig,
    pub hyper: TrainHyper,
    /// Seeds the random label mapping.
    pub mapping_seed: u64,
}

#[derive(Debug, Clone)]
pub struct PromptRun {
    pub prompt: VisualPrompt,
    pub mapping: LabelMapping,
    pub reduction: Option<PblConfig>,
    pub records: Vec<MetricsRecord>,
    /// Mapping in force during each epoch, in order.
    pub mapping_history: Vec<LabelMapping>,
}

impl PromptRun {
    pub fn pipeline<'a>(&'a self, source: &'a ModelParams) -> Result<PromptedPipeline<'a>> {
        PromptedPipeline::new(source, &self.prompt, self.reduction, &self.mapping)
    }
}

struct PromptTask<'a> {
    source: &'a ModelParams,
    data: &'a Dataset,
    prompt: VisualPrompt,
    mapping: LabelMapping,
    reduction: Option<PblConfig>,
    method: LabelMethod,
    adversarial: Option<AttackConfig>,
    current: Option<AttackConfig>,
    hyper: TrainHyper,
    sgd: Sgd,
    history: Vec<LabelMapping>,
}

impl PromptTask<'_> {
    fn pipeline(&self) -> Result<PromptedPipeline<'_>> {
        PromptedPipeline::new(self.source, &self.prompt, self.reduction, &self.mapping)
    }

    fn remap(&mut self) -> Result<()> {
        let reduced = self.pipeline()?.without_mapping();
        let freq = prediction_frequencies(&reduced, self.data, self.mapping.reduced_dim())?;
        self.mapping = ilm_update(&freq)?;
        Ok(())
    }
}

impl EpochTask for PromptTask<'_> {
    fn begin_epoch(&mut self, epoch: usize) {
        self.current = self.adversarial.map(|a| self.hyper.epoch_attack(&a, epoch));
    }

    fn step(&mut self, batch: &[usize]) -> Result<StepOutcome> {
        let (images, labels) = self.data.batch(batch)?;
        let pipeline = self.pipeline()?;
        let (images, attack_bytes) = match &self.current {
            Some(cfg) => fgsm_metered(&pipeline, &images, &labels, cfg)?,
            None => (images, 0),
        };
        let mut graph = Graph::new();
        let p = graph.param(self.prompt.params().clone());
        let x = graph.constant(images);
        let logits = pipeline.record_full(&mut graph, p, x)?;
        let loss = graph.softmax_cross_entropy(logits, &labels)?;
        let loss_value = graph.value(loss).data()[0];
        let mut grads = graph.backward(loss)?;
        let peak = (graph.size_bytes() + grads.peak_bytes()).max(attack_bytes);
        let g = grads
            .take(p)
            .ok_or_else(|| Error::MissingGradient(PROMPT_PARAMS.into()))?;
        let mut named = NamedGrads::from([(PROMPT_PARAMS.to_string(), g)]);
        self.sgd.step(&mut self.prompt, &mut named)?;
        Ok(StepOutcome {
            loss: loss_value,
            peak_bytes: peak,
        })
    }

    fn end_epoch(&mut self, _epoch: usize) -> Result<()> {
        self.history.push(self.mapping.clone());
        if self.method == LabelMethod::Ilm {
            self.remap()?;
        }
        Ok(())
    }

    fn evaluate(&self, data: &Dataset, attack: &AttackConfig) -> Result<EvalReport> {
        adversarial_accuracy(&self.pipeline()?, data, attack)
    }

    fn resident_bytes(&self) -> usize {
        self.source.size_bytes() + self.prompt.params().size_bytes() + self.sgd.state_bytes()
    }
}

/// Learns a border prompt for `data` (downstream images sized to the
/// prompt interior) on a frozen `source`, minimizing cross-entropy of the
/// mapped, optionally reduced, source logits over the prompt alone.
///
/// Under [`LabelMethod::Ilm`] the mapping is derived from the initial
/// prompt's prediction frequencies and re-derived after every epoch.
pub fn train_prompt(
    source: &ModelParams,
    data: &Dataset,
    cfg: &PromptTrainConfig,
    monitor: &Monitor<'_>,
) -> Result<PromptRun> {
    if !source.is_frozen() {
        return Err(Error::InvalidInput(
            "prompt training requires a frozen source model".into(),
        ));
    }
    cfg.hyper.validate()?;
    cfg.attack.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = source.spec().n_classes;
    let reduction = cfg.temperature.map(|t| PblConfig::new(t, n)).transpose()?;
    let m = reduction.map_or(n, |r| r.reduced_dim());
    let classes = data.classes();
    if m < classes {
        return Err(Error::ReducedDimTooSmall {
            m,
            temperature: cfg.temperature.unwrap_or(1),
            classes,
        });
    }
    let prompt = VisualPrompt::new(source.spec().input_size, cfg.pad_width, PROMPT_INIT)?;
    if data.image_shape() != prompt.interior_shape() {
        return Err(Error::shape(
            "train_prompt",
            format!(
                "downstream images {:?} do not fill the prompt interior {:?}",
                data.image_shape(),
                prompt.interior_shape()
            ),
        ));
    }

    let fingerprint = source.fingerprint();
    let mut task = PromptTask {
        source,
        data,
        prompt,
        mapping: rlm_init(m, classes, cfg.mapping_seed)?,
        reduction,
        method: cfg.label_method,
        adversarial: cfg.adversarial.then_some(cfg.attack),
        current: None,
        hyper: cfg.hyper.clone(),
        sgd: Sgd::new(cfg.hyper.learning_rate, cfg.hyper.momentum)?,
        history: Vec::new(),
    };
    if cfg.label_method == LabelMethod::Ilm {
        task.remap()?;
    }
    let records = run_epochs(data, &cfg.hyper, monitor, &mut task)?;
    if source.fingerprint() != fingerprint {
        return Err(Error::InvalidInput(
            "frozen source parameters changed during prompt training".into(),
        ));
    }
    Ok(PromptRun {
        prompt: task.prompt,
        mapping: task.mapping,
        reduction,
        records,
        mapping_history: task.history,
    })
}
