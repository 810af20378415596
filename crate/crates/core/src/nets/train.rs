use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::attack::{adversarial_accuracy, fgsm_metered, AttackConfig, EvalReport, Pipeline};
use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::epochs::{run_epochs, EpochTask, StepOutcome};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::optim::{NamedGrads, Sgd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub seed: u64,
    /// Adversarial budget ramp: during epoch `e` the attack uses
    /// `ε·min(1, (e−1)/epsilon_warmup)`; 0 applies the full ε throughout.
    #[serde(default)]
    pub epsilon_warmup: usize,
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidSpec(format!(
                "epochs and batch_size must be positive (got {} and {})",
                self.epochs, self.batch_size
            )));
        }
        Sgd::new(self.learning_rate, self.momentum).map(|_| ())
    }

    /// Attack budget in force during `epoch` (1-based).
    pub fn epoch_attack(&self, attack: &AttackConfig, epoch: usize) -> AttackConfig {
        if self.epsilon_warmup == 0 {
            return *attack;
        }
        let frac = ((epoch - 1) as f32 / self.epsilon_warmup as f32).min(1.0);
        AttackConfig {
            epsilon: attack.epsilon * frac,
        }
    }
}

/// Held-out data scored after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub data: &'a Dataset,
    pub attack: AttackConfig,
    /// Record wall-clock milliseconds per epoch; when off, `wall_ms` is 0.
    pub timing: bool,
}

struct SourceTask<'a> {
    params: &'a mut ModelParams,
    data: &'a Dataset,
    sgd: Sgd,
    hyper: &'a TrainHyper,
    attack: Option<AttackConfig>,
    current: Option<AttackConfig>,
}

impl EpochTask for SourceTask<'_> {
    fn begin_epoch(&mut self, epoch: usize) {
        self.current = self.attack.map(|a| self.hyper.epoch_attack(&a, epoch));
    }

    fn step(&mut self, batch: &[usize]) -> Result<StepOutcome> {
        let (mut images, labels) = self.data.batch(batch)?;
        let mut attack_bytes = 0;
        if let Some(cfg) = &self.current {
            let (adv, bytes) = fgsm_metered(&*self.params, &images, &labels, cfg)?;
            images = adv;
            attack_bytes = bytes;
        }
        let mut graph = Graph::new();
        let x = graph.constant(images);
        let (logits, vars) = self.params.record(&mut graph, x, true)?;
        let loss = graph.softmax_cross_entropy(logits, &labels)?;
        let loss_value = graph.value(loss).data()[0];
        let mut grads = graph.backward(loss)?;
        let peak = (graph.size_bytes() + grads.peak_bytes()).max(attack_bytes);
        let mut named = NamedGrads::new();
        for (name, var) in vars {
            if let Some(g) = grads.take(var) {
                named.insert(name, g);
            }
        }
        self.sgd.step(self.params, &mut named)?;
        Ok(StepOutcome {
            loss: loss_value,
            peak_bytes: peak,
        })
    }

    fn evaluate(&self, data: &Dataset, attack: &AttackConfig) -> Result<EvalReport> {
        adversarial_accuracy(&*self.params, data, attack)
    }

    fn resident_bytes(&self) -> usize {
        self.params.size_bytes() + self.sgd.state_bytes()
    }
}

fn check_dataset(params: &ModelParams, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.image_shape() != params.input_shape() {
        return Err(Error::shape(
            "train",
            format!(
                "dataset images {:?} vs model input {:?}",
                data.image_shape(),
                params.input_shape()
            ),
        ));
    }
    if data.classes() > params.spec().n_classes {
        return Err(Error::InvalidInput(format!(
            "dataset has {} classes, model only {}",
            data.classes(),
            params.spec().n_classes
        )));
    }
    Ok(())
}

fn train(
    params: &mut ModelParams,
    data: &Dataset,
    hyper: &TrainHyper,
    attack: Option<AttackConfig>,
    monitor: &Monitor<'_>,
) -> Result<Vec<MetricsRecord>> {
    if params.is_frozen() {
        return Err(Error::Frozen);
    }
    hyper.validate()?;
    check_dataset(params, data)?;
    if let Some(a) = &attack {
        a.validate()?;
    }
    let mut task = SourceTask {
        params,
        data,
        sgd: Sgd::new(hyper.learning_rate, hyper.momentum)?,
        hyper,
        attack,
        current: attack,
    };
    run_epochs(data, hyper, monitor, &mut task)
}

/// Minimizes clean cross-entropy with seeded shuffling.
pub fn train_standard(
    params: &mut ModelParams,
    data: &Dataset,
    hyper: &TrainHyper,
    monitor: &Monitor<'_>,
) -> Result<Vec<MetricsRecord>> {
    train(params, data, hyper, None, monitor)
}

/// Like [`train_standard`], but every batch is replaced by its single-step
/// FGSM perturbation against the current parameters before the update.
pub fn train_adversarial(
    params: &mut ModelParams,
    data: &Dataset,
    hyper: &TrainHyper,
    attack: &AttackConfig,
    monitor: &Monitor<'_>,
) -> Result<Vec<MetricsRecord>> {
    train(params, data, hyper, Some(*attack), monitor)
}
