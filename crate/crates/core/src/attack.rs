//! FGSM and the clean / adversarial accuracy protocols.
//!
//! Adversarial accuracy follows a survivor convention: only samples the
//! pipeline classifies correctly before the attack are attacked, and the
//! score is the fraction of those that remain correct afterwards.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Graph, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 128;

/// A differentiable map from an input batch to logits.
pub trait Pipeline {
    /// `(C, h, w)` of one input image.
    fn input_shape(&self) -> (usize, usize, usize);

    /// Records the forward pass of `input` on `graph` and returns the logits.
    fn logits(&self, graph: &mut Graph, input: Var) -> Result<Var>;
}

impl<P: Pipeline + ?Sized> Pipeline for &P {
    fn input_shape(&self) -> (usize, usize, usize) {
        (**self).input_shape()
    }

    fn logits(&self, graph: &mut Graph, input: Var) -> Result<Var> {
        (**self).logits(graph, input)
    }
}

/// ℓ∞ budget in `[0, 1]` pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f32,
}

impl AttackConfig {
    pub fn new(epsilon: f32) -> Result<Self> {
        let cfg = AttackConfig { epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon >= 0.0 && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub standard_accuracy: f32,
    /// `n_survived_attack / n_correct`, or 0 when nothing was correct.
    pub adversarial_accuracy: f32,
    pub n_total: usize,
    pub n_correct: usize,
    pub n_survived_attack: usize,
    /// Mean top-1 softmax probability on clean inputs.
    pub mean_confidence: f32,
}

/// Logits for a batch, without gradients.
pub fn predict<P: Pipeline + ?Sized>(pipeline: &P, batch: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let x = graph.constant(batch.clone());
    let logits = pipeline.logits(&mut graph, x)?;
    Ok(graph.value(logits).clone())
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One ulp toward `target`.
fn step_toward(v: f32, target: f32) -> f32 {
    if v == target {
        return v;
    }
    let bits = v.to_bits();
    let up = (v < target) == (v >= 0.0);
    if v == 0.0 {
        f32::from_bits(1).copysign(target - v)
    } else if up {
        f32::from_bits(bits + 1)
    } else {
        f32::from_bits(bits - 1)
    }
}

/// `clamp01(x + ε·sign(∇ₓ L))`, with the result pulled back by rounding
/// ulps where needed so that `|x_adv − x| ≤ ε` holds in `f32`.
pub(crate) fn fgsm_metered<P: Pipeline + ?Sized>(
    pipeline: &P,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<(Tensor, usize)> {
    cfg.validate()?;
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!(
            "fgsm input pixel {v} outside [0, 1]"
        )));
    }
    if cfg.epsilon == 0.0 {
        return Ok((x.clone(), 0));
    }
    let mut graph = Graph::new();
    let input = graph.param(x.clone());
    let logits = pipeline.logits(&mut graph, input)?;
    let loss = graph.softmax_cross_entropy(logits, labels)?;
    let mut grads = graph.backward(loss)?;
    let bytes = graph.size_bytes() + grads.peak_bytes();
    let g = grads
        .take(input)
        .ok_or_else(|| Error::Backward("pipeline is not differentiable in its input".into()))?;
    let eps = cfg.epsilon;
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xv, &gv)| {
            let mut adv = (xv + eps * sign(gv)).clamp(0.0, 1.0);
            while (adv - xv).abs() > eps {
                adv = step_toward(adv, xv);
            }
            adv
        })
        .collect();
    Ok((Tensor::new(x.shape(), data)?, bytes))
}

pub fn fgsm<P: Pipeline + ?Sized>(
    pipeline: &P,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    fgsm_metered(pipeline, x, labels, cfg).map(|(t, _)| t)
}

fn check_input<P: Pipeline + ?Sized>(pipeline: &P, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.image_shape() != pipeline.input_shape() {
        return Err(Error::shape(
            "evaluate",
            format!(
                "dataset images {:?} vs pipeline input {:?}",
                dataset.image_shape(),
                pipeline.input_shape()
            ),
        ));
    }
    Ok(())
}

/// Clean argmax predictions (lowest index on ties) and top-1 probabilities.
fn clean_pass<P: Pipeline + ?Sized>(pipeline: &P, dataset: &Dataset) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut preds = Vec::with_capacity(dataset.len());
    let mut conf = Vec::with_capacity(dataset.len());
    for idx in dataset.chunks(EVAL_BATCH) {
        let (images, _) = dataset.batch(&idx)?;
        let logits = predict(pipeline, &images)?;
        let k = logits.shape()[1];
        let probs = softmax_rows(logits.data(), k);
        for (row, p) in logits.data().chunks(k).zip(probs.chunks(k)) {
            let best = argmax(row);
            preds.push(best);
            conf.push(p[best]);
        }
    }
    Ok((preds, conf))
}

pub fn standard_accuracy<P: Pipeline + ?Sized>(pipeline: &P, dataset: &Dataset) -> Result<f32> {
    check_input(pipeline, dataset)?;
    let (preds, _) = clean_pass(pipeline, dataset)?;
    let correct = preds.iter().zip(dataset.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f32 / dataset.len() as f32)
}

pub fn adversarial_accuracy<P: Pipeline + ?Sized>(
    pipeline: &P,
    dataset: &Dataset,
    cfg: &AttackConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_input(pipeline, dataset)?;
    let (preds, conf) = clean_pass(pipeline, dataset)?;
    let correct: Vec<usize> = (0..dataset.len())
        .filter(|&i| preds[i] == dataset.labels()[i])
        .collect();
    let mut survived = 0;
    for chunk in correct.chunks(EVAL_BATCH) {
        let (images, labels) = dataset.batch(chunk)?;
        let adv = fgsm(pipeline, &images, &labels, cfg)?;
        let logits = predict(pipeline, &adv)?;
        let k = logits.shape()[1];
        survived += logits
            .data()
            .chunks(k)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }
    let n_total = dataset.len();
    let n_correct = correct.len();
    Ok(EvalReport {
        standard_accuracy: n_correct as f32 / n_total as f32,
        adversarial_accuracy: if n_correct == 0 {
            0.0
        } else {
            survived as f32 / n_correct as f32
        },
        n_total,
        n_correct,
        n_survived_attack: survived,
        mean_confidence: conf.iter().sum::<f32>() / n_total as f32,
    })
}
