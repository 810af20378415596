//! Seeded epoch/batch driver shared by source and prompt training.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{AttackConfig, EvalReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::nets::{Monitor, TrainHyper};

pub(crate) struct StepOutcome {
    /// Batch-mean loss.
    pub loss: f32,
    pub peak_bytes: usize,
}

pub(crate) trait EpochTask {
    /// Called before the first batch of every epoch (1-based).
    fn begin_epoch(&mut self, _epoch: usize) {}

    fn step(&mut self, batch: &[usize]) -> Result<StepOutcome>;

    /// Runs inside the timed region, after the last batch.
    fn end_epoch(&mut self, _epoch: usize) -> Result<()> {
        Ok(())
    }

    fn evaluate(&self, data: &Dataset, attack: &AttackConfig) -> Result<EvalReport>;

    /// Parameters and optimizer state held across steps.
    fn resident_bytes(&self) -> usize;
}

/// Runs `hyper.epochs` shuffled passes over `data`, one RNG stream seeded
/// by `hyper.seed` driving every shuffle.
pub(crate) fn run_epochs<T: EpochTask>(
    data: &Dataset,
    hyper: &TrainHyper,
    monitor: &Monitor<'_>,
    task: &mut T,
) -> Result<Vec<MetricsRecord>> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        task.begin_epoch(epoch);
        let start = Instant::now();
        let mut weighted = 0.0f64;
        let mut peak = 0usize;
        for batch in order.chunks(hyper.batch_size) {
            let out = task.step(batch)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite { op: "training loss" });
            }
            weighted += out.loss as f64 * batch.len() as f64;
            peak = peak.max(out.peak_bytes);
        }
        task.end_epoch(epoch)?;
        let wall_ms = if monitor.timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let report = task.evaluate(monitor.data, &monitor.attack)?;
        records.push(MetricsRecord {
            epoch,
            loss: (weighted / data.len() as f64) as f32,
            std_acc: report.standard_accuracy,
            adv_acc: report.adversarial_accuracy,
            mean_confidence: report.mean_confidence,
            wall_ms,
            peak_mem_bytes: (peak + task.resident_bytes()) as u64,
        });
    }
    Ok(records)
}
