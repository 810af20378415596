//! Prompt boundary loosening: contiguous blocks of source logits collapse to
//! their maximum before label mapping.

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `temperature` is the block size: block `j` covers source logits
/// `[j·T, min((j+1)·T, n))`, so the reduced width is `ceil(n / T)` and
/// `T = 1` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PblConfig {
    temperature: usize,
    n: usize,
}

impl PblConfig {
    pub fn new(temperature: usize, n: usize) -> Result<Self> {
        if temperature == 0 || n == 0 {
            return Err(Error::InvalidSpec(format!(
                "temperature and source width must be positive (T={temperature}, n={n})"
            )));
        }
        Ok(PblConfig { temperature, n })
    }

    pub fn temperature(&self) -> usize {
        self.temperature
    }

    pub fn source_dim(&self) -> usize {
        self.n
    }

    pub fn reduced_dim(&self) -> usize {
        self.n.div_ceil(self.temperature)
    }

    /// Fails unless every downstream class can own a distinct block.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        if self.reduced_dim() < classes {
            return Err(Error::ReducedDimTooSmall {
                m: self.reduced_dim(),
                temperature: self.temperature,
                classes,
            });
        }
        Ok(())
    }
}

/// Forward-only block maximum of `V[N×n]`.
pub fn block_reduce(values: &Tensor, cfg: &PblConfig) -> Result<Tensor> {
    if values.rank() != 2 || values.shape()[1] != cfg.source_dim() {
        return Err(Error::shape(
            "block_reduce",
            format!("input {:?}, expected width {}", values.shape(), cfg.source_dim()),
        ));
    }
    let mut graph = Graph::new();
    let v = graph.constant(values.clone());
    let out = graph.block_max(v, cfg.temperature())?;
    Ok(graph.value(out).clone())
}
