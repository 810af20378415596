//! Label mappings from downstream classes onto (reduced) source logits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{predict, Pipeline, EVAL_BATCH};
use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMethod {
    /// Random, fixed before training.
    Rlm,
    /// Re-derived from prediction frequencies after every epoch.
    Ilm,
}

/// Injective map: downstream class `c` reads reduced logit `map[c]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    map: Vec<usize>,
    m: usize,
}

impl LabelMapping {
    pub fn new(map: Vec<usize>, m: usize) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::InvalidSpec(
                "label mapping needs at least one class".into(),
            ));
        }
        let mut seen = vec![false; m];
        for &j in &map {
            if j >= m {
                return Err(Error::IndexOutOfRange { index: j, limit: m });
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidSpec(format!("index {j} mapped twice")));
            }
        }
        Ok(LabelMapping { map, m })
    }

    pub fn identity(k: usize) -> Self {
        LabelMapping {
            map: (0..k).collect(),
            m: k,
        }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    /// Number of downstream classes.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn reduced_dim(&self) -> usize {
        self.m
    }
}

/// `out[:, c] = I[:, map[c]]`.
pub fn map_labels(reduced: &Tensor, mapping: &LabelMapping) -> Result<Tensor> {
    if reduced.rank() != 2 || reduced.shape()[1] != mapping.reduced_dim() {
        return Err(Error::shape(
            "map_labels",
            format!(
                "input {:?}, mapping over {}",
                reduced.shape(),
                mapping.reduced_dim()
            ),
        ));
    }
    let mut graph = Graph::new();
    let v = graph.constant(reduced.clone());
    let out = graph.select_columns(v, mapping.as_slice())?;
    Ok(graph.value(out).clone())
}

/// Uniformly random ordered choice of `classes` distinct indices in `[0, m)`.
pub fn rlm_init(m: usize, classes: usize, seed: u64) -> Result<LabelMapping> {
    if classes == 0 || m < classes {
        return Err(Error::InvalidSpec(format!(
            "cannot map {classes} classes injectively into {m} indices"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..m).collect();
    let (chosen, _) = pool.partial_shuffle(&mut rng, classes);
    LabelMapping::new(chosen.to_vec(), m)
}

/// `counts[c][j]`: samples of downstream class `c` whose reduced-logit
/// argmax is `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyMatrix {
    counts: Vec<Vec<u64>>,
}

impl FrequencyMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let m = counts.first().map_or(0, Vec::len);
        if m == 0 || counts.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidSpec(
                "frequency matrix must be rectangular and non-empty".into(),
            ));
        }
        Ok(FrequencyMatrix { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn reduced_dim(&self) -> usize {
        self.counts[0].len()
    }

    pub fn get(&self, class: usize, index: usize) -> u64 {
        self.counts[class][index]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Tallies argmax predictions of `reduced` (a pipeline whose outputs are
/// the `m` reduced logits, before label mapping) per downstream class.
pub fn prediction_frequencies<P: Pipeline + ?Sized>(
    reduced: &P,
    dataset: &Dataset,
    m: usize,
) -> Result<FrequencyMatrix> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = vec![vec![0u64; m]; dataset.classes()];
    for idx in dataset.chunks(EVAL_BATCH) {
        let (images, labels) = dataset.batch(&idx)?;
        let logits = predict(reduced, &images)?;
        if logits.shape()[1] != m {
            return Err(Error::shape(
                "prediction_frequencies",
                format!("pipeline emits {} logits, expected {m}", logits.shape()[1]),
            ));
        }
        for (row, &label) in logits.data().chunks(m).zip(&labels) {
            counts[label][argmax(row)] += 1;
        }
    }
    FrequencyMatrix::new(counts)
}

/// Greedy frequency matching.
///
/// Repeatedly takes the largest remaining count (ties: lower class, then
/// lower index), assigns that pair and strikes its row and column. Rows
/// left with only zeros therefore fall through to the smallest unused
/// index, in class order.
pub fn ilm_update(freq: &FrequencyMatrix) -> Result<LabelMapping> {
    let (k, m) = (freq.classes(), freq.reduced_dim());
    if m < k {
        return Err(Error::InvalidSpec(format!(
            "cannot map {k} classes injectively into {m} indices"
        )));
    }
    let mut map = vec![usize::MAX; k];
    let mut row_free = vec![true; k];
    let mut col_free = vec![true; m];
    for _ in 0..k {
        let mut best: Option<(u64, usize, usize)> = None;
        for c in (0..k).filter(|&c| row_free[c]) {
            for j in (0..m).filter(|&j| col_free[j]) {
                let v = freq.get(c, j);
                // strict comparison keeps the earliest (class, index) on ties
                if best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, c, j));
                }
            }
        }
        let (_, c, j) = best.expect("free row and column remain");
        map[c] = j;
        row_free[c] = false;
        col_free[j] = false;
    }
    LabelMapping::new(map, m)
}
