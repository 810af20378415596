//! TOML experiment configuration. Every key is optional and falls back to
//! the value shown below.
//!
//! ```toml
//! seed = 0
//! output_dir = "runs/default"
//!
//! [source]            # architecture, regime and training of the source model
//! input_size = [1, 32, 32]
//! conv_blocks = [[8, 5, 2], [16, 3, 2]]   # [filters, kernel, stride]
//! hidden_width = 64
//! n_classes = 20
//! regime = "adversarial"                   # or "standard"
//! epochs = 15
//! batch_size = 32
//! learning_rate = 0.02
//! momentum = 0.9
//! epsilon = 0.05                           # FGSM budget for adversarial training
//! epsilon_warmup = 3                       # epochs to ramp the budget up from 0
//! # checkpoint = "path/to/source.vpck"     # load instead of training
//!
//! [prompt]
//! pad_width = 4
//! lm = "ilm"                               # or "rlm"
//! temperature = 1                          # block size T; 1 disables loosening
//! adversarial = false
//! epochs = 12
//! batch_size = 32
//! learning_rate = 0.05
//! momentum = 0.9
//! epsilon = 0.05                           # FGSM budget for adversarial prompt training
//! epsilon_warmup = 0
//!
//! [eval]
//! epsilons = [0.0, 0.02, 0.05, 0.1]
//! monitor_epsilon = 0.05                   # per-epoch adversarial accuracy
//! record_timing = true                     # false writes wall_ms = 0
//!
//! [data]
//! source_classes = 20
//! downstream_classes = 5
//! source_image = [1, 32, 32]
//! downstream_image = [1, 24, 24]
//! source_train_per_class = 40
//! source_test_per_class = 20
//! downstream_train_per_class = 100
//! downstream_test_per_class = 200
//! source_noise_level = 0.25
//! downstream_noise_level = 0.4
//! # source_train_path = "..."  (all four VPDS paths replace the synthetic tasks)
//!
//! [sweep]
//! temperatures = [1, 2, 4]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::nets::{ConvBlock, ConvNetSpec};
use crate::vp::{LabelMethod, PblConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Standard,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub input_size: [usize; 3],
    pub conv_blocks: Vec<[usize; 3]>,
    pub hidden_width: usize,
    pub n_classes: usize,
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub epsilon: f32,
    pub epsilon_warmup: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl SourceSection {
    pub fn spec(&self) -> ConvNetSpec {
        let [c, h, w] = self.input_size;
        ConvNetSpec {
            input_size: (c, h, w),
            conv_blocks: self
                .conv_blocks
                .iter()
                .map(|&[filters, kernel, stride]| ConvBlock {
                    filters,
                    kernel,
                    stride,
                })
                .collect(),
            hidden_width: self.hidden_width,
            n_classes: self.n_classes,
        }
    }

    pub fn attack(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub pad_width: usize,
    pub lm: LabelMethod,
    pub temperature: usize,
    pub adversarial: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub epsilon: f32,
    pub epsilon_warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub epsilons: Vec<f32>,
    pub monitor_epsilon: f32,
    pub record_timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source_classes: usize,
    pub downstream_classes: usize,
    pub source_image: [usize; 3],
    pub downstream_image: [usize; 3],
    pub source_train_per_class: usize,
    pub source_test_per_class: usize,
    pub downstream_train_per_class: usize,
    pub downstream_test_per_class: usize,
    pub source_noise_level: f32,
    pub downstream_noise_level: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_train_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_test_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downstream_train_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downstream_test_path: Option<PathBuf>,
}

impl DataSection {
    pub fn paths(&self) -> [&Option<PathBuf>; 4] {
        [
            &self.source_train_path,
            &self.source_test_path,
            &self.downstream_train_path,
            &self.downstream_test_path,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub temperatures: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub source: SourceSection,
    pub prompt: PromptSection,
    pub eval: EvalSection,
    pub data: DataSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            source: SourceSection::default(),
            prompt: PromptSection::default(),
            eval: EvalSection::default(),
            data: DataSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            input_size: [1, 32, 32],
            conv_blocks: vec![[8, 5, 2], [16, 3, 2]],
            hidden_width: 64,
            n_classes: 20,
            regime: Regime::Adversarial,
            epochs: 15,
            batch_size: 32,
            learning_rate: 0.02,
            momentum: 0.9,
            epsilon: 0.05,
            epsilon_warmup: 3,
            checkpoint: None,
        }
    }
}

impl Default for PromptSection {
    fn default() -> Self {
        PromptSection {
            pad_width: 4,
            lm: LabelMethod::Ilm,
            temperature: 1,
            adversarial: false,
            epochs: 12,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            epsilon: 0.05,
            epsilon_warmup: 0,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            epsilons: vec![0.0, 0.02, 0.05, 0.1],
            monitor_epsilon: 0.05,
            record_timing: true,
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source_classes: 20,
            downstream_classes: 5,
            source_image: [1, 32, 32],
            downstream_image: [1, 24, 24],
            source_train_per_class: 40,
            source_test_per_class: 20,
            downstream_train_per_class: 100,
            downstream_test_per_class: 200,
            source_noise_level: 0.25,
            downstream_noise_level: 0.4,
            source_train_path: None,
            source_test_path: None,
            downstream_train_path: None,
            downstream_test_path: None,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            temperatures: vec![1, 2, 4],
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| cfg_err(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => cfg_err(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every cross-field invariant; called before any compute.
    pub fn validate(&self) -> Result<()> {
        let spec = self.source.spec();
        spec.validate().map_err(|e| cfg_err(format!("source: {e}")))?;
        for (section, epochs, batch, lr, mom, eps) in [
            (
                "source",
                self.source.epochs,
                self.source.batch_size,
                self.source.learning_rate,
                self.source.momentum,
                self.source.epsilon,
            ),
            (
                "prompt",
                self.prompt.epochs,
                self.prompt.batch_size,
                self.prompt.learning_rate,
                self.prompt.momentum,
                self.prompt.epsilon,
            ),
        ] {
            if epochs == 0 || batch == 0 {
                return Err(cfg_err(format!(
                    "{section}: epochs and batch_size must be positive"
                )));
            }
            if !(lr >= 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&mom) {
                return Err(cfg_err(format!(
                    "{section}: learning_rate must be >= 0 and momentum in [0, 1)"
                )));
            }
            AttackConfig { epsilon: eps }
                .validate()
                .map_err(|e| cfg_err(format!("{section}: {e}")))?;
        }
        if self.eval.epsilons.is_empty() {
            return Err(cfg_err("eval.epsilons must not be empty"));
        }
        for &eps in self.eval.epsilons.iter().chain([&self.eval.monitor_epsilon]) {
            AttackConfig { epsilon: eps }
                .validate()
                .map_err(|e| cfg_err(format!("eval: {e}")))?;
        }

        let d = &self.data;
        let set = d.paths().iter().filter(|p| p.is_some()).count();
        if set != 0 && set != 4 {
            return Err(cfg_err("data: give all four dataset paths or none"));
        }
        for path in d.paths().into_iter().flatten() {
            if !path.is_file() {
                return Err(cfg_err(format!(
                    "data: dataset file {} not found",
                    path.display()
                )));
            }
        }
        if let Some(path) = &self.source.checkpoint {
            if !path.is_file() {
                return Err(cfg_err(format!(
                    "source: checkpoint {} not found",
                    path.display()
                )));
            }
        }
        if set == 0 {
            if d.source_classes < 2 || d.downstream_classes < 2 {
                return Err(cfg_err("data: synthetic tasks need at least 2 classes"));
            }
            if d.source_train_per_class == 0
                || d.source_test_per_class == 0
                || d.downstream_train_per_class == 0
                || d.downstream_test_per_class == 0
            {
                return Err(cfg_err("data: per-class sample counts must be positive"));
            }
            if !(0.0..0.5).contains(&d.source_noise_level) || !(0.0..0.5).contains(&d.downstream_noise_level)
            {
                return Err(cfg_err("data: noise levels must lie in [0, 0.5)"));
            }
            if d.source_image != self.source.input_size {
                return Err(cfg_err(format!(
                    "data.source_image {:?} must equal source.input_size {:?}",
                    d.source_image, self.source.input_size
                )));
            }
            if d.source_classes > self.source.n_classes {
                return Err(cfg_err(format!(
                    "data.source_classes {} exceeds source.n_classes {}",
                    d.source_classes, self.source.n_classes
                )));
            }
            let [c, h, w] = self.source.input_size;
            let p = self.prompt.pad_width;
            if p == 0 || d.downstream_image != [c, h.saturating_sub(2 * p), w.saturating_sub(2 * p)] {
                return Err(cfg_err(format!(
                    "data.downstream_image {:?} must fill the prompt interior of a {:?} canvas with pad_width {p}",
                    d.downstream_image, self.source.input_size
                )));
            }
        }

        let classes = self.downstream_classes();
        let temps = self.sweep.temperatures.iter().chain([&self.prompt.temperature]);
        for &t in temps {
            let pbl = PblConfig::new(t, self.source.n_classes).map_err(|e| cfg_err(e.to_string()))?;
            pbl.check_classes(classes)?;
        }
        Ok(())
    }

    /// Downstream class count; read from the file header when datasets are
    /// given by path.
    pub fn downstream_classes(&self) -> usize {
        match &self.data.downstream_train_path {
            Some(path) => read_class_count(path).unwrap_or(self.data.downstream_classes),
            None => self.data.downstream_classes,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output_dir = dir.into();
        self
    }
}

/// `K` from a `VPDS` header.
fn read_class_count(path: &Path) -> Option<usize> {
    let bytes = fs::read(path).ok()?;
    let k = bytes.get(22..26)?;
    Some(u32::from_le_bytes(k.try_into().ok()?) as usize)
}
