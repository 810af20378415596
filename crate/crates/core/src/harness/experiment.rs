use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Regime};
use super::pixmap::export_prompt_image;
use crate::attack::{adversarial_accuracy, AttackConfig, EvalReport, Pipeline};
use crate::data::{derive_seed, generate_synthetic, load_raw, Dataset, Split, Style, SynthSpec};
use crate::error::{Error, Result};
use crate::metrics::{write_metrics, MetricsRecord};
use crate::nets::{
    init_params, load_checkpoint, save_checkpoint, train_adversarial, train_standard, ModelParams, Monitor,
    TrainHyper,
};
use crate::vp::{
    train_prompt, LabelMapping, LabelMethod, PblConfig, PromptRun, PromptTrainConfig, PromptedPipeline,
    VisualPrompt,
};

// Independent RNG streams derived from the experiment seed.
const STREAM_SOURCE_INIT: u64 = 1;
const STREAM_SOURCE_SHUFFLE: u64 = 2;
const STREAM_PROMPT_SHUFFLE: u64 = 3;
const STREAM_MAPPING: u64 = 4;
const STREAM_DATA: u64 = 16;

pub const SOURCE_CHECKPOINT: &str = "source.vpck";
pub const SOURCE_METRICS: &str = "source_metrics.csv";
pub const PROMPT_CHECKPOINT: &str = "prompt.vpck";
pub const PROMPT_METRICS: &str = "prompt_metrics.csv";
pub const PROMPT_IMAGE: &str = "prompt.ppm";
pub const REPORT: &str = "report.json";
pub const SWEEP_TABLE: &str = "sweep_T.csv";
pub const ABLATION_TABLE: &str = "ablation.csv";

#[derive(Debug, Clone)]
pub struct Datasets {
    pub source_train: Dataset,
    pub source_test: Dataset,
    pub downstream_train: Dataset,
    pub downstream_test: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Datasets> {
    let d = &cfg.data;
    if let [Some(a), Some(b), Some(c), Some(e)] = d.paths() {
        return Ok(Datasets {
            source_train: load_raw(a, Split::Train)?,
            source_test: load_raw(b, Split::Test)?,
            downstream_train: load_raw(c, Split::Train)?,
            downstream_test: load_raw(e, Split::Test)?,
        });
    }
    let synth = |classes, per_class, [c, h, w]: [usize; 3], style, stream| SynthSpec {
        noise_level: match style {
            Style::Source => d.source_noise_level,
            Style::Downstream => d.downstream_noise_level,
        },
        n_classes: classes,
        samples_per_class: per_class,
        image_size: (c, h, w),
        style,
        seed: derive_seed(cfg.seed, STREAM_DATA + stream),
    };
    Ok(Datasets {
        source_train: generate_synthetic(
            &synth(
                d.source_classes,
                d.source_train_per_class,
                d.source_image,
                Style::Source,
                0,
            ),
            Split::Train,
        )?,
        source_test: generate_synthetic(
            &synth(
                d.source_classes,
                d.source_test_per_class,
                d.source_image,
                Style::Source,
                1,
            ),
            Split::Test,
        )?,
        downstream_train: generate_synthetic(
            &synth(
                d.downstream_classes,
                d.downstream_train_per_class,
                d.downstream_image,
                Style::Downstream,
                2,
            ),
            Split::Train,
        )?,
        downstream_test: generate_synthetic(
            &synth(
                d.downstream_classes,
                d.downstream_test_per_class,
                d.downstream_image,
                Style::Downstream,
                3,
            ),
            Split::Test,
        )?,
    })
}

fn monitor<'a>(cfg: &ExperimentConfig, data: &'a Dataset) -> Monitor<'a> {
    Monitor {
        data,
        attack: AttackConfig {
            epsilon: cfg.eval.monitor_epsilon,
        },
        timing: cfg.eval.record_timing,
    }
}

pub fn source_hyper(cfg: &ExperimentConfig) -> TrainHyper {
    let s = &cfg.source;
    TrainHyper {
        epochs: s.epochs,
        batch_size: s.batch_size,
        learning_rate: s.learning_rate,
        momentum: s.momentum,
        seed: derive_seed(cfg.seed, STREAM_SOURCE_SHUFFLE),
        epsilon_warmup: s.epsilon_warmup,
    }
}

/// Trains a fresh source model under `regime`; the result is frozen.
pub fn train_source(
    cfg: &ExperimentConfig,
    data: &Datasets,
    regime: Regime,
) -> Result<(ModelParams, Vec<MetricsRecord>)> {
    let mut params = init_params(&cfg.source.spec(), derive_seed(cfg.seed, STREAM_SOURCE_INIT))?;
    let hyper = source_hyper(cfg);
    let mon = monitor(cfg, &data.source_test);
    let records = match regime {
        Regime::Standard => train_standard(&mut params, &data.source_train, &hyper, &mon)?,
        Regime::Adversarial => train_adversarial(
            &mut params,
            &data.source_train,
            &hyper,
            &cfg.source.attack(),
            &mon,
        )?,
    };
    params.freeze();
    Ok((params, records))
}

/// Trains the configured source and writes its checkpoint and metrics.
pub fn source_stage(cfg: &ExperimentConfig, data: &Datasets) -> Result<(ModelParams, Vec<MetricsRecord>)> {
    let (params, records) = train_source(cfg, data, cfg.source.regime)?;
    ensure_dir(&cfg.output_dir)?;
    save_checkpoint(&params, &cfg.output_dir.join(SOURCE_CHECKPOINT))?;
    write_metrics(&records, &cfg.output_dir.join(SOURCE_METRICS))?;
    Ok((params, records))
}

/// Source model for CLI stages: the configured checkpoint, else
/// `<output_dir>/source.vpck` when present, else a freshly trained one
/// (which is then saved there).
pub fn obtain_source(cfg: &ExperimentConfig, data: &Datasets) -> Result<ModelParams> {
    let cached = cfg.output_dir.join(SOURCE_CHECKPOINT);
    let path = cfg
        .source
        .checkpoint
        .clone()
        .or_else(|| cached.is_file().then_some(cached));
    match path {
        Some(path) => {
            let mut params = load_checkpoint(&path)?;
            if params.spec() != &cfg.source.spec() {
                return Err(Error::Config(format!(
                    "checkpoint {} does not match the configured architecture",
                    path.display()
                )));
            }
            params.freeze();
            Ok(params)
        }
        None => source_stage(cfg, data).map(|(params, _)| params),
    }
}

/// One cell of a prompt-training grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariant {
    /// `None` removes the reduction stage.
    pub temperature: Option<usize>,
    pub adversarial: bool,
    pub lm: LabelMethod,
}

impl PromptVariant {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        PromptVariant {
            temperature: Some(cfg.prompt.temperature),
            adversarial: cfg.prompt.adversarial,
            lm: cfg.prompt.lm,
        }
    }
}

pub fn prompt_config(cfg: &ExperimentConfig, variant: PromptVariant) -> PromptTrainConfig {
    let p = &cfg.prompt;
    PromptTrainConfig {
        pad_width: p.pad_width,
        label_method: variant.lm,
        temperature: variant.temperature,
        adversarial: variant.adversarial,
        attack: AttackConfig { epsilon: p.epsilon },
        hyper: TrainHyper {
            epochs: p.epochs,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            momentum: p.momentum,
            seed: derive_seed(cfg.seed, STREAM_PROMPT_SHUFFLE),
            epsilon_warmup: p.epsilon_warmup,
        },
        mapping_seed: derive_seed(cfg.seed, STREAM_MAPPING),
    }
}

pub fn train_prompt_variant(
    cfg: &ExperimentConfig,
    source: &ModelParams,
    data: &Datasets,
    variant: PromptVariant,
) -> Result<PromptRun> {
    train_prompt(
        source,
        &data.downstream_train,
        &prompt_config(cfg, variant),
        &monitor(cfg, &data.downstream_test),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f32,
    pub standard_accuracy: f32,
    pub adversarial_accuracy: f32,
    pub n_total: usize,
    pub n_correct: usize,
    pub n_survived_attack: usize,
}

/// Evaluates each ε and lists every place where adversarial accuracy rises
/// with a larger ε.
pub fn evaluate_grid<P: Pipeline + ?Sized>(
    pipeline: &P,
    data: &Dataset,
    epsilons: &[f32],
) -> Result<(Vec<EpsilonRow>, Vec<String>)> {
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let r = adversarial_accuracy(pipeline, data, &AttackConfig::new(epsilon)?)?;
        rows.push(EpsilonRow {
            epsilon,
            standard_accuracy: r.standard_accuracy,
            adversarial_accuracy: r.adversarial_accuracy,
            n_total: r.n_total,
            n_correct: r.n_correct,
            n_survived_attack: r.n_survived_attack,
        });
    }
    let mut sorted: Vec<&EpsilonRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let violations = sorted
        .windows(2)
        .filter(|w| w[1].n_survived_attack > w[0].n_survived_attack)
        .map(|w| {
            format!(
                "adversarial accuracy rose from {:.6} at eps={} to {:.6} at eps={}",
                w[0].adversarial_accuracy, w[0].epsilon, w[1].adversarial_accuracy, w[1].epsilon
            )
        })
        .collect();
    Ok((rows, violations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub source_regime: Regime,
    pub label_method: LabelMethod,
    pub temperature: usize,
    pub reduced_dim: usize,
    pub prompt_adversarial: bool,
    /// Source model on its own test split, at the monitor ε.
    pub source_eval: EvalReport,
    /// Prompted pipeline on the downstream test split.
    pub prompt_eval: Vec<EpsilonRow>,
    pub monotonicity_violations: Vec<String>,
    pub mapping: LabelMapping,
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Scores `prompt` against `source` over the ε grid and writes
/// `report.json`.
pub fn evaluate_prompt(
    cfg: &ExperimentConfig,
    source: &ModelParams,
    data: &Datasets,
    prompt: &VisualPrompt,
    temperature: Option<usize>,
    mapping: &LabelMapping,
) -> Result<ExperimentReport> {
    let reduction = temperature
        .map(|t| PblConfig::new(t, source.spec().n_classes))
        .transpose()?;
    let pipeline = PromptedPipeline::new(source, prompt, reduction, mapping)?;
    let (prompt_eval, violations) = evaluate_grid(&pipeline, &data.downstream_test, &cfg.eval.epsilons)?;
    for v in &violations {
        eprintln!("warning: {v}");
    }
    let source_eval = adversarial_accuracy(
        source,
        &data.source_test,
        &AttackConfig::new(cfg.eval.monitor_epsilon)?,
    )?;
    let report = ExperimentReport {
        seed: cfg.seed,
        source_regime: cfg.source.regime,
        label_method: cfg.prompt.lm,
        temperature: temperature.unwrap_or(1),
        reduced_dim: mapping.reduced_dim(),
        prompt_adversarial: cfg.prompt.adversarial,
        source_eval,
        prompt_eval,
        monotonicity_violations: violations,
        mapping: mapping.clone(),
    };
    ensure_dir(&cfg.output_dir)?;
    write_json(&report, &cfg.output_dir.join(REPORT))?;
    Ok(report)
}

/// Trains the prompt described by the config against `source`, writes the
/// prompt checkpoint, metrics and image, then evaluates it.
pub fn prompt_stage(
    cfg: &ExperimentConfig,
    source: &ModelParams,
    data: &Datasets,
) -> Result<ExperimentReport> {
    ensure_dir(&cfg.output_dir)?;
    let out = &cfg.output_dir;
    let run = train_prompt_variant(cfg, source, data, PromptVariant::from_config(cfg))?;
    let temperature = Some(cfg.prompt.temperature);
    run.prompt
        .save(&out.join(PROMPT_CHECKPOINT), temperature, &run.mapping)?;
    write_metrics(&run.records, &out.join(PROMPT_METRICS))?;
    export_prompt_image(&run.prompt, &out.join(PROMPT_IMAGE))?;
    evaluate_prompt(cfg, source, data, &run.prompt, temperature, &run.mapping)
}

/// Evaluates `<output_dir>/prompt.vpck` when present; otherwise trains it
/// first.
pub fn eval_stage(cfg: &ExperimentConfig, source: &ModelParams, data: &Datasets) -> Result<ExperimentReport> {
    let path = cfg.output_dir.join(PROMPT_CHECKPOINT);
    if !path.is_file() {
        return prompt_stage(cfg, source, data);
    }
    let (prompt, temperature, mapping) = VisualPrompt::load(&path)?;
    if prompt.canvas() != source.spec().input_size {
        return Err(Error::Config(format!(
            "prompt {} was trained for a {:?} canvas, source expects {:?}",
            path.display(),
            prompt.canvas(),
            source.spec().input_size
        )));
    }
    evaluate_prompt(cfg, source, data, &prompt, temperature, &mapping)
}

/// Full pipeline from configuration alone: source (trained, or loaded from
/// `source.checkpoint`), prompt, evaluation grid, and every artifact.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let source = match &cfg.source.checkpoint {
        Some(_) => obtain_source(cfg, &data)?,
        None => source_stage(cfg, &data)?.0,
    };
    prompt_stage(cfg, &source, &data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: usize,
    pub reduced_dim: usize,
    pub std_acc: f32,
    pub adv_acc: f32,
    /// Accuracy minus the run without a reduction stage.
    pub std_delta: f32,
    pub adv_delta: f32,
    /// Delta relative to the baseline value (0 when the baseline is 0).
    pub std_rate: f32,
    pub adv_rate: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    /// The same run with the reduction stage removed.
    pub baseline: EvalReport,
    pub rows: Vec<SweepRow>,
}

fn rate(delta: f32, base: f32) -> f32 {
    if base > 0.0 {
        delta / base
    } else {
        0.0
    }
}

/// Trains one prompt per temperature plus a baseline with the reduction
/// stage removed, all with identical seeds, and scores each at the monitor
/// ε relative to that baseline.
pub fn sweep_temperature(
    cfg: &ExperimentConfig,
    source: &ModelParams,
    data: &Datasets,
    temperatures: &[usize],
) -> Result<Sweep> {
    let attack = AttackConfig::new(cfg.eval.monitor_epsilon)?;
    let n = source.spec().n_classes;
    for &t in temperatures {
        PblConfig::new(t, n)?.check_classes(data.downstream_train.classes())?;
    }
    let score = |temperature: Option<usize>| -> Result<(usize, EvalReport)> {
        let variant = PromptVariant {
            temperature,
            adversarial: cfg.prompt.adversarial,
            lm: cfg.prompt.lm,
        };
        let run = train_prompt_variant(cfg, source, data, variant)?;
        let report = adversarial_accuracy(&run.pipeline(source)?, &data.downstream_test, &attack)?;
        Ok((run.mapping.reduced_dim(), report))
    };
    let (_, baseline) = score(None)?;
    let mut rows = Vec::with_capacity(temperatures.len());
    for &t in temperatures {
        let (m, r) = score(Some(t))?;
        let std_delta = r.standard_accuracy - baseline.standard_accuracy;
        let adv_delta = r.adversarial_accuracy - baseline.adversarial_accuracy;
        rows.push(SweepRow {
            temperature: t,
            reduced_dim: m,
            std_acc: r.standard_accuracy,
            adv_acc: r.adversarial_accuracy,
            std_delta,
            adv_delta,
            std_rate: rate(std_delta, baseline.standard_accuracy),
            adv_rate: rate(adv_delta, baseline.adversarial_accuracy),
        });
    }
    Ok(Sweep { baseline, rows })
}

pub fn format_sweep(sweep: &Sweep) -> String {
    let mut out = String::from("temperature,m,std_acc,adv_acc,std_delta,adv_delta,std_rate,adv_rate\n");
    for r in &sweep.rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.temperature,
            r.reduced_dim,
            r.std_acc,
            r.adv_acc,
            r.std_delta,
            r.adv_delta,
            r.std_rate,
            r.adv_rate
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub pbl: bool,
    pub adversarial_training: bool,
    pub temperature: usize,
    pub std_acc: f32,
    pub adv_acc: f32,
    pub wall_ms_per_epoch: f64,
    pub peak_mem_bytes: u64,
    pub records: Vec<MetricsRecord>,
}

/// Temperature used for the loosened cells of the ablation: the configured
/// one when above 1, else the first sweep temperature above 1.
pub fn ablation_temperature(cfg: &ExperimentConfig) -> Result<usize> {
    if cfg.prompt.temperature > 1 {
        return Ok(cfg.prompt.temperature);
    }
    cfg.sweep
        .temperatures
        .iter()
        .copied()
        .find(|&t| t > 1)
        .ok_or_else(|| Error::Config("ablation needs a temperature above 1 in prompt or sweep".into()))
}

/// The {without, with} loosening × {without, with} adversarial prompt
/// training grid, in that row order.
pub fn ablation(cfg: &ExperimentConfig, source: &ModelParams, data: &Datasets) -> Result<Vec<AblationCell>> {
    let t = ablation_temperature(cfg)?;
    let attack = AttackConfig::new(cfg.eval.monitor_epsilon)?;
    let mut cells = Vec::with_capacity(4);
    for adversarial in [false, true] {
        for pbl in [false, true] {
            let temperature = if pbl { t } else { 1 };
            let variant = PromptVariant {
                temperature: Some(temperature),
                adversarial,
                lm: cfg.prompt.lm,
            };
            let run = train_prompt_variant(cfg, source, data, variant)?;
            let r = adversarial_accuracy(&run.pipeline(source)?, &data.downstream_test, &attack)?;
            let epochs = run.records.len() as f64;
            cells.push(AblationCell {
                pbl,
                adversarial_training: adversarial,
                temperature,
                std_acc: r.standard_accuracy,
                adv_acc: r.adversarial_accuracy,
                wall_ms_per_epoch: run.records.iter().map(|m| m.wall_ms as f64).sum::<f64>() / epochs,
                peak_mem_bytes: run.records.iter().map(|m| m.peak_mem_bytes).max().unwrap_or(0),
                records: run.records,
            });
        }
    }
    Ok(cells)
}

pub fn format_ablation(cells: &[AblationCell]) -> String {
    let mut out = String::from(
        "pbl,adversarial_training,temperature,std_acc,adv_acc,wall_ms_per_epoch,peak_mem_bytes\n",
    );
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.3},{}",
            c.pbl,
            c.adversarial_training,
            c.temperature,
            c.std_acc,
            c.adv_acc,
            c.wall_ms_per_epoch,
            c.peak_mem_bytes
        );
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
