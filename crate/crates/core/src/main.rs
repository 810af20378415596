use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vplab::harness::{self, ExperimentConfig, ABLATION_TABLE, SWEEP_TABLE};
use vplab::Result;

#[derive(Parser)]
#[command(
    name = "vplab",
    version,
    about = "Visual prompting on standard and robust source models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, value_name = "PATH", global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "U64", global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, value_name = "DIR", global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the source classifier and write source.vpck + source_metrics.csv.
    TrainSource(Common),
    /// Train the configured prompt (reusing <out>/source.vpck when present).
    TrainPrompt(Common),
    /// Evaluate <out>/prompt.vpck over the ε grid and write report.json.
    Eval(Common),
    /// Sweep the temperature against the no-reduction baseline; writes sweep_T.csv.
    #[command(name = "sweep-T")]
    SweepT {
        #[command(flatten)]
        common: Common,
        /// Comma-separated temperatures; defaults to sweep.temperatures.
        #[arg(long, value_delimiter = ',')]
        temperatures: Option<Vec<usize>>,
    },
    /// Run the {±PBL}×{±AT} prompt ablation; writes ablation.csv.
    Report(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg = cfg.with_output_dir(out);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainSource(common) => {
            let cfg = load(&common)?;
            let data = harness::prepare_data(&cfg)?;
            let (_, records) = harness::source_stage(&cfg, &data)?;
            let last = records.last().expect("at least one epoch");
            println!(
                "source: std_acc {:.4} adv_acc {:.4} after {} epochs -> {}",
                last.std_acc,
                last.adv_acc,
                last.epoch,
                cfg.output_dir.display()
            );
        }
        Command::TrainPrompt(common) => {
            let cfg = load(&common)?;
            let data = harness::prepare_data(&cfg)?;
            let source = harness::obtain_source(&cfg, &data)?;
            print_report(&harness::prompt_stage(&cfg, &source, &data)?);
        }
        Command::Eval(common) => {
            let cfg = load(&common)?;
            let data = harness::prepare_data(&cfg)?;
            let source = harness::obtain_source(&cfg, &data)?;
            print_report(&harness::eval_stage(&cfg, &source, &data)?);
        }
        Command::SweepT { common, temperatures } => {
            let cfg = load(&common)?;
            let temperatures = temperatures.unwrap_or_else(|| cfg.sweep.temperatures.clone());
            let data = harness::prepare_data(&cfg)?;
            let source = harness::obtain_source(&cfg, &data)?;
            let sweep = harness::sweep_temperature(&cfg, &source, &data, &temperatures)?;
            let table = harness::format_sweep(&sweep);
            harness::write_text(&cfg.output_dir.join(SWEEP_TABLE), &table)?;
            print!("{table}");
        }
        Command::Report(common) => {
            let cfg = load(&common)?;
            let data = harness::prepare_data(&cfg)?;
            let source = harness::obtain_source(&cfg, &data)?;
            let cells = harness::ablation(&cfg, &source, &data)?;
            let table = harness::format_ablation(&cells);
            harness::write_text(&cfg.output_dir.join(ABLATION_TABLE), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn print_report(report: &harness::ExperimentReport) {
    println!("epsilon,std_acc,adv_acc,n_correct,n_survived");
    for row in &report.prompt_eval {
        println!(
            "{},{:.6},{:.6},{},{}",
            row.epsilon,
            row.standard_accuracy,
            row.adversarial_accuracy,
            row.n_correct,
            row.n_survived_attack
        );
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
