//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs as a plain binary (`harness = false`).

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use vplab::attack::{adversarial_accuracy, fgsm, AttackConfig};
use vplab::data::{Split, Style};
use vplab::harness::{
    self, prepare_data, run_experiment, train_prompt_variant, train_source, ExperimentConfig, PromptVariant,
    Regime,
};
use vplab::nets::Monitor;
use vplab::vp::{
    block_reduce, ilm_update, train_prompt, FrequencyMatrix, LabelMethod, PblConfig, PromptTrainConfig,
};
use vplab::Tensor;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let results = common::gradient_suite(1);
    let elapsed = start.elapsed();
    let worst = results
        .iter()
        .cloned()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    check(
        results.iter().all(|(_, e)| *e < common::GRAD_TOL) && elapsed < Duration::from_secs(120),
        format!(
            "{} ops × {} instances, worst rel err {:.2e} ({}), {:.1}s",
            results.len(),
            common::INSTANCES,
            worst.1,
            worst.0,
            elapsed.as_secs_f32()
        ),
    )
}

/// Dataset class counts and the block sizes reported against them.
const REPORTED_BLOCK_SIZES: [(&str, usize, usize); 8] = [
    ("Flowers102", 3, 102),
    ("DTD", 15, 47),
    ("SVHN", 10, 10),
    ("GTSRB", 10, 43),
    ("EuroSAT", 6, 10),
    ("OxfordPets", 15, 37),
    ("CIFAR-100", 4, 100),
    ("StanfordCars", 5, 196),
];

fn pbl_oracle() -> Outcome {
    let mut r = common::rng(2);
    let mut cases = 0;
    for n in [10, 100, 1000] {
        for t in [1, 3, 5, 10, 15, 20] {
            let rows = 4;
            // coarse integer values so ties inside blocks are frequent
            let v: Vec<f32> = (0..rows * n).map(|_| r.gen_range(-8..8) as f32).collect();
            let cfg = PblConfig::new(t, n).map_err(|e| e.to_string())?;
            let out = block_reduce(&Tensor::new(&[rows, n], v.clone()).unwrap(), &cfg)
                .map_err(|e| e.to_string())?;
            let m = n.div_ceil(t);
            let expect: Vec<f32> = common::ref_block_max(&common::to_f64(&v), n, t)
                .into_iter()
                .map(|x| x as f32)
                .collect();
            if cfg.reduced_dim() != m || out.shape() != [rows, m] || out.data() != expect.as_slice() {
                return Err(format!("mismatch at n={n} T={t}"));
            }
            cases += 1;
        }
    }
    for (name, t, classes) in REPORTED_BLOCK_SIZES {
        let cfg = PblConfig::new(t, 1000).unwrap();
        if cfg.reduced_dim() < classes || cfg.check_classes(classes).is_err() {
            return Err(format!("{name}: m={} < {classes} at T={t}", cfg.reduced_dim()));
        }
    }
    Ok(format!(
        "{cases} (n, T) cases exact, {} reported (dataset, T) pairs satisfy m ≥ K",
        REPORTED_BLOCK_SIZES.len()
    ))
}

fn baseline_equivalence() -> Outcome {
    let (source, _) = common::trained_toy(3);
    let train = common::toy_data(3, 20, 8, Style::Downstream, 30, Split::Train);
    let test = common::toy_data(3, 10, 8, Style::Downstream, 31, Split::Test);
    let monitor = Monitor {
        data: &test,
        attack: AttackConfig::new(0.05).unwrap(),
        timing: false,
    };
    let run = |temperature| {
        let cfg = PromptTrainConfig {
            pad_width: 2,
            label_method: LabelMethod::Ilm,
            temperature,
            adversarial: false,
            attack: AttackConfig::new(0.05).unwrap(),
            hyper: common::toy_hyper(2, 5),
            mapping_seed: 6,
        };
        train_prompt(&source, &train, &cfg, &monitor)
            .map(|r| r.records.iter().map(|x| x.loss.to_bits()).collect::<Vec<_>>())
    };
    let with = run(Some(1)).map_err(|e| e.to_string())?;
    let without = run(None).map_err(|e| e.to_string())?;
    check(
        with.len() == 2 && with == without,
        format!(
            "T=1 losses {:?} vs no reduction {:?}",
            with.iter().map(|b| f32::from_bits(*b)).collect::<Vec<_>>(),
            without.iter().map(|b| f32::from_bits(*b)).collect::<Vec<_>>()
        ),
    )
}

fn fgsm_contract() -> Outcome {
    let (model, test) = common::trained_toy(4);
    let mut r = common::rng(4);
    let mut checked = 0;
    while checked < 1000 {
        let n = 50;
        let mut x = common::uniform(&mut r, n * 144, 0.0, 1.0);
        for v in x.iter_mut() {
            // pin some pixels to the box edges
            match r.gen_range(0..10) {
                0 => *v = 0.0,
                1 => *v = 1.0,
                _ => {}
            }
        }
        let x = Tensor::new(&[n, 1, 12, 12], x).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..6)).collect();
        let eps = r.gen_range(0.0..0.3f32);
        let adv = fgsm(&model, &x, &labels, &AttackConfig::new(eps).unwrap()).map_err(|e| e.to_string())?;
        for (a, b) in adv.data().iter().zip(x.data()) {
            if (a - b).abs() > eps || !(0.0..=1.0).contains(a) {
                return Err(format!("bound violated: x={b} adv={a} ε={eps}"));
            }
        }
        let same = fgsm(&model, &x, &labels, &AttackConfig::new(0.0).unwrap()).map_err(|e| e.to_string())?;
        if same
            .data()
            .iter()
            .zip(x.data())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err("ε=0 changed the input".into());
        }
        checked += n;
    }
    let attack = AttackConfig::new(0.05).unwrap();
    let adv = fgsm(&model, test.images(), test.labels(), &attack).map_err(|e| e.to_string())?;
    let before = common::per_sample_loss(&model, test.images(), test.labels());
    let after = common::per_sample_loss(&model, &adv, test.labels());
    let up = before.iter().zip(&after).filter(|(b, a)| a >= b).count();
    let frac = up as f64 / before.len() as f64;
    check(
        frac >= 0.9,
        format!(
            "{checked} inputs within bounds, ε=0 identity, loss non-decreasing on {:.1}% of {}",
            100.0 * frac,
            before.len()
        ),
    )
}

fn protocol_fixture() -> Outcome {
    let attack = AttackConfig::new(0.1).unwrap();
    let data = common::pixel_dataset(&common::PROTOCOL_FIXTURE);
    let rep = adversarial_accuracy(&common::Threshold, &data, &attack).map_err(|e| e.to_string())?;
    let wrong: Vec<(f32, usize)> = common::PROTOCOL_FIXTURE
        .iter()
        .map(|&(x, y)| (x, 1 - y))
        .collect();
    let empty = adversarial_accuracy(&common::Threshold, &common::pixel_dataset(&wrong[..8]), &attack)
        .map_err(|e| e.to_string())?;
    check(
        rep.n_correct == 8
            && rep.n_survived_attack == 5
            && rep.adversarial_accuracy == 0.625
            && empty.n_correct == 0
            && empty.adversarial_accuracy == 0.0,
        format!(
            "{}/{} survived → {}; empty correct set → {}",
            rep.n_survived_attack, rep.n_correct, rep.adversarial_accuracy, empty.adversarial_accuracy
        ),
    )
}

/// `(std, adv)` at T = 1, 2, 4 for the standard and the robust source.
struct SeedGrid {
    seed: u64,
    standard: Vec<(f32, f32)>,
    robust: Vec<(f32, f32)>,
}

const GRID_T: [usize; 3] = [1, 2, 4];

fn desk_grid(seed: u64) -> vplab::Result<SeedGrid> {
    let mut cfg = ExperimentConfig::default().with_seed(seed);
    cfg.eval.record_timing = false;
    let data = prepare_data(&cfg)?;
    let attack = AttackConfig::new(cfg.eval.monitor_epsilon)?;
    let mut out = Vec::new();
    for regime in [Regime::Standard, Regime::Adversarial] {
        let (source, _) = train_source(&cfg, &data, regime)?;
        let mut row = Vec::new();
        for t in GRID_T {
            let variant = PromptVariant {
                temperature: Some(t),
                adversarial: false,
                lm: LabelMethod::Ilm,
            };
            let run = train_prompt_variant(&cfg, &source, &data, variant)?;
            let rep = adversarial_accuracy(&run.pipeline(&source)?, &data.downstream_test, &attack)?;
            row.push((rep.standard_accuracy, rep.adversarial_accuracy));
        }
        out.push(row);
    }
    let robust = out.pop().unwrap();
    let standard = out.pop().unwrap();
    Ok(SeedGrid {
        seed,
        standard,
        robust,
    })
}

fn mean(v: &[(f32, f32)]) -> (f32, f32) {
    let n = v.len() as f32;
    (
        v.iter().map(|x| x.0).sum::<f32>() / n,
        v.iter().map(|x| x.1).sum::<f32>() / n,
    )
}

fn inheritance(grids: &[SeedGrid], elapsed: Duration) -> Outcome {
    let mut wins = 0;
    let mut t1_wins = 0;
    let mut lines = Vec::new();
    for g in grids {
        let (s, r) = (mean(&g.standard), mean(&g.robust));
        let ok = r.1 > s.1 && r.0 < s.0;
        wins += ok as usize;
        t1_wins += (g.robust[0].1 > g.standard[0].1 && g.robust[0].0 < g.standard[0].0) as usize;
        lines.push(format!(
            "seed {}: standard {:.3}/{:.3} robust {:.3}/{:.3}",
            g.seed, s.0, s.1, r.0, r.1
        ));
    }
    check(
        wins >= 2 && elapsed < Duration::from_secs(900),
        format!(
            "{wins}/{} seeds (grid mean std/adv; {}), T=1 alone {t1_wins}/{}, {:.0}s",
            grids.len(),
            lines.join("; "),
            grids.len(),
            elapsed.as_secs_f32()
        ),
    )
}

fn pbl_benefit(grids: &[SeedGrid]) -> Outcome {
    let (mut all, mut strict, mut adv) = (true, 0, true);
    let mut lines = Vec::new();
    for g in grids {
        let base = g.robust[0];
        let (t, best) = if g.robust[1].0 >= g.robust[2].0 {
            (2, g.robust[1])
        } else {
            (4, g.robust[2])
        };
        all &= best.0 >= base.0 - 0.005;
        strict += (best.0 > base.0) as usize;
        adv &= best.1 >= base.1 - 0.05;
        lines.push(format!(
            "seed {}: T=1 {:.3}/{:.3}, T={t} {:.3}/{:.3}",
            g.seed, base.0, base.1, best.0, best.1
        ));
    }
    check(
        all && strict >= 2 && adv,
        format!(
            "strict gain in {strict}/{} seeds; {}",
            grids.len(),
            lines.join("; ")
        ),
    )
}

fn ilm_oracle() -> Outcome {
    let mut r = common::rng(8);
    for case in 0..100 {
        let k = r.gen_range(1..8);
        let m = r.gen_range(k..k + 8);
        let counts = common::random_counts(&mut r, k, m);
        let got = ilm_update(&FrequencyMatrix::new(counts.clone()).unwrap()).map_err(|e| e.to_string())?;
        let want = common::oracle_greedy(&counts, m);
        let mut seen = vec![false; m];
        let injective = got
            .as_slice()
            .iter()
            .all(|&j| !std::mem::replace(&mut seen[j], true));
        if got.as_slice() != want.as_slice() || !injective {
            return Err(format!(
                "case {case}: {:?} vs oracle {want:?} on {counts:?}",
                got.as_slice()
            ));
        }
    }
    Ok("100 random frequency matrices match the brute-force greedy; all injective".into())
}

fn reproducibility() -> Outcome {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let mut cfg = ExperimentConfig::default()
            .with_seed(11)
            .with_output_dir(d.path());
        cfg.eval.record_timing = false;
        run_experiment(&cfg).map_err(|e| e.to_string())?;
    }
    let files = [
        harness::SOURCE_METRICS,
        harness::PROMPT_METRICS,
        harness::SOURCE_CHECKPOINT,
        harness::PROMPT_CHECKPOINT,
    ];
    for f in files {
        let a = fs::read(dirs[0].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = fs::read(dirs[1].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        if a != b {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok(format!("{} bitwise identical across two runs", files.join(", ")))
}

fn ablation_structure() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default().with_output_dir(dir.path());
    let data = prepare_data(&cfg).map_err(|e| e.to_string())?;
    let source = harness::obtain_source(&cfg, &data).map_err(|e| e.to_string())?;
    let cells = harness::ablation(&cfg, &source, &data).map_err(|e| e.to_string())?;
    let table = harness::format_ablation(&cells);
    let slowest_plain = cells
        .iter()
        .filter(|c| !c.adversarial_training)
        .map(|c| c.wall_ms_per_epoch)
        .fold(0.0, f64::max);
    let fastest_at = cells
        .iter()
        .filter(|c| c.adversarial_training)
        .map(|c| c.wall_ms_per_epoch)
        .fold(f64::INFINITY, f64::min);
    let grid: Vec<_> = cells.iter().map(|c| (c.pbl, c.adversarial_training)).collect();
    check(
        cells.len() == 4
            && table.lines().count() == 5
            && grid.contains(&(false, false))
            && grid.contains(&(true, false))
            && grid.contains(&(false, true))
            && grid.contains(&(true, true))
            && fastest_at > slowest_plain,
        format!(
            "4-cell table emitted; AT min {fastest_at:.1} ms/epoch vs non-AT max {slowest_plain:.1} ms/epoch"
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n, name, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS criterion {n} ({name}): {d}"),
            Err(d) => println!("FAIL criterion {n} ({name}): {d}"),
        }
        results.push((n, name, outcome));
    };
    report(1, "gradient suite", guarded(gradient_suite));
    report(2, "PBL oracle", guarded(pbl_oracle));
    report(3, "baseline equivalence", guarded(baseline_equivalence));
    report(4, "FGSM contract", guarded(fgsm_contract));
    report(5, "protocol fixture", guarded(protocol_fixture));

    let start = Instant::now();
    let grids = catch_unwind(|| (0..3).map(desk_grid).collect::<vplab::Result<Vec<_>>>());
    let elapsed = start.elapsed();
    match grids {
        Ok(Ok(grids)) => {
            report(
                6,
                "robustness inheritance",
                guarded(|| inheritance(&grids, elapsed)),
            );
            report(7, "PBL benefit", guarded(|| pbl_benefit(&grids)));
        }
        Ok(Err(e)) => {
            report(6, "robustness inheritance", Err(e.to_string()));
            report(7, "PBL benefit", Err(e.to_string()));
        }
        Err(_) => {
            report(6, "robustness inheritance", Err("panicked".into()));
            report(7, "PBL benefit", Err("panicked".into()));
        }
    }

    report(8, "ILM oracle", guarded(ilm_oracle));
    report(9, "reproducibility", guarded(reproducibility));
    report(10, "AT ablation structure", guarded(ablation_structure));

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
