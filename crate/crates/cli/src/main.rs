//! `mafl`: synthesize bundles, train, evaluate and gradient-check.
//!
//! Exit codes: 0 success, 1 gradient check failed, 2 configuration error,
//! 3 data or I/O error, 4 internal contract violation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use mafl_core::config::RunConfigFile;
use mafl_core::data::{read_bundle, split_bundle, synth_generate, write_bundle};
use mafl_core::gradcheck_suite::{run_suite, TOLERANCE};
use mafl_core::metrics::{bias_leakage_probe, evaluate_grouped, pca_project_2d, GroupKey, ProbeConfig, ProbeSummary};
use mafl_core::model::{load_checkpoint, save_checkpoint};
use mafl_core::training::{Trainer, BEST_CHECKPOINT};
use mafl_core::MaflError;

const LAST_CHECKPOINT: &str = "last.ckpt";
const REPORT_FILE: &str = "report.json";
const CONFIG_FILE: &str = "config.json";

#[derive(Parser)]
#[command(name = "mafl", version, about = "Adversarial debiasing of authenticity detectors on precomputed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding bundle.
    Synth(SynthArgs),
    /// Train on a bundle and write checkpoints plus a report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a bundle, grouped by source.
    Eval(EvalArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Run configuration (JSON); only the `synth` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the bundle.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `synth.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Bundle directory or its bundle.json.
    #[arg(long)]
    data: PathBuf,
    /// Run configuration (JSON); `model`, `train` and `val_fraction` are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report.json, best.ckpt, last.ckpt and config.json.
    #[arg(long)]
    out: PathBuf,
    /// Loss toggles applied on top of the config, e.g. `entropy=off,reverse=off`.
    #[arg(long)]
    toggle: Option<String>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Bundle directory or its bundle.json.
    #[arg(long)]
    data: PathBuf,
    /// generator_id or source_name.
    #[arg(long, default_value = "generator_id")]
    group_by: String,
    /// JSON report path; the CSV table is written next to it with a .csv extension.
    #[arg(long)]
    report: PathBuf,
    /// Seed for the probe splits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Perturbs the analytic gradient so the check must fail.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

fn exit_code(e: &MaflError) -> u8 {
    match e {
        MaflError::Config(_) => 2,
        MaflError::Contract(_) | MaflError::State(_) | MaflError::Numeric(_) | MaflError::Dimension { .. } => 4,
        _ => 3,
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> mafl_core::Result<()> {
    fs::write(path, bytes).map_err(|e| MaflError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> mafl_core::Result<()> {
    fs::create_dir_all(dir).map_err(|e| MaflError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn synth(args: SynthArgs) -> mafl_core::Result<u8> {
    let mut cfg = RunConfigFile::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.synth.seed = seed;
    }
    cfg.validate()?;
    let bundle = synth_generate(&cfg.synth)?;
    let manifest = write_bundle(&bundle, &args.out)?;
    write(&args.out.join(CONFIG_FILE), cfg.to_json()?)?;
    info!("effective config:\n{}", cfg.to_json()?.trim_end());
    println!("wrote {} samples to {}", bundle.len(), manifest.display());
    Ok(0)
}

fn train(args: TrainArgs) -> mafl_core::Result<u8> {
    let mut cfg = RunConfigFile::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(t) = &args.toggle {
        cfg.train.loss_toggles.apply(t)?;
    }
    cfg.validate()?;
    let data = read_bundle(&args.data)?;
    let spec = cfg
        .model
        .spec(data.dim(), data.generator_count(), data.content_count())?;
    let v = cfg.val_fraction;
    let (train, val, _) = split_bundle(&data, [1.0 - v, v, 0.0], cfg.train.seed)?;
    info!("training on {} samples, validating on {}", train.len(), val.len());

    let mut trainer = Trainer::new(&cfg.train, &spec, &train, &val)?;
    trainer.pretrain()?;
    while !trainer.is_finished() {
        let e = trainer.run_epoch()?;
        println!(
            "epoch {:>3}  lambda {:.3}  lr {:.2e}  cls {:.4}  adv {:.4}  bias_ce {:.4}  val_acc {:.4}  val_ap {:.4}",
            e.epoch, e.lambda, e.lr, e.losses.cls, e.losses.adv, e.bias_ce, e.val.acc, e.val.ap
        );
    }
    let out = trainer.finish()?;
    create_dir(&args.out)?;
    write(&args.out.join(CONFIG_FILE), cfg.to_json()?)?;
    write(&args.out.join(REPORT_FILE), out.report.to_json()?)?;
    save_checkpoint(&out.best, &args.out.join(BEST_CHECKPOINT))?;
    save_checkpoint(&out.last, &args.out.join(LAST_CHECKPOINT))?;
    match (out.report.best_epoch, out.report.best_val_acc) {
        (Some(e), Some(acc)) => println!("best epoch {e}  val_acc {acc:.4}"),
        _ => println!("no epoch selected"),
    }
    info!("wrote {}", args.out.display());
    Ok(0)
}

fn eval(args: EvalArgs) -> mafl_core::Result<u8> {
    let key: GroupKey = args.group_by.parse()?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let data = read_bundle(&args.data)?;
    let model = &ck.model;
    if data.dim() != model.spec.embed_dim {
        return Err(MaflError::Data(format!(
            "bundle {} has dim {} but checkpoint {} expects {}",
            args.data.display(),
            data.dim(),
            args.checkpoint.display(),
            model.spec.embed_dim
        )));
    }
    let scores = model.fake_scores(&data.matrix)?;
    let mut report = evaluate_grouped(&scores, &data.labels, key)?;

    let h = model.extract_features(&data.matrix)?;
    let probe = ProbeConfig::default();
    let fakes: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i].is_fake()).collect();
    let gens: Vec<usize> = fakes.iter().map(|&i| data.labels[i].generator_id as usize).collect();
    let contents: Vec<usize> = data.labels.iter().map(|l| l.content_id as usize).collect();
    let pattern = bias_leakage_probe(&h.select_rows(&fakes), &gens, data.generator_count(), args.seed, &probe);
    let content = bias_leakage_probe(&h, &contents, data.content_count(), args.seed, &probe);
    match (pattern, content) {
        (Ok(p), Ok(c)) => {
            report.probes = Some(ProbeSummary {
                pattern_probe_acc: p.accuracy,
                pattern_chance: p.chance,
                content_probe_acc: c.accuracy,
                content_chance: c.chance,
            })
        }
        (p, c) => {
            for e in [p.err(), c.err()].into_iter().flatten() {
                report.warnings.push(format!("probe skipped: {e}"));
            }
        }
    }
    match pca_project_2d(&h) {
        Ok(p) => report.projection = Some(p),
        Err(e) => report.warnings.push(format!("projection skipped: {e}")),
    }

    let json = serde_json::to_string_pretty(&report).map_err(|e| MaflError::Json {
        context: "eval report".into(),
        source: e,
    })?;
    if let Some(dir) = args.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write(&args.report, json + "\n")?;
    let csv_path = args.report.with_extension("csv");
    let csv = report.to_csv();
    write(&csv_path, &csv)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    println!("{}", csv.lines().last().unwrap_or_default());
    info!("wrote {} and {}", args.report.display(), csv_path.display());
    Ok(0)
}

fn gradcheck(args: GradcheckArgs) -> mafl_core::Result<u8> {
    let results = run_suite(args.seed, args.seeds, args.corrupt_gradient)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed { "ok" } else { "FAIL" };
        print!(
            "{:<10} seed {:<3} max_rel_err {:.3e}  checked {}  kinks {}  {status}",
            r.case.name(),
            r.seed,
            r.report.max_rel_error,
            r.report.checked,
            r.report.skipped_kinks
        );
        if !r.passed {
            failed += 1;
            match r.report.worst_index {
                Some(i) => print!("  worst coordinate {i}"),
                None => print!("  no coordinate checked"),
            }
        }
        println!();
    }
    if failed == 0 {
        println!("gradcheck passed: {} checks below {TOLERANCE:e}", results.len());
        Ok(0)
    } else {
        println!("gradcheck FAILED: {failed} of {} checks", results.len());
        Ok(1)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
