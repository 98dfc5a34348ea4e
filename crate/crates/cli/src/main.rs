use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use depth_ood::experiment::{
    eval_sets, load_eval_data, load_train_samples, prepare_models, render_report, run_experiment, score_all,
    unix_now, EvaluationReport, ExperimentConfig, Needs, ReportMeta,
};
use depth_ood::model::{DepthModel, Variant};
use depth_ood::scoring::{read_scores_csv, write_scores_csv, Method};
use depth_ood::train::{train_autoencoder, train_depth_model, train_image_decoder, train_joint, TrainLog};

#[derive(Parser)]
#[command(name = "depth-ood", version, about = "Reconstruction-based OOD detection for depth models")]
struct Cli {
    /// Output root for checkpoints, logs, scores and reports.
    #[arg(long, global = true, env = "DEPTH_OOD_OUTPUT", default_value = "runs")]
    output: PathBuf,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Plain,
    Heteroscedastic,
    Dropout,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    /// Joint depth and reconstruction training.
    Sim,
    /// Encoder and decoder trained from scratch for reconstruction.
    Ae,
}

#[derive(Subcommand)]
enum Command {
    /// Train a depth model.
    TrainDepth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "plain")]
        variant: VariantArg,
        /// Checkpoint path (default: <output>/checkpoints/<depth|log|drop>.bin).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an image decoder on a frozen depth model's encoder features.
    TrainDecoder {
        #[arg(long)]
        config: PathBuf,
        /// Depth checkpoint (default: `checkpoint.depth` from the config).
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an ablation model pair.
    Ablate {
        #[arg(value_enum)]
        kind: Ablation,
        #[arg(long)]
        config: PathBuf,
    },
    /// Score the evaluation sets; models without a checkpoint are trained.
    Score {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated methods (default: `eval.methods` from the config).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
    },
    /// Train what is missing, score every method and write the report.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build a report from score CSVs (one file per OOD set).
    Report {
        /// Directory of `<ood_set>.csv` score files (default: <output>/scores).
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Config used for the report metadata.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn checkpoint_path(output: &Path, out: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let path = out.unwrap_or_else(|| output.join("checkpoints").join(format!("{name}.bin")));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(path)
}

fn append_log(output: &Path, harness: &str, log: &TrainLog) -> Result<()> {
    std::fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    log.append_to(&output.join("train.jsonl"), harness)?;
    println!("{harness}: {} epochs, final loss {:.6}", log.losses.len(), log.final_loss());
    Ok(())
}

fn train_depth(output: &Path, config: &Path, variant: VariantArg, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    let (variant, name) = match variant {
        VariantArg::Plain => (Variant::Plain, "depth"),
        VariantArg::Heteroscedastic => (Variant::Heteroscedastic, "log"),
        VariantArg::Dropout => (Variant::Dropout, "drop"),
    };
    let data = load_train_samples(&cfg)?;
    let (model, log) = train_depth_model(&data, &cfg.train_config(name), &cfg.model_config().with_variant(variant))?;
    let path = checkpoint_path(output, out, name)?;
    model.save(&path)?;
    append_log(output, name, &log)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn train_decoder(output: &Path, config: &Path, depth: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    let depth = match depth.or_else(|| cfg.checkpoint("depth").map(Path::to_path_buf)) {
        Some(p) => p,
        None => bail!("no depth checkpoint: pass --depth or set checkpoint.depth"),
    };
    let model = DepthModel::load(&depth)?;
    let images: Vec<_> = load_train_samples(&cfg)?.into_iter().map(|s| s.image).collect();
    let (decoder, log) = train_image_decoder(&model, &images, &cfg.train_config("decoder"))?;
    let path = checkpoint_path(output, out, "decoder")?;
    decoder.save(&path)?;
    append_log(output, "decoder", &log)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn ablate(output: &Path, config: &Path, kind: Ablation) -> Result<()> {
    let cfg = load_config(config)?;
    let data = load_train_samples(&cfg)?;
    match kind {
        Ablation::Sim => {
            let (model, decoder, log) = train_joint(&data, &cfg.train_config("sim"), &cfg.model_config())?;
            let (m, d) = (checkpoint_path(output, None, "sim_model")?, checkpoint_path(output, None, "sim_decoder")?);
            model.save(&m)?;
            decoder.save(&d)?;
            append_log(output, "sim", &log)?;
            println!("wrote {} and {}", m.display(), d.display());
        }
        Ablation::Ae => {
            let images: Vec<_> = data.into_iter().map(|s| s.image).collect();
            let (ae, log) = train_autoencoder(&images, &cfg.train_config("ae"), &cfg.model_config())?;
            let (e, d) = (checkpoint_path(output, None, "ae_encoder")?, checkpoint_path(output, None, "ae_decoder")?);
            ae.save(&e, &d)?;
            append_log(output, "ae", &log)?;
            println!("wrote {} and {}", e.display(), d.display());
        }
    }
    Ok(())
}

fn score(output: &Path, config: &Path, methods: Vec<Method>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if !methods.is_empty() {
        cfg.eval.methods = methods;
        cfg.eval.methods.sort();
        cfg.eval.methods.dedup();
    }
    let models = prepare_models(&cfg, Needs::for_methods(&cfg.eval.methods), Some(output))?;
    let data = load_eval_data(&cfg)?;
    let records = score_all(&cfg, &models, &eval_sets(&cfg, &data)?)?;
    let dir = output.join("scores");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (set, rs) in &records {
        let path = dir.join(format!("{set}.csv"));
        write_scores_csv(&path, rs)?;
        println!("wrote {} ({} rows)", path.display(), rs.len());
    }
    Ok(())
}

fn print_summary(report: &EvaluationReport) {
    println!("{:<8} {:<16} {:>7} {:>7} {:>7} {:>7}", "method", "ood_set", "AUROC", "AUPRS", "AUPRE", "FPR95");
    for (method, sets) in &report.ood {
        for (set, m) in sets {
            println!(
                "{method:<8} {set:<16} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
                100.0 * m.auroc,
                100.0 * m.auprs,
                100.0 * m.aupre,
                100.0 * m.fpr95
            );
        }
    }
    if !report.depth.is_empty() {
        println!("{:<16} {:>8} {:>8} {:>8}", "depth set", "AbsRel", "RMSE", "delta1");
        for (set, m) in &report.depth {
            println!("{set:<16} {:>8.4} {:>8.4} {:>8.4}", m.abs_rel, m.rmse, m.delta1);
        }
    }
}

fn evaluate(output: &Path, config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let out = run_experiment(&cfg, Some(output))?;
    print_summary(&out.report);
    println!("wrote {}", output.join("report.json").display());
    Ok(())
}

fn report(output: &Path, scores: Option<PathBuf>, config: Option<PathBuf>) -> Result<()> {
    let scores = scores.unwrap_or_else(|| output.join("scores"));
    let meta = match config {
        Some(path) => {
            let cfg = load_config(&path)?;
            ReportMeta {
                seed: cfg.seed,
                config_digest: cfg.digest(),
                timestamp: unix_now(),
            }
        }
        None => ReportMeta {
            seed: 0,
            config_digest: String::new(),
            timestamp: unix_now(),
        },
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&scores)
        .with_context(|| format!("reading {}", scores.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    files.sort();
    if files.is_empty() {
        bail!("no score CSVs in {}", scores.display());
    }
    let mut report = EvaluationReport::new(meta);
    for path in &files {
        let set = path.file_stem().and_then(|s| s.to_str()).context("score file name is not UTF-8")?;
        report.add_scores(set, &read_scores_csv(path)?)?;
    }
    render_report(&report, output)?;
    print_summary(&report);
    println!("wrote {}", output.join("report.json").display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    info!("output root {}", cli.output.display());
    let output = cli.output.as_path();
    match cli.command {
        Command::TrainDepth { config, variant, out } => train_depth(output, &config, variant, out),
        Command::TrainDecoder { config, depth, out } => train_decoder(output, &config, depth, out),
        Command::Ablate { kind, config } => ablate(output, &config, kind),
        Command::Score { config, methods } => score(output, &config, methods),
        Command::Evaluate { config } => evaluate(output, &config),
        Command::Report { scores, config } => report(output, scores, config),
    }
}
