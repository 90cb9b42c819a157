use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use memsum_dqa::autodiff::GradChecker;
use memsum_dqa::corpus::{parse_dataset, Dataset, Vocabulary, L_CAP};
use memsum_dqa::diagnostics::{grad_suite, CheckDims, GRAD_TOLERANCE};
use memsum_dqa::encoders::Hyperparams;
use memsum_dqa::eval::{ema, gen_synthetic_range};
use memsum_dqa::policy::{extract, read_predictions, write_predictions, PredictionRecord, StepDecision};
use memsum_dqa::training::{train_with_progress, Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(
    name = "memsum-dqa",
    version,
    about = "Extractive document QA by sequential block selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from a dataset.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        min_freq: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write the best-validation checkpoint.
    Train(TrainArgs),
    /// Answer every question of a dataset.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step decisions, one JSON record per question.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score predictions against gold answers.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = L_CAP)]
        l_cap: usize,
    },
    /// Compare analytic and finite-difference gradients.
    GradCheck {
        #[arg(long, value_enum, default_value_t = Dims::Small)]
        dims: Dims,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset.
    GenSynthetic {
        #[arg(long)]
        n_docs: usize,
        #[arg(long)]
        blocks: usize,
        #[arg(long)]
        seed: u64,
        /// Index of the first document, for disjoint splits of one corpus.
        #[arg(long, default_value_t = 0)]
        first_doc: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dims {
    Tiny,
    Small,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds both initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    stop_loss_weight: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    lse_hidden: Option<usize>,
    #[arg(long)]
    gce_hidden: Option<usize>,
    #[arg(long)]
    ehe_layers: Option<usize>,
    #[arg(long)]
    ehe_heads: Option<usize>,
    #[arg(long)]
    score_hidden: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    p_stop_threshold: Option<f64>,
    #[arg(long)]
    t_cap: Option<usize>,
    #[arg(long)]
    l_cap: Option<usize>,
}

/// Exit status 2 for I/O failures anywhere in the chain, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<std::io::Error>()) {
        2
    } else {
        1
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn build_vocab(data: &Path, min_freq: usize, out: &Path) -> Result<()> {
    anyhow::ensure!(min_freq > 0, "--min-freq must be positive");
    let instances = parse_dataset(data, L_CAP)?;
    let vocab = Vocabulary::build(&instances.items, min_freq)?;
    vocab.save(out)?;
    println!("{} tokens -> {}", vocab.len(), out.display());
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let vocab = Vocabulary::load(&a.vocab)?;
    let mut hp = Hyperparams::new(vocab.len());
    if let Some(s) = a.seed {
        cfg.seed = s;
        hp.seed = s;
    }
    macro_rules! set {
        ($target:expr, $($field:ident),*) => {
            $(if let Some(v) = a.$field { $target.$field = v; })*
        };
    }
    set!(cfg, epochs, batch_size, stop_loss_weight, clip_norm, learning_rate);
    set!(
        hp,
        embed_dim,
        lse_hidden,
        gce_hidden,
        ehe_layers,
        ehe_heads,
        score_hidden,
        n_max,
        p_stop_threshold,
        t_cap,
        l_cap
    );
    cfg.validate()?;
    hp.validate()?;

    let train = parse_dataset(&a.data, hp.l_cap)?;
    let val = parse_dataset(&a.val, hp.l_cap)?;
    let outcome = train_with_progress::<f32>(&train.items, &val.items, &vocab, &hp, &cfg, |s| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val EMA {:.2}",
            s.epoch, s.mean_loss, s.val_ema
        );
    })?;
    if outcome.skipped_truncated > 0 || outcome.gold_overflow > 0 {
        eprintln!(
            "skipped {} truncated instances, cut {} gold sets to n_max",
            outcome.skipped_truncated, outcome.gold_overflow
        );
    }
    outcome.checkpoint.save(&a.out)?;
    let m = &outcome.checkpoint.meta;
    println!(
        "best epoch {} (val EMA {:.2}) -> {}",
        m.epoch,
        m.val_ema,
        a.out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct TraceRecord<'a> {
    qid: &'a str,
    steps: &'a [StepDecision],
}

fn run_extract(model: &Path, data: &Path, out: &Path, trace: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(model, None)?;
    let instances = parse_dataset(data, ckpt.hyperparams.l_cap)?;
    let mut records = Vec::with_capacity(instances.items.len());
    let mut traces = String::new();
    for inst in &instances.items {
        let answer = extract(inst, &ckpt.params, &ckpt.hyperparams, &ckpt.vocab)?;
        if trace.is_some() {
            let rec = TraceRecord {
                qid: &answer.qid,
                steps: &answer.trace,
            };
            traces.push_str(&serde_json::to_string(&rec)?);
            traces.push('\n');
        }
        records.push(PredictionRecord::from(&answer));
    }
    write_file(out, &write_predictions(&records))?;
    if let Some(t) = trace {
        write_file(t, &traces)?;
    }
    if instances.truncated_docs > 0 {
        eprintln!(
            "{} documents truncated to {} blocks",
            instances.truncated_docs, ckpt.hyperparams.l_cap
        );
    }
    println!("{} predictions -> {}", records.len(), out.display());
    Ok(())
}

fn run_evaluate(pred: &Path, gold: &Path, report: Option<&Path>, l_cap: usize) -> Result<()> {
    let text = std::fs::read_to_string(pred).with_context(|| format!("reading {}", pred.display()))?;
    let preds = read_predictions(&text)?;
    let golds = parse_dataset(gold, l_cap)?;
    let r = ema(&preds, &golds.items)?;
    if r.missing_predictions > 0 {
        eprintln!("warning: {} questions have no prediction", r.missing_predictions);
    }
    println!("{r}");
    if let Some(p) = report {
        write_file(p, &(r.to_json() + "\n"))?;
    }
    Ok(())
}

fn run_grad_check(dims: Dims, seed: u64) -> Result<bool> {
    let dims = match dims {
        Dims::Tiny => CheckDims::Tiny,
        Dims::Small => CheckDims::Small,
    };
    let cases = grad_suite(dims, seed, &GradChecker::default())?;
    let mut worst: f64 = 0.0;
    for c in &cases {
        worst = worst.max(c.report.max_rel_error);
        println!(
            "{:<20} {:.3e}  ({} coords){}",
            c.name,
            c.report.max_rel_error,
            c.report.coords_checked,
            if c.passed() { "" } else { "  FAIL" }
        );
    }
    println!("max relative error {worst:.3e} (tolerance {GRAD_TOLERANCE:e})");
    Ok(cases.iter().all(|c| c.passed()))
}

fn run_gen(n_docs: usize, blocks: usize, seed: u64, first: u64, out: &Path) -> Result<()> {
    let ds: Dataset = gen_synthetic_range(first, n_docs, blocks, seed)?;
    ds.save(out)?;
    println!(
        "{} documents, {} questions -> {}",
        ds.documents.len(),
        ds.question_count(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::BuildVocab { data, min_freq, out } => build_vocab(&data, min_freq, &out)?,
        Command::Train(a) => run_train(&a)?,
        Command::Extract {
            model,
            data,
            out,
            trace,
        } => run_extract(&model, &data, &out, trace.as_deref())?,
        Command::Evaluate {
            pred,
            gold,
            report,
            l_cap,
        } => run_evaluate(&pred, &gold, report.as_deref(), l_cap)?,
        Command::GradCheck { dims, seed } => return run_grad_check(dims, seed),
        Command::GenSynthetic {
            n_docs,
            blocks,
            seed,
            first_doc,
            out,
        } => run_gen(n_docs, blocks, seed, first_doc, &out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
