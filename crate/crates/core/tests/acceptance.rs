//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeSet, HashSet};
use std::hash::{Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use memsum_dqa::autodiff::{relative_error, GradChecker, Scalar};
use memsum_dqa::corpus::{CorpusError, Dataset, PrefixedSentence, Vocabulary, L_CAP};
use memsum_dqa::diagnostics::{grad_suite, CheckDims, GRAD_TOLERANCE};
use memsum_dqa::encoders::{Hyperparams, ModelError, ModelParams};
use memsum_dqa::eval::{ema, exact_match, gen_synthetic, EvalError, EvalReport};
use memsum_dqa::policy::{
    read_predictions, run_extraction, DecodeConfig, ExtractionState, ModelScorer, PredictionRecord, StepScorer,
    StepScores,
};
use memsum_dqa::training::{Checkpoint, CheckpointError, TrainConfig, TrainingMeta, FORMAT_VERSION};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient checks

const GRAD_SEEDS: u64 = 5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const REQUIRED_CASES: [&str; 7] = [
    "lse",
    "gce",
    "ehe",
    "score_head",
    "stop_head",
    "instance_loss",
    "matmul",
];

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let checker = GradChecker::default();
    check(checker.eps == 1e-5, || format!("eps {}", checker.eps))?;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for dims in [CheckDims::Small, CheckDims::Tiny] {
        let hp = dims.hyperparams(0);
        check(hp.ehe_layers == 3, || format!("{} EHE layers", hp.ehe_layers))?;
        let widths = [
            hp.embed_dim,
            hp.lse_hidden,
            hp.gce_hidden,
            hp.score_hidden,
            hp.model_dim(),
        ];
        check(widths.iter().all(|&w| w <= 16), || format!("dims {widths:?} exceed 16"))?;
        for seed in 0..GRAD_SEEDS {
            let suite = grad_suite(dims, seed, &checker).map_err(|e| e.to_string())?;
            let names: HashSet<&str> = suite.iter().map(|c| c.name.as_str()).collect();
            for req in REQUIRED_CASES {
                check(names.contains(req), || format!("no {req} case"))?;
            }
            for c in &suite {
                let r = &c.report;
                // Recompute the worst coordinate's error from the raw pair.
                let again = relative_error(r.analytic_at_worst, r.numeric_at_worst);
                let own = (r.analytic_at_worst - r.numeric_at_worst).abs()
                    / r.analytic_at_worst.abs().max(r.numeric_at_worst.abs()).max(1e-8);
                check((again - own).abs() <= 1e-12 * own.max(1.0), || {
                    format!("{}: reported {again:e}, recomputed {own:e}", c.name)
                })?;
                check(r.coords_checked > 0, || format!("{}: no coordinates", c.name))?;
                check(r.max_rel_error < GRAD_TOLERANCE, || {
                    format!("{} seed {seed}: rel err {:.3e}", c.name, r.max_rel_error)
                })?;
                worst = worst.max(r.max_rel_error);
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < GRAD_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{cases} cases over {GRAD_SEEDS} seeds, max rel err {worst:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 2. Extraction loop against an exhaustive oracle

const THRESHOLD: f64 = 0.2;

/// Deterministic scores as a function of the extraction prefix.
#[derive(Clone)]
struct TableScorer {
    seed: u64,
    len: usize,
    calls: usize,
}

impl TableScorer {
    /// Logits for every document position plus the stop probability.
    fn lookup(&self, prefix: &[usize]) -> (Vec<f64>, f64) {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (self.seed, prefix).hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let tied = rng.gen_bool(0.3);
        let logits = (0..self.len)
            .map(|_| {
                if tied {
                    f64::from(rng.gen_range(0..3u8))
                } else {
                    rng.gen_range(-3.0..3.0)
                }
            })
            .collect();
        let p_stop = match rng.gen_range(0..6) {
            0 => THRESHOLD,
            1 => THRESHOLD + 1e-6,
            2 => 0.0,
            _ => rng.gen_range(0.0..0.45),
        };
        (logits, p_stop)
    }
}

impl StepScorer for TableScorer {
    fn score(&mut self, state: &ExtractionState) -> Result<StepScores, ModelError> {
        self.calls += 1;
        let (logits, p_stop) = self.lookup(state.extracted());
        Ok(StepScores {
            logits: state.remaining().iter().map(|&p| logits[p]).collect(),
            p_stop,
        })
    }
}

/// Every ordered selection of distinct positions of length `0..=n_max`.
fn all_sequences(len: usize, n_max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..n_max.min(len) {
        let mut next = Vec::new();
        for seq in &frontier {
            for p in 0..len {
                if !seq.contains(&p) {
                    let mut s: Vec<usize> = seq.clone();
                    s.push(p);
                    next.push(s);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Whether `seq` is what stop-then-argmax produces, and if so whether it
/// ended on a stop decision.
fn consistent(scorer: &TableScorer, seq: &[usize], n_max: usize) -> Option<bool> {
    for i in 0..seq.len() {
        let (logits, p_stop) = scorer.lookup(&seq[..i]);
        if p_stop > THRESHOLD {
            return None;
        }
        let mut best: Option<usize> = None;
        for p in (0..scorer.len).filter(|p| !seq[..i].contains(p)) {
            if best.map_or(true, |b| logits[p] > logits[b]) {
                best = Some(p);
            }
        }
        if best != Some(seq[i]) {
            return None;
        }
    }
    if seq.len() == n_max.min(scorer.len) {
        return Some(false);
    }
    let (_, p_stop) = scorer.lookup(seq);
    if p_stop > THRESHOLD {
        Some(true)
    } else {
        None
    }
}

const ORACLE_CASES: u64 = 200;

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut stopped_runs = 0;
    for case in 0..ORACLE_CASES {
        let len = rng.gen_range(1..=5);
        let n_max = rng.gen_range(1..=3);
        let proto = TableScorer {
            seed: case,
            len,
            calls: 0,
        };
        let matches: Vec<(Vec<usize>, bool)> = all_sequences(len, n_max)
            .into_iter()
            .filter_map(|s| consistent(&proto, &s, n_max).map(|stop| (s, stop)))
            .collect();
        check(matches.len() == 1, || {
            format!("case {case}: oracle found {} sequences", matches.len())
        })?;
        let (want, want_stop) = &matches[0];

        let mut scorer = proto.clone();
        let cfg = DecodeConfig {
            n_max,
            p_stop_threshold: THRESHOLD,
        };
        let out = run_extraction(&mut scorer, len, cfg).map_err(|e| e.to_string())?;
        check(out.state.extracted() == &want[..], || {
            format!("case {case}: loop {:?}, oracle {want:?}", out.state.extracted())
        })?;
        check(out.state.stopped() == *want_stop, || {
            format!("case {case}: stop flag differs")
        })?;
        let steps = want.len() + usize::from(*want_stop);
        check(out.trace.len() == steps && scorer.calls == steps, || {
            format!(
                "case {case}: {} trace steps, {} calls, oracle {steps}",
                out.trace.len(),
                scorer.calls
            )
        })?;
        stopped_runs += usize::from(*want_stop);
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{ORACLE_CASES} scorers agree ({stopped_runs} ended on stop), {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 3. Invariants over fuzzed models and documents

const FUZZ_CASES: usize = 500;
const FUZZ_VOCAB: usize = 16;

fn fuzz_hyperparams(rng: &mut ChaCha8Rng) -> Hyperparams {
    Hyperparams {
        embed_dim: rng.gen_range(2..=8),
        lse_hidden: rng.gen_range(1..=4),
        gce_hidden: rng.gen_range(1..=4),
        ehe_layers: rng.gen_range(1..=3),
        ehe_heads: rng.gen_range(1..=2),
        ehe_ffn_mult: rng.gen_range(1..=2),
        score_hidden: rng.gen_range(2..=8),
        n_max: rng.gen_range(1..=4),
        seed: rng.gen(),
        ..Hyperparams::new(FUZZ_VOCAB)
    }
}

fn fuzz_document(rng: &mut ChaCha8Rng) -> Vec<PrefixedSentence> {
    let len = rng.gen_range(1..=8);
    (0..len)
        .map(|b| PrefixedSentence {
            token_ids: (0..rng.gen_range(1..=10))
                .map(|_| rng.gen_range(0..FUZZ_VOCAB))
                .collect(),
            block_id: b,
        })
        .collect()
}

fn fuzz_case<T: Scalar>(rng: &mut ChaCha8Rng, case: usize) -> Result<(usize, usize), String> {
    let hp = fuzz_hyperparams(rng);
    hp.validate().map_err(|e| e.to_string())?;
    let mut params = ModelParams::<T>::init(&hp).map_err(|e| e.to_string())?;
    // Spread the stop probability over both sides of the threshold.
    let bias = rng.gen_range(-3.0..1.5);
    params.get_mut("stop.b").ok_or("no stop.b")?.data_mut()[0] = T::lit(bias);
    let doc = fuzz_document(rng);
    let len = doc.len();

    let mut scorer = ModelScorer::new(&params, &hp, &doc).map_err(|e| e.to_string())?;
    let out = run_extraction(&mut scorer, len, (&hp).into()).map_err(|e| e.to_string())?;
    let extracted = out.state.extracted();

    let mut seen = BTreeSet::new();
    for &p in extracted {
        check(p < len && seen.insert(p), || {
            format!("case {case}: bad or repeated position {p}")
        })?;
    }
    check(
        extracted.len() <= 4.min(len) && extracted.len() <= hp.n_max.min(len),
        || {
            format!(
                "case {case}: {} selections, L={len} n_max={}",
                extracted.len(),
                hp.n_max
            )
        },
    )?;
    check(
        scorer.calls() <= hp.n_max + 1 && scorer.calls() == out.trace.len(),
        || {
            format!(
                "case {case}: {} scoring steps, trace {}",
                scorer.calls(),
                out.trace.len()
            )
        },
    )?;
    for (step, d) in out.trace.iter().enumerate() {
        let total: f64 = d.p_extraction.iter().sum();
        check((total - 1.0).abs() <= 1e-5, || {
            format!("case {case} step {step}: mass {total}")
        })?;
        for &e in &extracted[..step] {
            check(d.p_extraction[e] == 0.0, || {
                format!("case {case} step {step}: mass {} on extracted {e}", d.p_extraction[e])
            })?;
        }
        check(d.p_extraction.iter().all(|p| (0.0..=1.0).contains(p)), || {
            format!("case {case}: p out of range")
        })?;
    }
    Ok((extracted.len(), usize::from(out.state.stopped())))
}

/// Always stops exactly as the threshold fixture dictates.
struct FixedStop(f64);

impl StepScorer for FixedStop {
    fn score(&mut self, state: &ExtractionState) -> Result<StepScores, ModelError> {
        Ok(StepScores {
            logits: state.remaining().iter().map(|&p| -(p as f64)).collect(),
            p_stop: self.0,
        })
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sizes = [0usize; 5];
    let mut stops = 0;
    for case in 0..FUZZ_CASES {
        let (n, s) = if case % 2 == 0 {
            fuzz_case::<f64>(&mut rng, case)?
        } else {
            fuzz_case::<f32>(&mut rng, case)?
        };
        sizes[n] += 1;
        stops += s;
    }
    // Both branches of the stop rule and more than one answer size occur.
    check(stops > 0 && stops < FUZZ_CASES, || {
        format!("{stops} of {FUZZ_CASES} runs stopped")
    })?;
    check(sizes.iter().filter(|&&c| c > 0).count() >= 3, || {
        format!("answer sizes {sizes:?}")
    })?;

    let cfg = DecodeConfig {
        n_max: 4,
        p_stop_threshold: THRESHOLD,
    };
    let at = run_extraction(&mut FixedStop(0.2), 3, cfg).map_err(|e| e.to_string())?;
    check(at.state.extracted() == [0, 1, 2] && !at.state.stopped(), || {
        format!("p_stop = 0.2 gave {:?}", at.state.extracted())
    })?;
    let above = run_extraction(&mut FixedStop(0.2 + 1e-6), 3, cfg).map_err(|e| e.to_string())?;
    check(above.state.extracted().is_empty() && above.state.stopped(), || {
        format!("p_stop = 0.2 + 1e-6 gave {:?}", above.state.extracted())
    })?;
    Ok(format!(
        "{FUZZ_CASES} pairs, answer sizes {sizes:?}, {stops} stopped early"
    ))
}

// ---------------------------------------------------------------------------
// 4 and 5. Synthetic end to end, twice

const SYN_SEED: u64 = 0;
const SYN_BLOCKS: usize = 12;
const SYN_EPOCHS: usize = 40;
const RUN_BUDGET: Duration = Duration::from_secs(15 * 60);

struct SyntheticRun {
    checkpoint: Vec<u8>,
    predictions: Vec<(String, Vec<u8>)>,
    train: EvalReport,
    test: EvalReport,
    epoch: usize,
    elapsed: Duration,
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_memsum-dqa"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("temp paths are UTF-8")
}

fn synthetic_run(dir: &Path) -> Result<SyntheticRun, String> {
    let start = Instant::now();
    let f = |name: &str| -> PathBuf { dir.join(name) };
    let seed = SYN_SEED.to_string();
    let blocks = SYN_BLOCKS.to_string();
    for (name, n, first) in [("train", "60", "0"), ("val", "20", "60"), ("test", "20", "80")] {
        let out = f(&format!("{name}.jsonl"));
        cli(&[
            "gen-synthetic",
            "--n-docs",
            n,
            "--blocks",
            &blocks,
            "--seed",
            &seed,
            "--first-doc",
            first,
            "--out",
            path_str(&out),
        ])?;
    }
    cli(&[
        "build-vocab",
        "--data",
        path_str(&f("train.jsonl")),
        "--out",
        path_str(&f("vocab.txt")),
    ])?;
    let trained = cli(&[
        "train",
        "--data",
        path_str(&f("train.jsonl")),
        "--val",
        path_str(&f("val.jsonl")),
        "--vocab",
        path_str(&f("vocab.txt")),
        "--seed",
        &seed,
        "--epochs",
        &SYN_EPOCHS.to_string(),
        "--out",
        path_str(&f("model.ckpt")),
    ])?;
    let mut reports = Vec::new();
    let mut predictions = Vec::new();
    for split in ["train", "test"] {
        let pred = f(&format!("{split}.pred.jsonl"));
        let gold = f(&format!("{split}.jsonl"));
        cli(&[
            "extract",
            "--model",
            path_str(&f("model.ckpt")),
            "--data",
            path_str(&gold),
            "--out",
            path_str(&pred),
        ])?;
        let text = std::fs::read_to_string(&pred).map_err(|e| e.to_string())?;
        let records = read_predictions(&text).map_err(|e| e.to_string())?;
        let golds = Dataset::load(&gold).map_err(|e| e.to_string())?.instances(L_CAP);
        reports.push(ema(&records, &golds.items).map_err(|e| e.to_string())?);
        predictions.push((split.to_string(), text.into_bytes()));
    }
    let checkpoint = std::fs::read(f("model.ckpt")).map_err(|e| e.to_string())?;
    let epoch = Checkpoint::<f32>::from_text(&String::from_utf8_lossy(&checkpoint), None)
        .map_err(|e| e.to_string())?
        .meta
        .epoch;
    let _ = trained;
    let test = reports.pop().expect("two reports");
    let train = reports.pop().expect("two reports");
    Ok(SyntheticRun {
        checkpoint,
        predictions,
        train,
        test,
        epoch,
        elapsed: start.elapsed(),
    })
}

fn criterion_4(run: &SyntheticRun) -> Outcome {
    let hp = Checkpoint::<f32>::from_text(&String::from_utf8_lossy(&run.checkpoint), None)
        .map_err(|e| e.to_string())?
        .hyperparams;
    check(hp == Hyperparams::new(hp.vocab_size), || {
        "checkpoint hyperparameters are not the defaults".into()
    })?;
    check(SYN_EPOCHS <= 300, || format!("{SYN_EPOCHS} epochs"))?;
    let summary = format!(
        "train {} | test {} (parent {}, child {}) | best epoch {} of {SYN_EPOCHS} | {:.0}s",
        run.train.overall_ema,
        run.test.overall_ema,
        run.test.parent_ema,
        run.test.child_ema,
        run.epoch,
        run.elapsed.as_secs_f64()
    );
    check(run.train.overall_ema == "100.00", || {
        format!("train EMA below 100: {summary}")
    })?;
    let test = run.test.overall.percent().unwrap_or(0.0);
    check(test >= 90.0, || format!("test EMA below 90: {summary}"))?;
    let (parent, child) = (run.test.parent.percent(), run.test.child.percent());
    check(child.unwrap_or(0.0) >= parent.unwrap_or(0.0), || {
        format!("child below parent: {summary}")
    })?;
    check(run.elapsed < RUN_BUDGET, || format!("over 15 min: {summary}"))?;
    Ok(summary)
}

fn criterion_5(first: &SyntheticRun, second: &SyntheticRun) -> Outcome {
    check(first.checkpoint == second.checkpoint, || "checkpoints differ".into())?;
    for ((name, a), (_, b)) in first.predictions.iter().zip(&second.predictions) {
        check(a == b, || format!("{name} predictions differ"))?;
    }
    Ok(format!(
        "checkpoint ({} bytes) and {} prediction files identical",
        first.checkpoint.len(),
        first.predictions.len()
    ))
}

// ---------------------------------------------------------------------------
// 6. EMA fixture

const EMA_GOLD: &str = r#"{"doc_id":"d1","blocks":[{"id":0,"text":"intro"},{"id":1,"text":"figure one"},{"id":2,"text":"methods"},{"id":3,"text":"table two"},{"id":4,"text":"results"}],"questions":[{"qid":"p1","qtype":"parent","text":"which section holds figure one","answers":[0]},{"qid":"p2","qtype":"parent","text":"which section holds table two","answers":[2]},{"qid":"p3","qtype":"parent","text":"which section holds nothing","answers":[]},{"qid":"c1","qtype":"child","text":"what is under methods","answers":[3]},{"qid":"c2","qtype":"child","text":"what is under intro","answers":[1,3]}]}
"#;

fn record(qid: &str, blocks: &[usize]) -> PredictionRecord {
    let set: BTreeSet<usize> = blocks.iter().copied().collect();
    PredictionRecord {
        qid: qid.into(),
        predicted_blocks: set.iter().copied().collect(),
        answer: memsum_dqa::policy::render_answer(&set),
    }
}

fn criterion_6() -> Outcome {
    let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<usize>>();
    let table: [(&[usize], &[usize], bool); 8] = [
        (&[], &[], true),
        (&[1], &[], false),
        (&[], &[1], false),
        (&[1, 2], &[2, 1], true),
        (&[1], &[1, 2], false),
        (&[1, 2], &[1], false),
        (&[3], &[4], false),
        (&[0, 5, 9], &[9, 0, 5], true),
    ];
    for (p, g, want) in table {
        check(exact_match(&set(p), &set(g)) == want, || {
            format!("exact_match({p:?}, {g:?}) != {want}")
        })?;
    }

    let golds = Dataset::parse_str(EMA_GOLD)
        .map_err(|e| e.to_string())?
        .instances(L_CAP);
    // Parent: p1 right, p2 and p3 wrong. Child: both right, c2 in another order.
    let preds = vec![
        record("p1", &[0]),
        record("p2", &[3]),
        record("p3", &[4]),
        record("c1", &[3]),
        record("c2", &[3, 1]),
    ];
    let r = ema(&preds, &golds.items).map_err(|e| e.to_string())?;
    let got = (r.parent_ema.as_str(), r.child_ema.as_str(), r.overall_ema.as_str());
    check(got == ("33.33", "100.00", "60.00"), || format!("got {got:?}"))?;
    check(
        r.to_string()
            .lines()
            .any(|l| l.starts_with("Overall") && l.contains("60.00")),
        || format!("report text:\n{r}"),
    )?;

    let mut shuffled = preds.clone();
    shuffled.reverse();
    check(ema(&shuffled, &golds.items).map_err(|e| e.to_string())? == r, || {
        "order dependent".into()
    })?;
    let mut dup = preds;
    dup.push(record("c1", &[3]));
    check(
        matches!(ema(&dup, &golds.items), Err(EvalError::DuplicatePrediction(_))),
        || "duplicate accepted".into(),
    )?;
    Ok("Parent 33.33 / Child 100.00 / Overall 60.00, truth table holds".into())
}

// ---------------------------------------------------------------------------
// 7. Round trips and malformed inputs

const ROUNDTRIP_FIXTURE: &str = r#"{"doc_id":"ü-doc","blocks":[{"id":3,"text":"Résumé of \"quoted\" text"},{"id":7,"text":"tab\tand newline\nhere"},{"id":40,"text":"x"}],"questions":[{"qid":"a","qtype":"parent","text":"où ?","answers":[3]},{"qid":"b","qtype":"child","text":"none","answers":[]},{"qid":"c","qtype":"child","text":"both","answers":[7,40]}]}
{"doc_id":"empty-q","blocks":[{"id":0,"text":"only block"}],"questions":[]}
"#;

fn dataset_roundtrip(text: &str) -> Result<(), String> {
    let a = Dataset::parse_str(text).map_err(|e| e.to_string())?;
    let serialized = a.to_jsonl();
    let b = Dataset::parse_str(&serialized).map_err(|e| e.to_string())?;
    check(a == b, || "parse -> serialize -> parse changed the dataset".into())?;
    check(b.to_jsonl() == serialized, || "serialization is not stable".into())
}

fn checkpoint_roundtrip<T: Scalar>(dir: &Path, hp: &Hyperparams, vocab: &Vocabulary) -> Result<(), String> {
    let params = ModelParams::<T>::init(hp).map_err(|e| e.to_string())?;
    let mut opt = memsum_dqa::training::Adam::new(TrainConfig::default().adam(), params.tensors());
    let mut moved = params.clone();
    let grads: Vec<_> = params
        .tensors()
        .iter()
        .map(|t| t.map(|x| x * T::lit(0.3) + T::lit(1e-3)))
        .collect();
    opt.step(moved.tensors_mut(), &grads);
    let ckpt = Checkpoint {
        hyperparams: hp.clone(),
        vocab: vocab.clone(),
        params: moved,
        optimizer: Some(opt),
        meta: TrainingMeta {
            epoch: 3,
            train_loss: 0.1 + 0.2,
            val_ema: 100.0 / 3.0,
        },
    };
    let path = dir.join(format!("rt-{}.ckpt", T::NAME));
    ckpt.save(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::<T>::load(&path, Some(hp)).map_err(|e| e.to_string())?;
    for ((name, a), (_, b)) in ckpt.params.iter().zip(back.params.iter()) {
        let same = a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits());
        check(same && a.shape() == b.shape(), || format!("{name} changed"))?;
    }
    check(back == ckpt, || "checkpoint fields changed".into())?;
    check(back.to_text() == ckpt.to_text(), || "reserialized bytes differ".into())
}

fn expect_format(text: &str, line: usize, what: &str) -> Result<(), String> {
    match Dataset::parse_str(text) {
        Err(CorpusError::Format { line: l, .. }) if l == line => Ok(()),
        other => Err(format!("{what}: expected format error on line {line}, got {other:?}")),
    }
}

const GOOD_LINE: &str = r#"{"doc_id":"g","blocks":[{"id":0,"text":"fine"}],"questions":[{"qid":"g1","qtype":"child","text":"ok","answers":[0]}]}"#;

fn malformed_datasets() -> Result<usize, String> {
    let cases: [(&str, &str); 11] = [
        ("not json", "{not json"),
        ("missing blocks", r#"{"doc_id":"d","questions":[]}"#),
        ("no blocks", r#"{"doc_id":"d","blocks":[],"questions":[]}"#),
        (
            "duplicate block id",
            r#"{"doc_id":"d","blocks":[{"id":1,"text":"a"},{"id":1,"text":"b"}],"questions":[]}"#,
        ),
        (
            "descending block ids",
            r#"{"doc_id":"d","blocks":[{"id":2,"text":"a"},{"id":1,"text":"b"}],"questions":[]}"#,
        ),
        (
            "empty block",
            r#"{"doc_id":"d","blocks":[{"id":0,"text":"  "}],"questions":[]}"#,
        ),
        (
            "bad qtype",
            r#"{"doc_id":"d","blocks":[{"id":0,"text":"a"}],"questions":[{"qid":"q","qtype":"sibling","text":"t","answers":[]}]}"#,
        ),
        (
            "answer outside document",
            r#"{"doc_id":"d","blocks":[{"id":0,"text":"a"}],"questions":[{"qid":"q","qtype":"child","text":"t","answers":[5]}]}"#,
        ),
        (
            "empty question",
            r#"{"doc_id":"d","blocks":[{"id":0,"text":"a"}],"questions":[{"qid":"q","qtype":"child","text":"   ","answers":[]}]}"#,
        ),
        (
            "negative id",
            r#"{"doc_id":"d","blocks":[{"id":-1,"text":"a"}],"questions":[]}"#,
        ),
        ("duplicate qid across lines", GOOD_LINE),
    ];
    for (what, bad) in cases {
        let text = format!("{GOOD_LINE}\n\n{bad}\n");
        // The good line is line 1, the blank line 2 is skipped.
        expect_format(&text, 3, what)?;
    }
    Ok(cases.len())
}

fn malformed_checkpoints(text: &str, hp: &Hyperparams) -> Result<usize, String> {
    let mut n = 0;
    let mut expect = |what: &str, input: &str, want: fn(&CheckpointError) -> bool, hp: Option<&Hyperparams>| {
        n += 1;
        match Checkpoint::<f32>::from_text(input, hp) {
            Err(e) if want(&e) => Ok(()),
            other => Err(format!("{what}: got {:?}", other.map(|_| "a checkpoint"))),
        }
    };
    let corrupt: fn(&CheckpointError) -> bool = |e| matches!(e, CheckpointError::CorruptFile(_));
    let lines: Vec<&str> = text.lines().collect();
    expect("empty", "", corrupt, None)?;
    expect("garbage header", "{{{{", corrupt, None)?;
    expect("truncated", &text[..text.len() / 2], corrupt, None)?;
    expect("missing records", &lines[..lines.len() - 3].join("\n"), corrupt, None)?;
    expect(
        "f64 requested as f32",
        &text.replace("\"precision\":\"f32\"", "\"precision\":\"f64\""),
        corrupt,
        None,
    )?;
    let bumped = text.replacen(
        &format!("\"format_version\":{FORMAT_VERSION}"),
        &format!("\"format_version\":{}", FORMAT_VERSION + 1),
        1,
    );
    expect(
        "future version",
        &bumped,
        |e| matches!(e, CheckpointError::VersionMismatch { found, .. } if *found == FORMAT_VERSION + 1),
        None,
    )?;
    let other = Hyperparams {
        lse_hidden: hp.lse_hidden * 2,
        ..hp.clone()
    };
    expect(
        "other layout",
        text,
        |e| matches!(e, CheckpointError::ShapeMismatch(_)),
        Some(&other),
    )?;
    match Checkpoint::<f32>::load("/nonexistent/dir/model.ckpt", None) {
        Err(CheckpointError::Io { .. }) => {}
        other => return Err(format!("missing file: {:?}", other.map(|_| ()))),
    }
    Ok(n + 1)
}

fn malformed_misc() -> Result<usize, String> {
    let cases: [(&str, bool); 4] = [
        (
            "answer disagrees",
            read_predictions(r#"{"qid":"a","predicted_blocks":[1],"answer":"2"}"#).is_err(),
        ),
        ("not json prediction", read_predictions("[1,2]").is_err()),
        ("vocab without specials", Vocabulary::from_text("a\nb\n").is_err()),
        (
            "unknown config field",
            TrainConfig::from_json(r#"{"epochs":3,"momentum":0.9}"#).is_err(),
        ),
    ];
    for (what, rejected) in cases {
        check(rejected, || format!("{what} accepted"))?;
    }
    Ok(cases.len())
}

/// Random byte edits of valid files; parsers must return, never panic.
fn mutation_fuzz(samples: &[String], rounds: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alphabet = b"{}[]\":,0123456789-.eE ntrufalsx\n\\";
    for round in 0..rounds {
        let base = samples[round % samples.len()].as_bytes();
        let mut bytes = base.to_vec();
        for _ in 0..rng.gen_range(1..=4) {
            let at = rng.gen_range(0..bytes.len());
            match rng.gen_range(0..3) {
                0 => bytes[at] = alphabet[rng.gen_range(0..alphabet.len())],
                1 => {
                    bytes.remove(at);
                }
                _ => bytes.truncate(at.max(1)),
            }
        }
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let run = catch_unwind(|| {
            let _ = Dataset::parse_str(&text);
            let _ = Checkpoint::<f32>::from_text(&text, None);
            let _ = read_predictions(&text);
            let _ = Vocabulary::from_text(&text);
            let _ = TrainConfig::from_json(&text);
        });
        check(run.is_ok(), || format!("round {round} panicked on {text:?}"))?;
    }
    Ok(rounds)
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    dataset_roundtrip(ROUNDTRIP_FIXTURE)?;
    dataset_roundtrip(EMA_GOLD)?;
    let syn = gen_synthetic(5, 9, 11).map_err(|e| e.to_string())?.to_jsonl();
    dataset_roundtrip(&syn)?;

    let instances = Dataset::parse_str(&syn).map_err(|e| e.to_string())?.instances(L_CAP);
    let vocab = Vocabulary::build(&instances.items, 1).map_err(|e| e.to_string())?;
    let hp = Hyperparams {
        seed: 5,
        ..Hyperparams::small(vocab.len())
    };
    checkpoint_roundtrip::<f32>(dir.path(), &hp, &vocab)?;
    checkpoint_roundtrip::<f64>(dir.path(), &hp, &vocab)?;

    let f32_text = std::fs::read_to_string(dir.path().join("rt-f32.ckpt")).map_err(|e| e.to_string())?;
    let bad_data = malformed_datasets()?;
    let bad_ckpt = malformed_checkpoints(&f32_text, &hp)?;
    let bad_misc = malformed_misc()?;
    let preds = format!(
        "{}\n{}\n",
        serde_json::to_string(&record("a", &[1, 4])).map_err(|e| e.to_string())?,
        serde_json::to_string(&record("b", &[])).map_err(|e| e.to_string())?
    );
    let fuzzed = mutation_fuzz(&[ROUNDTRIP_FIXTURE.to_string(), syn, f32_text, preds], 400)?;
    Ok(format!(
        "round trips exact; {bad_data} bad datasets, {bad_ckpt} bad checkpoints, {bad_misc} other inputs rejected; {fuzzed} mutations handled"
    ))
}

// ---------------------------------------------------------------------------

fn report(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match result {
        Ok(detail) => {
            println!("criterion {id} {name}: PASS ({detail})");
            true
        }
        Err(why) => {
            println!("criterion {id} {name}: FAIL ({why})");
            false
        }
    }
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let mut ok = true;
    ok &= report(1, "gradient check", criterion_1);
    ok &= report(2, "extraction oracle", criterion_2);
    ok &= report(3, "loop invariants", criterion_3);

    let runs: Vec<Result<SyntheticRun, String>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            synthetic_run(dir.path())
        })
        .collect();
    ok &= report(4, "synthetic end to end", || {
        criterion_4(runs[0].as_ref().map_err(Clone::clone)?)
    });
    ok &= report(5, "determinism", || {
        let first = runs[0].as_ref().map_err(Clone::clone)?;
        let second = runs[1].as_ref().map_err(Clone::clone)?;
        criterion_5(first, second)
    });
    ok &= report(6, "EMA fixture", criterion_6);
    ok &= report(7, "round trips and errors", criterion_7);
    if !ok {
        std::process::exit(1);
    }
}
