//! Teacher-forced training loop with per-epoch validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    clip_global_norm, gold_sequence, instance_loss, Adam, Checkpoint, GoldStep, TrainConfig, TrainError, TrainingMeta,
};
use crate::autodiff::{Scalar, Tape, Tensor};
use crate::corpus::{encode_instance, PrefixedSentence, QAInstance, Vocabulary};
use crate::encoders::{Hyperparams, ModelParams, ModelVars};
use crate::eval::ema;
use crate::policy::extract;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean instance loss over the epoch, measured before each update.
    pub mean_loss: f64,
    pub val_correct: usize,
    pub val_ema: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Best validation epoch (earliest on ties).
    pub checkpoint: Checkpoint<T>,
    pub history: Vec<EpochStats>,
    /// Training instances skipped because truncation removed a gold block.
    pub skipped_truncated: usize,
    /// Training instances whose gold set was cut to `n_max`.
    pub gold_overflow: usize,
}

struct Prepared {
    qid: String,
    sentences: Vec<PrefixedSentence>,
    steps: Vec<GoldStep>,
}

/// Loss and parameter gradients of one instance.
pub fn instance_gradients<T: Scalar>(
    params: &ModelParams<T>,
    hp: &Hyperparams,
    sentences: &[PrefixedSentence],
    steps: &[GoldStep],
    stop_weight: f64,
) -> Result<(f64, Vec<Option<Tensor<T>>>), TrainError> {
    let mut tape = Tape::new();
    let mv = ModelVars::bind(&mut tape, params, hp)?;
    let loss = instance_loss(&mut tape, &mv, hp, sentences, steps, stop_weight)?;
    let value = tape.value(loss).item().as_f64();
    tape.backward(loss)?;
    let grads = mv.all.iter().map(|&v| tape.grad(v).cloned()).collect();
    Ok((value, grads))
}

pub fn train<T: Scalar>(
    train_set: &[QAInstance],
    val_set: &[QAInstance],
    vocab: &Vocabulary,
    hp: &Hyperparams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    train_with_progress(train_set, val_set, vocab, hp, cfg, |_| {})
}

/// [`train`], reporting each finished epoch to `progress`.
pub fn train_with_progress<T: Scalar>(
    train_set: &[QAInstance],
    val_set: &[QAInstance],
    vocab: &Vocabulary,
    hp: &Hyperparams,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    hp.validate()?;
    if hp.vocab_size != vocab.len() {
        return Err(TrainError::Config(format!(
            "vocab_size {} but vocabulary has {} tokens",
            hp.vocab_size,
            vocab.len()
        )));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }

    let mut prepared = Vec::with_capacity(train_set.len());
    let (mut skipped_truncated, mut gold_overflow) = (0, 0);
    for inst in train_set {
        if inst.unanswerable_after_truncation {
            skipped_truncated += 1;
            continue;
        }
        let gold = gold_sequence(inst, hp.n_max);
        gold_overflow += usize::from(gold.overflowed);
        prepared.push(Prepared {
            qid: inst.question.qid.clone(),
            sentences: encode_instance(inst, vocab, hp.t_cap, hp.l_cap)?,
            steps: gold.steps,
        });
    }
    if prepared.is_empty() {
        return Err(TrainError::EmptyDataset);
    }

    let mut params = ModelParams::<T>::init(hp)?;
    let mut opt = Adam::new(cfg.adam(), params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Checkpoint<T>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Tensor<T>> = params
                .tensors()
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect();
            for &i in batch {
                let p = &prepared[i];
                let (loss, grads) = instance_gradients(&params, hp, &p.sentences, &p.steps, cfg.stop_loss_weight)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { qid: p.qid.clone() });
                }
                loss_sum += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    if let Some(g) = g {
                        a.accumulate(g);
                    }
                }
            }
            let scale = T::lit(1.0 / batch.len() as f64);
            for a in &mut acc {
                for x in a.data_mut() {
                    *x = *x * scale;
                }
            }
            clip_global_norm(&mut acc, cfg.clip_norm);
            opt.step(params.tensors_mut(), &acc);
        }

        let mut answers = Vec::with_capacity(val_set.len());
        for inst in val_set {
            answers.push(extract(inst, &params, hp, vocab)?);
        }
        let report = ema(&answers, val_set)?;
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / prepared.len() as f64,
            val_correct: report.overall.correct,
            val_ema: report.overall.percent().unwrap_or(0.0),
        };
        progress(&stats);
        if best.as_ref().map_or(true, |(c, _)| stats.val_correct > *c) {
            let ckpt = Checkpoint {
                hyperparams: hp.clone(),
                vocab: vocab.clone(),
                params: params.clone(),
                optimizer: Some(opt.clone()),
                meta: TrainingMeta {
                    epoch,
                    train_loss: stats.mean_loss,
                    val_ema: stats.val_ema,
                },
            };
            best = Some((stats.val_correct, ckpt));
        }
        history.push(stats);
    }

    let (_, checkpoint) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint,
        history,
        skipped_truncated,
        gold_overflow,
    })
}
