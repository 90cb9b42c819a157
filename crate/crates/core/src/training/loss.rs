//! Per-step imitation loss and the summed loss of one instance.

use super::{GoldStep, TrainError};
use crate::autodiff::{Scalar, Tape, Var};
use crate::corpus::PrefixedSentence;
use crate::encoders::{Hyperparams, ModelVars};
use crate::policy::{encode_document, policy_step};

pub const PROB_FLOOR: f64 = 1e-7;

fn safe_ln<T: Scalar>(tape: &mut Tape<T>, p: Var) -> Var {
    let p = tape.clamp(p, T::lit(PROB_FLOOR), T::lit(1.0 - PROB_FLOOR));
    tape.ln(p)
}

/// `-ln p_extraction[action] + λ·BCE(p_stop, stop_label)`.
///
/// `p_extraction` is `1 x R`, aligned with `remaining`.
pub fn step_loss<T: Scalar>(
    tape: &mut Tape<T>,
    p_extraction: Var,
    p_stop: Var,
    remaining: &[usize],
    gold: &GoldStep,
    stop_weight: f64,
) -> Result<Var, TrainError> {
    let mut terms = Vec::with_capacity(2);
    if let Some(action) = gold.action {
        let k = remaining
            .iter()
            .position(|&r| r == action)
            .ok_or(TrainError::ActionNotRemaining(action))?;
        let p = tape.select(p_extraction, 0, k)?;
        let lp = safe_ln(tape, p);
        terms.push(tape.affine(lp, T::lit(-1.0), T::zero()));
    }
    if stop_weight != 0.0 {
        let p = if gold.stop_label == 1 {
            p_stop
        } else {
            tape.affine(p_stop, T::lit(-1.0), T::one())
        };
        let lp = safe_ln(tape, p);
        terms.push(tape.affine(lp, T::lit(-stop_weight), T::zero()));
    }
    let mut total = match terms.first() {
        Some(&t) => t,
        None => tape.constant(crate::autodiff::Tensor::scalar(T::zero())),
    };
    for &t in terms.iter().skip(1) {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// Teacher-forced loss of one instance: the document is encoded once and
/// every gold step is scored from its gold-prefix state. A stop step with
/// nothing remaining is skipped, the loop never scores that state.
pub fn instance_loss<T: Scalar>(
    tape: &mut Tape<T>,
    mv: &ModelVars,
    hp: &Hyperparams,
    sentences: &[PrefixedSentence],
    steps: &[GoldStep],
    stop_weight: f64,
) -> Result<Var, TrainError> {
    let enc = encode_document(tape, mv, hp, sentences)?;
    let mut total: Option<Var> = None;
    for step in steps {
        if step.action.is_none() && step.state.remaining().is_empty() {
            continue;
        }
        let out = policy_step(tape, mv, hp, &enc, step.state.remaining(), step.state.extracted())?;
        let l = step_loss(
            tape,
            out.p_extraction,
            out.p_stop,
            step.state.remaining(),
            step,
            stop_weight,
        )?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    total.ok_or(TrainError::NoGoldSteps)
}
