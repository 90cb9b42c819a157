//! Finite-difference gradient checks over every primitive op and every
//! model component, shared by the `grad-check` command and the tests.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Axis, GradCheckReport, GradChecker, Tape, Tensor, Var};
use crate::corpus::PrefixedSentence;
use crate::encoders::{
    ehe_forward, gce_forward, lse_forward_batch, param_layout, Hyperparams, ModelError, ModelParams, ModelVars,
};
use crate::policy::{encode_document, score_remaining, stop_prob, ExtractionState};
use crate::training::{instance_loss, GoldStep, TrainError};

/// Vocabulary size of the check models.
pub const CHECK_VOCAB: usize = 12;
/// Pass threshold on the maximum relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Model objectives are multiplied by this before differencing. Roundoff in
/// a central difference is about `1e-16 * |f| / eps`; keeping `|f|` small
/// holds that noise under the `1e-8` floor of the relative error for
/// coordinates whose true gradient is zero.
pub const OBJECTIVE_SCALE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckDims {
    Tiny,
    Small,
}

impl CheckDims {
    pub fn hyperparams(self, seed: u64) -> Hyperparams {
        let hp = match self {
            Self::Tiny => Hyperparams::tiny(CHECK_VOCAB),
            Self::Small => Hyperparams::small(CHECK_VOCAB),
        };
        Hyperparams { seed, ..hp }
    }
}

#[derive(Clone, Debug)]
pub struct GradCase {
    pub name: String,
    pub report: GradCheckReport,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRAD_TOLERANCE
    }
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).expect("positive dims")
}

/// Draws values whose magnitude is at least `gap`, keeping inputs clear of
/// the kinks of relu and clamp.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gap: f64) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            let x = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::new(rows, cols, data).expect("positive dims")
}

/// `sum(out ∘ w)` for a fixed random `w`, turning any output into a scalar
/// with a non-uniform upstream gradient.
fn project(tape: &mut Tape<f64>, out: Var, w: &Tensor<f64>) -> Result<Var, AutodiffError> {
    let w = tape.constant(w.clone());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

type PrimFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>>;

/// One case per primitive op on random shapes (all dims at most 16).
pub fn primitive_cases(seed: u64, checker: &GradChecker) -> Result<Vec<GradCase>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = |rng: &mut ChaCha8Rng| rng.gen_range(1..=6usize);
    let (n, m, k) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
    let mut cases: Vec<(&str, PrimFn, Vec<Tensor<f64>>, [usize; 2])> = Vec::new();

    let sq = |t: &mut Tape<f64>, x: Var| t.mul(x, x);
    cases.push((
        "matmul",
        Box::new(|t, v| t.matmul(v[0], v[1])),
        vec![random(&mut rng, n, k, -1.0, 1.0), random(&mut rng, k, m, -1.0, 1.0)],
        [n, m],
    ));
    cases.push((
        "add",
        Box::new(|t, v| t.add(v[0], v[1])),
        vec![random(&mut rng, n, m, -1.0, 1.0), random(&mut rng, n, m, -1.0, 1.0)],
        [n, m],
    ));
    cases.push((
        "sub",
        Box::new(|t, v| t.sub(v[0], v[1])),
        vec![random(&mut rng, n, m, -1.0, 1.0), random(&mut rng, n, m, -1.0, 1.0)],
        [n, m],
    ));
    cases.push((
        "mul",
        Box::new(|t, v| t.mul(v[0], v[1])),
        vec![random(&mut rng, n, m, -1.0, 1.0), random(&mut rng, n, m, -1.0, 1.0)],
        [n, m],
    ));
    cases.push((
        "add_bias",
        Box::new(|t, v| t.add_bias(v[0], v[1])),
        vec![random(&mut rng, n, m, -1.0, 1.0), random(&mut rng, 1, m, -1.0, 1.0)],
        [n, m],
    ));
    cases.push((
        "affine",
        Box::new(|t, v| Ok(t.affine(v[0], -1.7, 0.3))),
        vec![random(&mut rng, n, m, -1.0, 1.0)],
        [n, m],
    ));
    cases.push((
        "concat_rows",
        Box::new(|t, v| t.concat(&[v[0], v[1]], Axis::Rows)),
        vec![random(&mut rng, n, m, -1.0, 1.0), random(&mut rng, k, m, -1.0, 1.0)],
        [n + k, m],
    ));
    cases.push((
        "concat_cols",
        Box::new(|t, v| t.concat(&[v[0], v[1], v[0]], Axis::Cols)),
        vec![random(&mut rng, n, m, -1.0, 1.0), random(&mut rng, n, k, -1.0, 1.0)],
        [n, 2 * m + k],
    ));
    let (r0, c0) = (rng.gen_range(0..n), rng.gen_range(0..m));
    cases.push((
        "slice_rows",
        Box::new(move |t, v| t.slice_rows(v[0], r0, n - r0)),
        vec![random(&mut rng, n, m, -1.0, 1.0)],
        [n - r0, m],
    ));
    cases.push((
        "slice_cols",
        Box::new(move |t, v| t.slice_cols(v[0], c0, m - c0)),
        vec![random(&mut rng, n, m, -1.0, 1.0)],
        [n, m - c0],
    ));
    let picks: Vec<usize> = (0..k + 1).map(|_| rng.gen_range(0..n)).collect();
    let np = picks.len();
    cases.push((
        "gather_rows",
        Box::new(move |t, v| t.gather_rows(v[0], &picks)),
        vec![random(&mut rng, n, m, -1.0, 1.0)],
        [np, m],
    ));
    cases.push((
        "reshape",
        Box::new(move |t, v| t.reshape(v[0], m, n)),
        vec![random(&mut rng, n, m, -1.0, 1.0)],
        [m, n],
    ));
    cases.push((
        "sigmoid",
        Box::new(|t, v| Ok(t.sigmoid(v[0]))),
        vec![random(&mut rng, n, m, -3.0, 3.0)],
        [n, m],
    ));
    cases.push((
        "tanh",
        Box::new(|t, v| Ok(t.tanh(v[0]))),
        vec![random(&mut rng, n, m, -3.0, 3.0)],
        [n, m],
    ));
    cases.push((
        "relu",
        Box::new(|t, v| Ok(t.relu(v[0]))),
        vec![away_from_zero(&mut rng, n, m, 0.05)],
        [n, m],
    ));
    cases.push((
        "ln",
        Box::new(|t, v| Ok(t.ln(v[0]))),
        vec![random(&mut rng, n, m, 0.2, 3.0)],
        [n, m],
    ));
    cases.push((
        "clamp",
        Box::new(|t, v| Ok(t.clamp(v[0], -0.5, 0.5))),
        vec![away_from_zero(&mut rng, n, m, 0.05).map(|x| if (x.abs() - 0.5).abs() < 0.05 { x * 0.5 } else { x })],
        [n, m],
    ));
    cases.push((
        "sum",
        Box::new(move |t, v| {
            let s = sq(t, v[0])?;
            Ok(t.sum(s))
        }),
        vec![random(&mut rng, n, m, -1.0, 1.0)],
        [1, 1],
    ));
    cases.push((
        "mean_pool",
        Box::new(|t, v| Ok(t.mean_pool(v[0]))),
        vec![random(&mut rng, n, m, -1.0, 1.0)],
        [1, m],
    ));
    let mask: Vec<bool> = (0..n * m).map(|i| i % m == 0 || rng.gen_bool(0.7)).collect();
    cases.push((
        "masked_softmax",
        Box::new(move |t, v| t.masked_softmax(v[0], &mask)),
        vec![random(&mut rng, n, m, -2.0, 2.0)],
        [n, m],
    ));
    cases.push((
        "weighted_pool",
        Box::new(|t, v| t.weighted_pool(v[0], v[1])),
        vec![random(&mut rng, n, m, -1.0, 1.0), random(&mut rng, n, 1, -2.0, 2.0)],
        [1, m],
    ));
    let m2 = m + 2;
    cases.push((
        "layer_norm",
        Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
        vec![
            random(&mut rng, n, m2, -2.0, 2.0),
            random(&mut rng, 1, m2, 0.5, 1.5),
            random(&mut rng, 1, m2, -0.5, 0.5),
        ],
        [n, m2],
    ));
    cases.push((
        "attention",
        Box::new(|t, v| t.scaled_dot_attention(v[0], v[1], v[2], None)),
        vec![
            random(&mut rng, n, k, -1.0, 1.0),
            random(&mut rng, m, k, -1.0, 1.0),
            random(&mut rng, m, n, -1.0, 1.0),
        ],
        [n, n],
    ));
    let amask: Vec<bool> = (0..n * m).map(|i| i % m == 0 || rng.gen_bool(0.6)).collect();
    cases.push((
        "attention_masked",
        Box::new(move |t, v| t.scaled_dot_attention(v[0], v[1], v[2], Some(&amask))),
        vec![
            random(&mut rng, n, k, -1.0, 1.0),
            random(&mut rng, m, k, -1.0, 1.0),
            random(&mut rng, m, k, -1.0, 1.0),
        ],
        [n, k],
    ));
    let (sr, sc) = (rng.gen_range(0..n), rng.gen_range(0..m));
    cases.push((
        "select",
        Box::new(move |t, v| {
            let s = sq(t, v[0])?;
            t.select(s, sr, sc)
        }),
        vec![random(&mut rng, n, m, -1.0, 1.0)],
        [1, 1],
    ));

    let mut out = Vec::with_capacity(cases.len());
    for (name, f, params, shape) in cases {
        let w = random(&mut rng, shape[0], shape[1], -1.0, 1.0);
        let report = checker.run(
            |tape, vars| {
                let y = f(tape, vars)?;
                project(tape, y, &w)
            },
            &params,
        )?;
        out.push(GradCase {
            name: name.to_string(),
            report,
        });
    }
    Ok(out)
}

/// Model parameters for the checks: the usual init, with every uniform
/// array rescaled to `(-0.5, 0.5)` so gradients stay well above the
/// finite-difference noise floor.
pub fn check_params(hp: &Hyperparams) -> Result<ModelParams<f64>, ModelError> {
    let mut params = ModelParams::<f64>::init(hp)?;
    for spec in param_layout(hp) {
        if let Some(range) = spec.init.uniform_range() {
            let t = params.get_mut(&spec.name).expect("layout names exist");
            *t = t.map(|x| x * 0.5 / range);
        }
    }
    Ok(params)
}

fn random_sentences(rng: &mut ChaCha8Rng, count: usize, vocab: usize) -> Vec<PrefixedSentence> {
    (0..count)
        .map(|i| PrefixedSentence {
            token_ids: (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(0..vocab)).collect(),
            block_id: i,
        })
        .collect()
}

/// Runs `checker` on `body` with respect to the named model parameters
/// plus any extra free inputs (appended after the parameters).
fn model_case(
    name: &str,
    checker: &GradChecker,
    hp: &Hyperparams,
    params: &ModelParams<f64>,
    names: &[String],
    extra: Vec<Tensor<f64>>,
    body: impl Fn(&mut Tape<f64>, &ModelVars, &[Var]) -> Result<Var, TrainError>,
) -> Result<GradCase, TrainError> {
    let mut inputs: Vec<Tensor<f64>> = names
        .iter()
        .map(|n| params.get(n).cloned().expect("layout names exist"))
        .collect();
    let n_named = inputs.len();
    inputs.extend(extra);
    let report = checker.run(
        |tape, vars| {
            let overrides: HashMap<String, Var> = names.iter().cloned().zip(vars[..n_named].iter().copied()).collect();
            let mv = ModelVars::bind_with(tape, params, hp, false, &overrides)?;
            let f = body(tape, &mv, &vars[n_named..])?;
            Ok::<_, TrainError>(tape.affine(f, OBJECTIVE_SCALE, 0.0))
        },
        &inputs,
    )?;
    Ok(GradCase {
        name: name.to_string(),
        report,
    })
}

fn names_with(params: &ModelParams<f64>, prefixes: &[&str]) -> Vec<String> {
    params
        .names()
        .iter()
        .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
        .cloned()
        .collect()
}

/// Sentence, document and history encoders, both heads, and the full
/// teacher-forced instance loss.
pub fn composite_cases(hp: &Hyperparams, seed: u64, checker: &GradChecker) -> Result<Vec<GradCase>, TrainError> {
    let params = check_params(hp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let (d, g) = (hp.model_dim(), hp.global_dim());
    let len = rng.gen_range(3..=5);
    let sentences = random_sentences(&mut rng, len, hp.vocab_size);
    let mut out = Vec::new();

    let w = random(&mut rng, len, d, -1.0, 1.0);
    let names = names_with(&params, &["embed", "lse."]);
    out.push(model_case(
        "lse",
        checker,
        hp,
        &params,
        &names,
        vec![],
        |tape, mv, _| {
            let l = lse_forward_batch(tape, mv, hp, &sentences)?;
            Ok(project(tape, l, &w)?)
        },
    )?);

    let wg = random(&mut rng, len, g, -1.0, 1.0);
    let names = names_with(&params, &["gce."]);
    let embs = random(&mut rng, len, d, -1.0, 1.0);
    out.push(model_case(
        "gce",
        checker,
        hp,
        &params,
        &names,
        vec![embs],
        |tape, mv, x| {
            let out = gce_forward(tape, mv, hp, x[0])?;
            Ok(project(tape, out, &wg)?)
        },
    )?);

    let names = names_with(&params, &["ehe."]);
    let rem = random(&mut rng, 4, d, -1.0, 1.0);
    let mem = random(&mut rng, 2, d, -1.0, 1.0);
    let wh = random(&mut rng, 4, d, -1.0, 1.0);
    out.push(model_case(
        "ehe",
        checker,
        hp,
        &params,
        &names,
        vec![rem.clone(), mem],
        |tape, mv, x| {
            let h = ehe_forward(tape, mv, hp, x[0], Some(x[1]))?;
            Ok(project(tape, h, &wh)?)
        },
    )?);
    out.push(model_case(
        "ehe_first_step",
        checker,
        hp,
        &params,
        &names,
        vec![rem],
        |tape, mv, x| {
            let h = ehe_forward(tape, mv, hp, x[0], None)?;
            Ok(project(tape, h, &wh)?)
        },
    )?);

    let names = names_with(&params, &["score."]);
    let r = 3;
    let inputs = vec![
        random(&mut rng, r, d, -1.0, 1.0),
        random(&mut rng, r, g, -1.0, 1.0),
        random(&mut rng, r, d, -1.0, 1.0),
    ];
    let wl = random(&mut rng, r, 1, -1.0, 1.0);
    let wu = random(&mut rng, r, hp.score_hidden, -1.0, 1.0);
    out.push(model_case(
        "score_head",
        checker,
        hp,
        &params,
        &names,
        inputs,
        |tape, mv, x| {
            let s = score_remaining(tape, mv, x[0], x[1], x[2])?;
            let a = project(tape, s.logits, &wl)?;
            let b = project(tape, s.hidden, &wu)?;
            Ok(tape.add(a, b)?)
        },
    )?);

    let names = names_with(&params, &["stop."]);
    let hidden = random(&mut rng, r, hp.score_hidden, 0.0, 1.0);
    out.push(model_case(
        "stop_head",
        checker,
        hp,
        &params,
        &names,
        vec![hidden],
        |tape, mv, x| {
            let p = stop_prob(tape, mv, x[0])?;
            Ok(tape.ln(p))
        },
    )?);

    let mut gold: Vec<usize> = (0..len).filter(|_| rng.gen_bool(0.5)).take(hp.n_max).collect();
    if gold.is_empty() {
        gold.push(rng.gen_range(0..len));
    }
    let mut steps: Vec<GoldStep> = (0..gold.len())
        .map(|k| GoldStep {
            state: ExtractionState::with_prefix(len, &gold[..k]),
            action: Some(gold[k]),
            stop_label: 0,
        })
        .collect();
    steps.push(GoldStep {
        state: ExtractionState::with_prefix(len, &gold),
        action: None,
        stop_label: 1,
    });
    let names = params.names().to_vec();
    out.push(model_case(
        "instance_loss",
        checker,
        hp,
        &params,
        &names,
        vec![],
        |tape, mv, _| instance_loss(tape, mv, hp, &sentences, &steps, 1.0),
    )?);

    let enc_names = names_with(&params, &["embed", "lse.", "gce."]);
    let wd = random(&mut rng, len, d + g, -1.0, 1.0);
    out.push(model_case(
        "document_encoding",
        checker,
        hp,
        &params,
        &enc_names,
        vec![],
        |tape, mv, _| {
            let enc = encode_document(tape, mv, hp, &sentences)?;
            let both = tape.concat(&[enc.local, enc.global], Axis::Cols)?;
            Ok(project(tape, both, &wd)?)
        },
    )?);
    Ok(out)
}

/// Primitives and composites at the given dims.
pub fn grad_suite(dims: CheckDims, seed: u64, checker: &GradChecker) -> Result<Vec<GradCase>, TrainError> {
    let mut cases = primitive_cases(seed, checker)?;
    cases.extend(composite_cases(&dims.hyperparams(seed), seed, checker)?);
    Ok(cases)
}
