//! Named parameter arrays and their binding onto a tape.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Hyperparams, ModelError};
use crate::autodiff::{Scalar, Tape, Tensor, Var};

const INIT_RANGE: f64 = 0.1;
const EMBED_RANGE: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Uniform,
    /// Uniform with unit variance.
    Embedding,
    /// Uniform, then the forget-gate block (`hidden..2*hidden` of the gate
    /// columns) set to 1.
    LstmBias {
        hidden: usize,
    },
    Ones,
    Zeros,
}

impl Init {
    /// Half-width of the sampling interval of the purely uniform schemes.
    pub fn uniform_range(self) -> Option<f64> {
        match self {
            Init::Uniform => Some(INIT_RANGE),
            Init::Embedding => Some(EMBED_RANGE),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

fn spec(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        rows,
        cols,
        init,
    }
}

fn lstm_specs(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, hidden: usize) {
    for dir in ["fwd", "bwd"] {
        out.push(spec(format!("{prefix}.{dir}.w_x"), input, 4 * hidden, Init::Uniform));
        out.push(spec(format!("{prefix}.{dir}.w_h"), hidden, 4 * hidden, Init::Uniform));
        out.push(spec(
            format!("{prefix}.{dir}.b"),
            1,
            4 * hidden,
            Init::LstmBias { hidden },
        ));
    }
}

/// The key projection has no bias: it would shift every score of a query
/// row equally and leave the softmax unchanged.
fn attn_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    for m in ["q", "k", "v", "o"] {
        out.push(spec(format!("{prefix}.w{m}"), d, d, Init::Uniform));
        if m != "k" {
            out.push(spec(format!("{prefix}.b{m}"), 1, d, Init::Uniform));
        }
    }
}

/// Parameter names and shapes, in initialization order.
pub fn param_layout(hp: &Hyperparams) -> Vec<ParamSpec> {
    let d = hp.model_dim();
    let mut out = vec![spec("embed", hp.vocab_size, hp.embed_dim, Init::Embedding)];
    lstm_specs(&mut out, "lse", hp.embed_dim, hp.lse_hidden);
    out.push(spec("lse.pool.w", d, 1, Init::Uniform));
    lstm_specs(&mut out, "gce", d, hp.gce_hidden);
    for layer in 0..hp.ehe_layers {
        let p = format!("ehe.{layer}");
        attn_specs(&mut out, &format!("{p}.self"), d);
        attn_specs(&mut out, &format!("{p}.cross"), d);
        let ffn = d * hp.ehe_ffn_mult;
        out.push(spec(format!("{p}.ffn.w1"), d, ffn, Init::Uniform));
        out.push(spec(format!("{p}.ffn.b1"), 1, ffn, Init::Uniform));
        out.push(spec(format!("{p}.ffn.w2"), ffn, d, Init::Uniform));
        out.push(spec(format!("{p}.ffn.b2"), 1, d, Init::Uniform));
        for ln in ["ln1", "ln2", "ln3"] {
            out.push(spec(format!("{p}.{ln}.gain"), 1, d, Init::Ones));
            out.push(spec(format!("{p}.{ln}.bias"), 1, d, Init::Zeros));
        }
    }
    out.push(spec("ehe.u0", 1, d, Init::Uniform));
    out.push(spec("score.w1", hp.score_input_dim(), hp.score_hidden, Init::Uniform));
    out.push(spec("score.b1", 1, hp.score_hidden, Init::Uniform));
    out.push(spec("score.w2", hp.score_hidden, 1, Init::Uniform));
    out.push(spec("stop.w", hp.score_hidden, 1, Init::Uniform));
    out.push(spec("stop.b", 1, 1, Init::Uniform));
    out
}

/// Every learnable array of the model, keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization in layout order: uniform(-0.1, 0.1) for weights,
    /// unit-variance uniform for embeddings.
    pub fn init(hp: &Hyperparams) -> Result<Self, ModelError> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let mut named = Vec::new();
        for s in param_layout(hp) {
            let n = s.rows * s.cols;
            let data: Vec<T> = match s.init {
                Init::Ones => vec![T::one(); n],
                Init::Zeros => vec![T::zero(); n],
                Init::Uniform | Init::LstmBias { .. } => {
                    (0..n).map(|_| T::lit(rng.gen_range(-INIT_RANGE..INIT_RANGE))).collect()
                }
                Init::Embedding => (0..n)
                    .map(|_| T::lit(rng.gen_range(-EMBED_RANGE..EMBED_RANGE)))
                    .collect(),
            };
            let mut t = Tensor::new(s.rows, s.cols, data)?;
            if let Init::LstmBias { hidden } = s.init {
                for v in &mut t.data_mut()[hidden..2 * hidden] {
                    *v = T::one();
                }
            }
            named.push((s.name, t));
        }
        Ok(Self::from_named(named))
    }

    pub fn from_named(named: Vec<(String, Tensor<T>)>) -> Self {
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        let mut index = HashMap::with_capacity(named.len());
        for (i, (n, t)) in named.into_iter().enumerate() {
            index.insert(n.clone(), i);
            names.push(n);
            tensors.push(t);
        }
        Self { names, tensors, index }
    }

    /// Accepts `named` only when names and shapes match the layout of `hp`
    /// exactly (order included).
    pub fn from_named_checked(hp: &Hyperparams, named: Vec<(String, Tensor<T>)>) -> Result<Self, ModelError> {
        let layout = param_layout(hp);
        if layout.len() != named.len() {
            return Err(ModelError::LayoutMismatch(format!(
                "expected {} arrays, found {}",
                layout.len(),
                named.len()
            )));
        }
        for (s, (n, t)) in layout.iter().zip(&named) {
            if &s.name != n {
                return Err(ModelError::LayoutMismatch(format!("expected {}, found {n}", s.name)));
            }
            if t.shape() != [s.rows, s.cols] {
                return Err(ModelError::LayoutMismatch(format!(
                    "{n}: expected shape {:?}, found {:?}",
                    [s.rows, s.cols],
                    t.shape()
                )));
            }
        }
        Ok(Self::from_named(named))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmVars {
    pub fwd: LstmVars,
    pub bwd: LstmVars,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct NormVars {
    pub gain: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayerVars {
    pub self_attn: AttentionVars,
    pub cross_attn: AttentionVars,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub ln1: NormVars,
    pub ln2: NormVars,
    pub ln3: NormVars,
}

/// The model's parameters as tape variables.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embed: Var,
    pub lse: BiLstmVars,
    pub lse_pool: Var,
    pub gce: BiLstmVars,
    pub ehe: Vec<DecoderLayerVars>,
    pub u0: Var,
    pub score_w1: Var,
    pub score_b1: Var,
    pub score_w2: Var,
    pub stop_w: Var,
    pub stop_b: Var,
    /// One var per parameter, in layout order.
    pub all: Vec<Var>,
}

impl ModelVars {
    /// Every parameter becomes a gradient-tracking leaf.
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>, hp: &Hyperparams) -> Result<Self, ModelError> {
        Self::bind_with(tape, params, hp, true, &HashMap::new())
    }

    /// Leaves with no gradient, for inference.
    pub fn bind_frozen<T: Scalar>(
        tape: &mut Tape<T>,
        params: &ModelParams<T>,
        hp: &Hyperparams,
    ) -> Result<Self, ModelError> {
        Self::bind_with(tape, params, hp, false, &HashMap::new())
    }

    /// Uses `overrides` for the named parameters and leaves of the given
    /// `requires_grad` for the rest.
    pub fn bind_with<T: Scalar>(
        tape: &mut Tape<T>,
        params: &ModelParams<T>,
        hp: &Hyperparams,
        requires_grad: bool,
        overrides: &HashMap<String, Var>,
    ) -> Result<Self, ModelError> {
        let mut all = Vec::with_capacity(params.len());
        for (name, t) in params.iter() {
            let v = match overrides.get(name) {
                Some(&v) => v,
                None => tape.leaf(t.clone(), requires_grad),
            };
            all.push(v);
        }
        let get = |name: &str| -> Result<Var, ModelError> {
            params
                .position(name)
                .map(|i| all[i])
                .ok_or_else(|| ModelError::LayoutMismatch(format!("missing parameter {name}")))
        };
        let lstm = |p: &str| -> Result<LstmVars, ModelError> {
            Ok(LstmVars {
                w_x: get(&format!("{p}.w_x"))?,
                w_h: get(&format!("{p}.w_h"))?,
                b: get(&format!("{p}.b"))?,
            })
        };
        let attn = |p: &str| -> Result<AttentionVars, ModelError> {
            Ok(AttentionVars {
                wq: get(&format!("{p}.wq"))?,
                bq: get(&format!("{p}.bq"))?,
                wk: get(&format!("{p}.wk"))?,
                wv: get(&format!("{p}.wv"))?,
                bv: get(&format!("{p}.bv"))?,
                wo: get(&format!("{p}.wo"))?,
                bo: get(&format!("{p}.bo"))?,
            })
        };
        let norm = |p: &str| -> Result<NormVars, ModelError> {
            Ok(NormVars {
                gain: get(&format!("{p}.gain"))?,
                bias: get(&format!("{p}.bias"))?,
            })
        };
        let mut ehe = Vec::with_capacity(hp.ehe_layers);
        for layer in 0..hp.ehe_layers {
            let p = format!("ehe.{layer}");
            ehe.push(DecoderLayerVars {
                self_attn: attn(&format!("{p}.self"))?,
                cross_attn: attn(&format!("{p}.cross"))?,
                ffn_w1: get(&format!("{p}.ffn.w1"))?,
                ffn_b1: get(&format!("{p}.ffn.b1"))?,
                ffn_w2: get(&format!("{p}.ffn.w2"))?,
                ffn_b2: get(&format!("{p}.ffn.b2"))?,
                ln1: norm(&format!("{p}.ln1"))?,
                ln2: norm(&format!("{p}.ln2"))?,
                ln3: norm(&format!("{p}.ln3"))?,
            });
        }
        Ok(Self {
            embed: get("embed")?,
            lse: BiLstmVars {
                fwd: lstm("lse.fwd")?,
                bwd: lstm("lse.bwd")?,
            },
            lse_pool: get("lse.pool.w")?,
            gce: BiLstmVars {
                fwd: lstm("gce.fwd")?,
                bwd: lstm("gce.bwd")?,
            },
            ehe,
            u0: get("ehe.u0")?,
            score_w1: get("score.w1")?,
            score_b1: get("score.b1")?,
            score_w2: get("score.w2")?,
            stop_w: get("stop.w")?,
            stop_b: get("stop.b")?,
            all,
        })
    }
}
