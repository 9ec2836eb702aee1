//! Parameter layout and the graph-building blocks shared by the encoder
//! and the caption decoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::tensor::{Matrix, Scalar};

const EMBEDDING_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    FanIn(usize),
    /// Normal with the given deviation, resampled outside two deviations.
    TruncatedNormal(f64),
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub(crate) init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    /// Top-level component, the first dotted segment of the name.
    pub fn module(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }

    pub(crate) fn sample<T: Scalar>(&self, rng: &mut ChaCha8Rng) -> Matrix<T> {
        let n = self.numel();
        let data = match self.init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
            }
            Init::TruncatedNormal(std) => (0..n)
                .map(|_| loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if z.abs() <= 2.0 {
                        break T::lit(z * std);
                    }
                })
                .collect(),
            Init::Ones => vec![T::one(); n],
            Init::Zeros => vec![T::zero(); n],
        };
        Matrix::from_vec(self.rows, self.cols, data).expect("declared shape")
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearIds {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerNormIds {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttentionIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub out: LinearIds,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderLayerIds {
    pub attn: AttentionIds,
    pub norm1: LayerNormIds,
    pub ff1: LinearIds,
    pub ff2: LinearIds,
    pub norm2: LayerNormIds,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DecoderLayerIds {
    pub self_attn: AttentionIds,
    pub norm1: LayerNormIds,
    pub cross_attn: AttentionIds,
    pub norm2: LayerNormIds,
    pub ff1: LinearIds,
    pub ff2: LinearIds,
    pub norm3: LayerNormIds,
}

#[derive(Default)]
pub(crate) struct LayoutBuilder {
    pub specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(ParamSpec {
            name,
            rows,
            cols,
            init,
        });
        self.specs.len() - 1
    }

    pub fn embedding(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.add(name, rows, cols, Init::TruncatedNormal(EMBEDDING_STD))
    }

    pub fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) -> LinearIds {
        LinearIds {
            w: self.add(format!("{prefix}.weight"), d_in, d_out, Init::FanIn(d_in)),
            b: self.add(format!("{prefix}.bias"), 1, d_out, Init::FanIn(d_in)),
        }
    }

    pub fn layer_norm(&mut self, prefix: &str, d: usize) -> LayerNormIds {
        LayerNormIds {
            gain: self.add(format!("{prefix}.gain"), 1, d, Init::Ones),
            bias: self.add(format!("{prefix}.bias"), 1, d, Init::Zeros),
        }
    }

    pub fn attention(&mut self, prefix: &str, d: usize) -> AttentionIds {
        AttentionIds {
            q: self.linear(&format!("{prefix}.query"), d, d),
            k: self.linear(&format!("{prefix}.key"), d, d),
            v: self.linear(&format!("{prefix}.value"), d, d),
            out: self.linear(&format!("{prefix}.out"), d, d),
        }
    }

    pub fn encoder_layer(&mut self, prefix: &str, d: usize, ff: usize) -> EncoderLayerIds {
        EncoderLayerIds {
            attn: self.attention(&format!("{prefix}.self_attn"), d),
            norm1: self.layer_norm(&format!("{prefix}.norm1"), d),
            ff1: self.linear(&format!("{prefix}.ff1"), d, ff),
            ff2: self.linear(&format!("{prefix}.ff2"), ff, d),
            norm2: self.layer_norm(&format!("{prefix}.norm2"), d),
        }
    }

    pub fn decoder_layer(&mut self, prefix: &str, d: usize, ff: usize) -> DecoderLayerIds {
        DecoderLayerIds {
            self_attn: self.attention(&format!("{prefix}.self_attn"), d),
            norm1: self.layer_norm(&format!("{prefix}.norm1"), d),
            cross_attn: self.attention(&format!("{prefix}.cross_attn"), d),
            norm2: self.layer_norm(&format!("{prefix}.norm2"), d),
            ff1: self.linear(&format!("{prefix}.ff1"), d, ff),
            ff2: self.linear(&format!("{prefix}.ff2"), ff, d),
            norm3: self.layer_norm(&format!("{prefix}.norm3"), d),
        }
    }
}

pub(crate) fn linear<T: Scalar>(tape: &mut Tape<'_, T>, ids: LinearIds, x: Var) -> Var {
    let w = tape.param(ids.w);
    let b = tape.param(ids.b);
    tape.linear(x, w, b)
}

pub(crate) fn layer_norm<T: Scalar>(tape: &mut Tape<'_, T>, ids: LayerNormIds, x: Var) -> Var {
    let g = tape.param(ids.gain);
    let b = tape.param(ids.bias);
    tape.layer_norm(x, g, b)
}

/// Multi-head scaled dot-product attention of `queries` over `keys_values`.
/// Returns the output and the per-head probability matrices.
pub(crate) fn attention<T: Scalar>(
    tape: &mut Tape<'_, T>,
    ids: AttentionIds,
    queries: Var,
    keys_values: Var,
    heads: usize,
    allowed: impl Fn(usize, usize) -> bool + Copy,
) -> (Var, Vec<Var>) {
    let d = tape.value(queries).cols();
    let dh = d / heads;
    let q = linear(tape, ids.q, queries);
    let q = tape.scale(q, T::lit(1.0 / (dh as f64).sqrt()));
    let k = linear(tape, ids.k, keys_values);
    let v = linear(tape, ids.v, keys_values);
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh),
                tape.slice_cols(k, h * dh, dh),
                tape.slice_cols(v, h * dh, dh),
            )
        };
        let scores = tape.matmul_t(qh, kh);
        let p = tape.masked_softmax(scores, allowed);
        probs.push(p);
        outs.push(tape.matmul(p, vh));
    }
    let joined = if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)
    };
    (linear(tape, ids.out, joined), probs)
}

fn feed_forward<T: Scalar>(tape: &mut Tape<'_, T>, ff1: LinearIds, ff2: LinearIds, x: Var) -> Var {
    let h = linear(tape, ff1, x);
    let h = tape.relu(h);
    linear(tape, ff2, h)
}

/// Post-norm encoder layer: attention and feed-forward sublayers, each with
/// a residual connection followed by layer normalization.
pub(crate) fn encoder_layer<T: Scalar>(
    tape: &mut Tape<'_, T>,
    ids: &EncoderLayerIds,
    x: Var,
    heads: usize,
    pad: &[bool],
) -> (Var, Vec<Var>) {
    let (a, probs) = attention(tape, ids.attn, x, x, heads, |_, c| !pad[c]);
    let a = tape.dropout(a);
    let x = tape.add(x, a);
    let x = layer_norm(tape, ids.norm1, x);
    let f = feed_forward(tape, ids.ff1, ids.ff2, x);
    let f = tape.dropout(f);
    let x = tape.add(x, f);
    (layer_norm(tape, ids.norm2, x), probs)
}

/// Post-norm decoder layer: causal self-attention, cross-attention over
/// `memory`, feed-forward. Also returns the cross-attention maps.
pub(crate) fn decoder_layer<T: Scalar>(
    tape: &mut Tape<'_, T>,
    ids: &DecoderLayerIds,
    x: Var,
    memory: Var,
    heads: usize,
) -> (Var, Vec<Var>) {
    let (a, _) = attention(tape, ids.self_attn, x, x, heads, |r, c| c <= r);
    let a = tape.dropout(a);
    let x = tape.add(x, a);
    let x = layer_norm(tape, ids.norm1, x);
    let (c, cross_attention) = attention(tape, ids.cross_attn, x, memory, heads, |_, _| true);
    let c = tape.dropout(c);
    let x = tape.add(x, c);
    let x = layer_norm(tape, ids.norm2, x);
    let f = feed_forward(tape, ids.ff1, ids.ff2, x);
    let f = tape.dropout(f);
    let x = tape.add(x, f);
    (layer_norm(tape, ids.norm3, x), cross_attention)
}
