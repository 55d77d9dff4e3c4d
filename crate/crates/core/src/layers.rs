//! Transformer building blocks recorded on a [`Tape`].

use rand::Rng;

use crate::error::{GamError, Result};
use crate::tape::{ParamId, ParamStore, Tape, Var};
use crate::tensor::Tensor;

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` matrix.
pub(crate) fn init_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

fn ones(n: usize) -> Tensor {
    Tensor::vector(vec![1.0; n]).expect("positive length")
}

fn zeros(n: usize) -> Tensor {
    Tensor::zeros(vec![n])
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{prefix}.gain"), ones(d)),
            bias: store.add(format!("{prefix}.bias"), zeros(d)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm_rows(x, g, b)
    }
}

/// `d → 4d → d` with GELU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, d: usize) -> Self {
        let hidden = 4 * d;
        FeedForward {
            w1: store.add(format!("{prefix}.w1"), init_matrix(rng, d, hidden)),
            b1: store.add(format!("{prefix}.b1"), zeros(hidden)),
            w2: store.add(format!("{prefix}.w2"), init_matrix(rng, hidden, d)),
            b2: store.add(format!("{prefix}.b2"), zeros(d)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let [w1, b1, w2, b2] = [self.w1, self.b1, self.w2, self.b2].map(|id| tape.param(store, id));
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.gelu(h);
        let o = tape.matmul(h, w2)?;
        tape.add_row(o, b2)
    }
}

/// Multi-head attention whose score matrix can carry an additive bias.
///
/// Per head: `softmax(Q Kᵀ / sqrt(d_k) + bias) V`; heads are concatenated and
/// projected by `W^O ((H·d_k) × d)`. The same bias is added in every head.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: ParamId,
    pub d_k: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        d: usize,
        heads: usize,
        d_k: usize,
    ) -> Self {
        let mut proj = |name: &str| -> Vec<ParamId> {
            (0..heads)
                .map(|h| store.add(format!("{prefix}.{name}{h}"), init_matrix(rng, d, d_k)))
                .collect()
        };
        let wq = proj("q");
        let wk = proj("k");
        let wv = proj("v");
        let wo = store.add(format!("{prefix}.o"), init_matrix(rng, heads * d_k, d));
        MultiHeadAttention { wq, wk, wv, wo, d_k }
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    /// Returns the projected output and each head's attention weights.
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        bias: Option<Var>,
    ) -> Result<(Var, Vec<Var>)> {
        let nq = tape.shape(queries)[0];
        let nk = tape.shape(keys)[0];
        if let Some(b) = bias {
            if tape.shape(b) != [nq, nk] {
                return Err(GamError::shape(format!(
                    "attention bias {:?} for {nq} queries and {nk} keys",
                    tape.shape(b)
                )));
            }
        }
        let scale = 1.0 / (self.d_k as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads());
        let mut weights = Vec::with_capacity(self.heads());
        for h in 0..self.heads() {
            let [wq, wk, wv] = [self.wq[h], self.wk[h], self.wv[h]].map(|id| tape.param(store, id));
            let q = tape.matmul(queries, wq)?;
            let k = tape.matmul(keys, wk)?;
            let v = tape.matmul(keys, wv)?;
            let s = tape.matmul_t(q, k)?;
            let mut s = tape.scale(s, scale);
            if let Some(b) = bias {
                s = tape.add(s, b)?;
            }
            let a = tape.softmax_rows(s)?;
            outs.push(tape.matmul(a, v)?);
            weights.push(a);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        let wo = tape.param(store, self.wo);
        Ok((tape.matmul(cat, wo)?, weights))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        bias: Option<Var>,
    ) -> Result<Var> {
        Ok(self.forward_with_weights(tape, store, queries, keys, bias)?.0)
    }
}

/// Attention → residual → norm → feed-forward → residual → norm.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        d: usize,
        heads: usize,
        d_k: usize,
    ) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(store, rng, &format!("{prefix}.attn"), d, heads, d_k),
            norm1: LayerNorm::new(store, &format!("{prefix}.ln1"), d),
            ff: FeedForward::new(store, rng, &format!("{prefix}.ff"), d),
            norm2: LayerNorm::new(store, &format!("{prefix}.ln2"), d),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        bias: Option<Var>,
    ) -> Result<Var> {
        let a = self.attn.forward(tape, store, x, x, bias)?;
        let h = tape.add(x, a)?;
        let h = self.norm1.forward(tape, store, h)?;
        let f = self.ff.forward(tape, store, h)?;
        let o = tape.add(h, f)?;
        self.norm2.forward(tape, store, o)
    }
}

/// Masked self-attention, cross-attention over encoder memory, feed-forward;
/// each followed by residual and norm.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        d: usize,
        heads: usize,
        d_k: usize,
    ) -> Self {
        DecoderLayer {
            self_attn: MultiHeadAttention::new(store, rng, &format!("{prefix}.self"), d, heads, d_k),
            norm1: LayerNorm::new(store, &format!("{prefix}.ln1"), d),
            cross_attn: MultiHeadAttention::new(store, rng, &format!("{prefix}.cross"), d, heads, d_k),
            norm2: LayerNorm::new(store, &format!("{prefix}.ln2"), d),
            ff: FeedForward::new(store, rng, &format!("{prefix}.ff"), d),
            norm3: LayerNorm::new(store, &format!("{prefix}.ln3"), d),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        y: Var,
        memory: Var,
        causal: Var,
    ) -> Result<Var> {
        let a = self.self_attn.forward(tape, store, y, y, Some(causal))?;
        let h = tape.add(y, a)?;
        let h = self.norm1.forward(tape, store, h)?;
        let c = self.cross_attn.forward(tape, store, h, memory, None)?;
        let h2 = tape.add(h, c)?;
        let h2 = self.norm2.forward(tape, store, h2)?;
        let f = self.ff.forward(tape, store, h2)?;
        let o = tape.add(h2, f)?;
        self.norm3.forward(tape, store, o)
    }
}

/// Large finite negative used to mask attention scores.
pub const MASKED: f64 = -1e9;

/// `n×n` additive mask hiding future positions.
pub fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = MASKED;
        }
    }
    Tensor::matrix(n, n, data).expect("positive size")
}

/// Fixed sinusoidal table: `pe[p, 2i] = sin(p / 10000^(2i/d))`,
/// `pe[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for p in 0..n {
        for i in (0..d).step_by(2) {
            let angle = p as f64 / 10000f64.powf(i as f64 / d as f64);
            data[p * d + i] = angle.sin();
            if i + 1 < d {
                data[p * d + i + 1] = angle.cos();
            }
        }
    }
    Tensor::matrix(n, d, data).expect("positive size")
}
