//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive appends one node holding its output value and the indices
//! of its inputs. Nodes are created in topological order, so the backward pass
//! is a single reverse sweep that visits each recorded operation once.
//! Parameters enter the tape as leaves tagged with their [`ParamId`]; the sweep
//! accumulates their adjoints into the parameter gradient buffers.

use std::collections::{BTreeMap, HashMap};

use crate::error::{GamError, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value.into_param());
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds `scale * grad` into the gradient buffer of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64], scale: f64) {
        let buf = self.tensors[id.0]
            .grad_mut()
            .expect("parameters always carry a gradient buffer");
        for (g, d) in buf.iter_mut().zip(grad) {
            *g += scale * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
        /// Normalized input x̂ and 1/σ per row, kept for the backward pass.
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// Record of a forward computation, owned by one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Trainable input; repeated calls for one parameter share a leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        // grads live in the store, not on the tape copy
        let src = store.get(id);
        let value =
            Tensor::new(src.shape().to_vec(), src.data().to_vec()).expect("valid parameter shape");
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(GamError::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn with_data(&self, like: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(like).to_vec(), data).expect("same shape as input")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let t = self.with_data(a, data);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let t = self.with_data(a, data);
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let t = self.with_data(a, data);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.data(a).iter().map(|x| c * x).collect();
        let t = self.with_data(a, data);
        self.push(t, Op::Scale(a, c))
    }

    /// Adds a length-`cols` vector to every row of a matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(m)?;
        if self.value(row).numel() != c {
            return Err(GamError::shape(format!(
                "add_row: {c} columns vs vector of {}",
                self.value(row).numel()
            )));
        }
        let rv = self.data(row);
        let mut data = self.data(m).to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += rv[j];
            }
        }
        let t = self.with_data(m, data);
        Ok(self.push(t, Op::AddRow(m, row)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(GamError::shape(format!("matmul {m}x{k} · {k2}x{n}")));
        }
        let data = tensor::matmul(self.data(a), self.data(b), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(GamError::shape(format!("matmul_t {m}x{k} · ({n}x{k2})ᵀ")));
        }
        let data = tensor::matmul_nt(self.data(a), self.data(b), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if self.data(a).iter().any(|x| x.is_nan()) {
            return Err(GamError::NonFinite("softmax_rows input".into()));
        }
        let data = tensor::softmax_rows_raw(self.data(a), c);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::SoftmaxRows(a)))
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(GamError::shape(format!(
                "layer_norm: width {c}, gain {}, bias {}",
                self.value(gain).numel(),
                self.value(bias).numel()
            )));
        }
        let (g, b) = (self.data(gain), self.data(bias));
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for (i, row) in self.data(x).chunks(c).enumerate() {
            let (mean, is) = tensor::moments(row, LN_EPS);
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let t = self.with_data(x, out);
        Ok(self.push(
            t,
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| gelu(x)).collect();
        let t = self.with_data(a, data);
        self.push(t, Op::Gelu(a))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if len == 0 || start + len > c {
            return Err(GamError::shape(format!(
                "slice_cols {start}..{} of {c}",
                start + len
            )));
        }
        let src = self.data(a);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Tensor::matrix(r, len, data)?, Op::SliceCols { x: a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| GamError::shape("concat_cols of nothing"))?;
        let (r, _) = self.dims(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims(p)?;
            if pr != r {
                return Err(GamError::shape(format!("concat_cols rows {pr} vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::matrix(r, total, data)?, Op::ConcatCols(parts.to_vec())))
    }

    /// Row lookup (embedding).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table)?;
        if ids.is_empty() {
            return Err(GamError::shape("gather_rows with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(GamError::Vocab(format!("id {bad} outside table of {r} rows")));
        }
        let src = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            Tensor::matrix(ids.len(), c, data)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `−Σ_i log softmax(logits_i)[targets_i]` over the rows of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits)?;
        if targets.len() != r {
            return Err(GamError::shape(format!(
                "cross_entropy: {r} rows vs {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(GamError::Vocab(format!("target {bad} outside {c} classes")));
        }
        let x = self.data(logits);
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[targets[i]];
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Adjoint of every node with respect to a scalar `loss`.
    fn adjoints(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        if self.value(loss).numel() != 1 {
            return Err(GamError::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
            match &mut adj[v.0] {
                Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
                slot @ None => *slot = Some(g.to_vec()),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut adj, *a, &g);
                    acc(&mut adj, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(&mut adj, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect();
                    acc(&mut adj, *a, &ga);
                    acc(&mut adj, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| c * x).collect();
                    acc(&mut adj, *a, &ga);
                }
                Op::AddRow(m, row) => {
                    let c = self.value(*row).numel();
                    let mut gr = vec![0.0; c];
                    for chunk in g.chunks(c) {
                        gr.iter_mut().zip(chunk).for_each(|(s, x)| *s += x);
                    }
                    acc(&mut adj, *m, &g);
                    acc(&mut adj, *row, &gr);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a)?;
                    let (_, n) = self.dims(*b)?;
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    let ga = tensor::matmul_nt(&g, self.data(*b), m, n, k);
                    let gb = tensor::matmul_tn(self.data(*a), &g, m, k, n);
                    acc(&mut adj, *a, &ga);
                    acc(&mut adj, *b, &gb);
                }
                Op::MatMulNt(a, b) => {
                    let (m, k) = self.dims(*a)?;
                    let (n, _) = self.dims(*b)?;
                    // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                    let ga = tensor::matmul(&g, self.data(*b), m, n, k);
                    let gb = tensor::matmul_tn(&g, self.data(*a), m, n, k);
                    acc(&mut adj, *a, &ga);
                    acc(&mut adj, *b, &gb);
                }
                Op::Transpose(a) => {
                    let (r, c) = self.dims(*a)?;
                    acc(&mut adj, *a, &tensor::transpose(&g, c, r));
                }
                Op::SoftmaxRows(a) => {
                    let (_, c) = self.dims(*a)?;
                    let y = node.value.data();
                    let mut ga = vec![0.0; g.len()];
                    for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            out[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut adj, *a, &ga);
                }
                Op::LayerNormRows {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (_, c) = self.dims(*x)?;
                    let gv = self.data(*gain);
                    let mut gx = vec![0.0; g.len()];
                    let mut gg = vec![0.0; c];
                    let mut gb = vec![0.0; c];
                    let n = c as f64;
                    for (i, gr) in g.chunks(c).enumerate() {
                        let h = &xhat[i * c..(i + 1) * c];
                        let mut dh = vec![0.0; c];
                        for j in 0..c {
                            gg[j] += gr[j] * h[j];
                            gb[j] += gr[j];
                            dh[j] = gr[j] * gv[j];
                        }
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] =
                                inv_std[i] * (dh[j] - sum_dh / n - h[j] * sum_dh_h / n);
                        }
                    }
                    acc(&mut adj, *x, &gx);
                    acc(&mut adj, *gain, &gg);
                    acc(&mut adj, *bias, &gb);
                }
                Op::Gelu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.data(*a))
                        .map(|(gv, &x)| gv * gelu_grad(x))
                        .collect();
                    acc(&mut adj, *a, &ga);
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.dims(*x)?;
                    let len = node.value.shape()[1];
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        gx[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    acc(&mut adj, *x, &gx);
                }
                Op::ConcatCols(parts) => {
                    let (r, total) = node.value.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let (_, w) = self.dims(p)?;
                        let mut gp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        acc(&mut adj, p, &gp);
                        offset += w;
                    }
                }
                Op::GatherRows { table, ids } => {
                    let (r, c) = self.dims(*table)?;
                    let mut gt = vec![0.0; r * c];
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..c {
                            gt[id * c + j] += g[row * c + j];
                        }
                    }
                    acc(&mut adj, *table, &gt);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    acc(&mut adj, *a, &vec![g[0]; n]);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let c = probs.len() / targets.len();
                    let mut gl: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                    for (i, &t) in targets.iter().enumerate() {
                        gl[i * c + t] -= g[0];
                    }
                    acc(&mut adj, *logits, &gl);
                }
            }
            adj[idx] = Some(g);
        }
        Ok(adj)
    }

    /// Gradient of `loss` with respect to every parameter leaf on the tape.
    pub fn param_gradients(&self, loss: Var) -> Result<Vec<(ParamId, Vec<f64>)>> {
        let mut adj = self.adjoints(loss)?;
        let mut out: Vec<(ParamId, Vec<f64>)> = self
            .params
            .iter()
            .filter(|(_, v)| v.0 <= loss.0)
            .map(|(&id, v)| {
                let g = adj[v.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; self.value(*v).numel()]);
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    /// Gradient of `loss` with respect to an arbitrary node.
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Vec<f64>> {
        let mut adj = self.adjoints(loss)?;
        Ok(adj
            .get_mut(wrt.0)
            .and_then(Option::take)
            .unwrap_or_else(|| vec![0.0; self.value(wrt).numel()]))
    }

    /// Accumulates `d loss / d param` into each parameter's gradient buffer.
    /// Calling it twice without zeroing doubles the gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        for (id, g) in self.param_gradients(loss)? {
            store.accumulate_grad(id, &g, 1.0);
        }
        Ok(())
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// max over entries of |analytic − numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Central-difference gradient check over every entry of every parameter.
///
/// `f` builds the scalar loss on a fresh tape; it must be deterministic.
pub fn grad_check<F>(store: &mut ParamStore, f: F, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let analytic: HashMap<ParamId, Vec<f64>> = tape.param_gradients(loss)?.into_iter().collect();
    drop(tape);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        Ok(t.scalar(l))
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        for i in 0..n {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(&id).map_or(0.0, |g| g[i]);
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.entries_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
