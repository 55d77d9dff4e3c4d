//! Encoder-decoder with graph-augmented encoding.
//!
//! Pass 1 runs the encoder without bias over token embeddings plus positions.
//! Node features pooled from its output go through the graph transformer; the
//! resulting `V_men` rows are copied onto their tokens, scaled by `λ`, added
//! to the pass-2 input and layer-normalized. Pass 2 reuses the same encoder
//! with the fused graph bias spread over token pairs in every layer. A
//! teacher-forced decoder then scores the filled template.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Ontology};
use crate::error::{GamError, Result};
use crate::extraction::render_gold_template;
use crate::graph::{build_graph, check_coefficients, GraphOptions, MentionGraph, MentionNode};
use crate::graph_transformer::{
    add_node_positions, extract_node_features, GraphTransformer, GraphTransformerConfig,
};
use crate::input::{mark_trigger, wrap_with_prompt, BOS, EOS};
use crate::layers::{
    causal_mask, init_matrix, sinusoidal_positions, DecoderLayer, EncoderLayer, LayerNorm,
};
use crate::tape::{ParamId, ParamStore, Tape, Var};
use crate::tensor::{self, Tensor};
use crate::vocab::Vocab;

/// Which token states the node embeddings are added to before pass 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionSource {
    /// Token embeddings plus positions (the encoder's ordinary input).
    Embedding,
    /// Pass-1 encoder output.
    EncoderOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub graph_layers: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub use_coexistence: bool,
    pub use_coreference: bool,
    pub use_cotype: bool,
    pub use_graph_transformer: bool,
    pub use_node_embedding: bool,
    pub use_bias: bool,
    /// Graph transformer adds the bias in every layer, not only the first.
    pub bias_every_layer: bool,
    pub node_positions: bool,
    pub fusion_source: FusionSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            d_k: 16,
            encoder_layers: 2,
            decoder_layers: 2,
            graph_layers: 2,
            alpha: 0.3,
            beta: 0.4,
            lambda: 0.015,
            use_coexistence: true,
            use_coreference: true,
            use_cotype: true,
            use_graph_transformer: true,
            use_node_embedding: true,
            use_bias: true,
            bias_every_layer: true,
            node_positions: true,
            fusion_source: FusionSource::Embedding,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        check_coefficients(self.alpha, self.beta)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(GamError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_k == 0 {
            return Err(GamError::Config("model dims must be positive".into()));
        }
        self.graph_transformer_config().validate()
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            alpha: self.alpha,
            beta: self.beta,
            use_coexistence: self.use_coexistence,
            use_coreference: self.use_coreference,
            use_cotype: self.use_cotype,
            mirror_cotype: false,
        }
    }

    pub fn graph_transformer_config(&self) -> GraphTransformerConfig {
        GraphTransformerConfig {
            d_model: self.d_model,
            heads: self.heads,
            d_k: self.d_k,
            layers: self.graph_layers,
            bias_every_layer: self.bias_every_layer,
            node_positions: self.node_positions,
        }
    }

    /// `λ` after the node-embedding switch.
    pub fn effective_lambda(&self) -> f64 {
        if self.use_node_embedding {
            self.lambda
        } else {
            0.0
        }
    }
}

/// One training or inference example.
#[derive(Debug, Clone)]
pub struct Instance {
    pub doc_id: String,
    /// `X_p`.
    pub input_tokens: Vec<String>,
    pub input_ids: Vec<usize>,
    pub graph: MentionGraph,
    /// Gold filled template, without `[EOS]`.
    pub target_tokens: Vec<String>,
    /// Gold filled template ids ending in `[EOS]`.
    pub target_ids: Vec<usize>,
}

impl Instance {
    /// `[BOS]` followed by all target ids but the last.
    pub fn decoder_input(&self, vocab: &Vocab) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.target_ids.len());
        ids.push(vocab.special(BOS));
        ids.extend_from_slice(&self.target_ids[..self.target_ids.len() - 1]);
        ids
    }
}

pub fn build_instance(
    doc: &Document,
    ontology: &Ontology,
    vocab: &Vocab,
    graph_options: &GraphOptions,
) -> Result<Instance> {
    let schema = ontology.get(&doc.event_type)?;
    let marked = mark_trigger(&doc.tokens, doc.trigger_span)?;
    let input_tokens = wrap_with_prompt(&schema.template, &marked);
    let graph = build_graph(doc, ontology, graph_options)?;
    let target_tokens = render_gold_template(doc, ontology)?;
    let mut target_ids = vocab.encode(&target_tokens);
    target_ids.push(vocab.special(EOS));
    Ok(Instance {
        doc_id: doc.doc_id.clone(),
        input_ids: vocab.encode(&input_tokens),
        input_tokens,
        graph,
        target_tokens,
        target_ids,
    })
}

/// `N×K` indicator of token `i` lying in node `a`'s span.
pub fn token_membership(nodes: &[MentionNode], n_tokens: usize) -> Result<Tensor> {
    let k = nodes.len();
    let mut owner: Vec<Option<usize>> = vec![None; n_tokens];
    let mut data = vec![0.0; n_tokens * k];
    for (a, node) in nodes.iter().enumerate() {
        let s = node.token_span;
        if s.is_empty() || s.end > n_tokens {
            return Err(GamError::Span(format!("node {a} span {s} outside {n_tokens} tokens")));
        }
        for t in s.range() {
            if let Some(b) = owner[t] {
                return Err(GamError::Overlap {
                    doc_id: String::new(),
                    field: "nodes".into(),
                    detail: format!("nodes {b} and {a} share token {t}"),
                });
            }
            owner[t] = Some(a);
            data[t * k + a] = 1.0;
        }
    }
    Tensor::new(vec![n_tokens, k], data)
}

/// Spreads the `K×K` node bias over token pairs: `bias_tok[i,j] = fused[a,b]`
/// for `i` in node `a` and `j` in node `b`, zero for tokens in no node.
pub fn broadcast_node_bias(fused: &[f64], nodes: &[MentionNode], n_tokens: usize) -> Result<Tensor> {
    let k = nodes.len();
    if fused.len() != k * k {
        return Err(GamError::shape(format!("fused bias of {} entries for {k} nodes", fused.len())));
    }
    if k == 0 {
        return Ok(Tensor::zeros(vec![n_tokens, n_tokens]));
    }
    let m = token_membership(nodes, n_tokens)?;
    let left = tensor::matmul(m.data(), fused, n_tokens, k, k);
    let full = tensor::matmul_nt(&left, m.data(), n_tokens, k, n_tokens);
    Tensor::matrix(n_tokens, n_tokens, full)
}

/// `LN(v_t + λ·v_men)` per row, with unit gain and zero shift.
pub fn fuse_input_embeddings(v_t: &Tensor, v_men: &Tensor, lambda: f64, eps: f64) -> Result<Tensor> {
    if v_t.shape() != v_men.shape() {
        return Err(GamError::shape(format!("{:?} vs {:?}", v_t.shape(), v_men.shape())));
    }
    let (n, d) = v_t.dims2()?;
    let gain = vec![1.0; d];
    let shift = vec![0.0; d];
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let row: Vec<f64> = v_t.row(i).iter().zip(v_men.row(i)).map(|(a, b)| a + lambda * b).collect();
        out.extend(tensor::layer_norm(&row, &gain, &shift, eps)?);
    }
    Tensor::matrix(n, d, out)
}

/// Parameter handles of the whole network.
#[derive(Debug, Clone)]
pub struct Network {
    pub embedding: ParamId,
    pub input_norm: LayerNorm,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub graph: GraphTransformer,
    pub output: ParamId,
}

impl Network {
    fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, config: &ModelConfig, vocab_size: usize) -> Result<Self> {
        let d = config.d_model;
        let emb: Vec<f64> = (0..vocab_size * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let embedding = store.add("embedding", Tensor::matrix(vocab_size, d, emb)?);
        let input_norm = LayerNorm::new(store, "input_norm", d);
        let encoder = (0..config.encoder_layers)
            .map(|l| EncoderLayer::new(store, rng, &format!("encoder{l}"), d, config.heads, config.d_k))
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|l| DecoderLayer::new(store, rng, &format!("decoder{l}"), d, config.heads, config.d_k))
            .collect();
        let graph = GraphTransformer::new(store, rng, "graph", config.graph_transformer_config())?;
        let output = store.add("output", init_matrix(rng, d, vocab_size));
        Ok(Network {
            embedding,
            input_norm,
            encoder,
            decoder,
            graph,
            output,
        })
    }

    /// Token embeddings plus sinusoidal positions.
    fn embed(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let table = tape.param(store, self.embedding);
        let e = tape.gather_rows(table, ids)?;
        let d = tape.shape(e)[1];
        let pos = tape.constant(sinusoidal_positions(ids.len(), d));
        tape.add(e, pos)
    }

    fn run_encoder(&self, tape: &mut Tape, store: &ParamStore, x: Var, bias: Option<Var>) -> Result<Var> {
        let mut h = x;
        for layer in &self.encoder {
            h = layer.forward(tape, store, h, bias)?;
        }
        Ok(h)
    }

    /// Bias-free encoder over embeddings and positions.
    pub fn encode_pass1(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let x = self.embed(tape, store, ids)?;
        self.run_encoder(tape, store, x, None)
    }

    /// Graph-augmented encoding; returns the decoder memory.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        config: &ModelConfig,
        inst: &Instance,
    ) -> Result<Var> {
        let n = inst.input_ids.len();
        let d = config.d_model;
        let x = self.embed(tape, store, &inst.input_ids)?;
        let v_t = self.run_encoder(tape, store, x, None)?;
        let nodes = &inst.graph.nodes;
        let k = nodes.len();

        let zero_fused = vec![0.0; k * k];
        let fused = if config.use_bias { inst.graph.fused.data() } else { &zero_fused[..] };

        let (v_men_tok, tok_bias) = if k == 0 {
            (tape.constant(Tensor::zeros(vec![n, d])), Tensor::zeros(vec![n, n]))
        } else {
            let feats = extract_node_features(tape, v_t, nodes)?;
            let v_men = if config.use_graph_transformer {
                let b = tape.constant(Tensor::matrix(k, k, fused.to_vec())?);
                self.graph.forward(tape, store, feats, Some(b))?
            } else if config.node_positions {
                add_node_positions(tape, feats)?
            } else {
                feats
            };
            let member = tape.constant(token_membership(nodes, n)?);
            let spread = tape.matmul(member, v_men)?;
            (spread, broadcast_node_bias(fused, nodes, n)?)
        };

        let base = match config.fusion_source {
            FusionSource::Embedding => x,
            FusionSource::EncoderOutput => v_t,
        };
        let scaled = tape.scale(v_men_tok, config.effective_lambda());
        let fused_in = tape.add(base, scaled)?;
        let v = self.input_norm.forward(tape, store, fused_in)?;
        let bias = tape.constant(tok_bias);
        self.run_encoder(tape, store, v, Some(bias))
    }

    /// Decoder logits (`T×|V|`) for teacher-forced input ids.
    pub fn decode_logits(&self, tape: &mut Tape, store: &ParamStore, memory: Var, ids: &[usize]) -> Result<Var> {
        let mut y = self.embed(tape, store, ids)?;
        let causal = tape.constant(causal_mask(ids.len()));
        for layer in &self.decoder {
            y = layer.forward(tape, store, y, memory, causal)?;
        }
        let w = tape.param(store, self.output);
        tape.matmul(y, w)
    }

    /// `−Σ_t log p(y_t | y_<t, X)`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        config: &ModelConfig,
        vocab: &Vocab,
        inst: &Instance,
    ) -> Result<Var> {
        let memory = self.encode(tape, store, config, inst)?;
        let logits = self.decode_logits(tape, store, memory, &inst.decoder_input(vocab))?;
        tape.cross_entropy(logits, &inst.target_ids)
    }

    /// The same encoder-decoder with no graph machinery at all: one encoder
    /// pass over the normalized embeddings, no bias.
    pub fn plain_seq2seq_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        vocab: &Vocab,
        inst: &Instance,
    ) -> Result<Var> {
        let x = self.embed(tape, store, &inst.input_ids)?;
        let v = self.input_norm.forward(tape, store, x)?;
        let memory = self.run_encoder(tape, store, v, None)?;
        let logits = self.decode_logits(tape, store, memory, &inst.decoder_input(vocab))?;
        tape.cross_entropy(logits, &inst.target_ids)
    }
}

/// Configuration, vocabulary, parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub net: Network,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = Network::new(&mut store, &mut rng, &config, vocab.len())?;
        Ok(Model {
            config,
            vocab,
            store,
            net,
        })
    }

    /// Rebuilds handles for a parameter store loaded from disk.
    pub fn from_parts(config: ModelConfig, vocab: Vocab, store: ParamStore) -> Result<Self> {
        let fresh = Model::new(config, vocab, 0)?;
        if fresh.store.len() != store.len() {
            return Err(GamError::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                fresh.store.len(),
                store.len()
            )));
        }
        for ((name, want), (got_name, got)) in fresh.store.iter().zip(store.iter()) {
            if name != got_name || want.shape() != got.shape() {
                return Err(GamError::Checkpoint(format!(
                    "parameter {got_name} {:?} does not match {name} {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Model { store, ..fresh })
    }

    pub fn instance(&self, doc: &Document, ontology: &Ontology) -> Result<Instance> {
        build_instance(doc, ontology, &self.vocab, &self.config.graph_options())
    }

    pub fn loss(&self, inst: &Instance) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.net.loss(&mut tape, &self.store, &self.config, &self.vocab, inst)?;
        Ok(tape.scalar(l))
    }

    pub fn plain_seq2seq_loss(&self, inst: &Instance) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.net.plain_seq2seq_loss(&mut tape, &self.store, &self.vocab, inst)?;
        Ok(tape.scalar(l))
    }

    /// Loss and its gradient for every parameter, in parameter order.
    pub fn loss_and_gradients(&self, inst: &Instance) -> Result<(f64, Vec<(ParamId, Vec<f64>)>)> {
        let mut tape = Tape::new();
        let l = self.net.loss(&mut tape, &self.store, &self.config, &self.vocab, inst)?;
        let loss = tape.scalar(l);
        if !loss.is_finite() {
            return Err(GamError::NonFinite(format!("loss on {}", inst.doc_id)));
        }
        Ok((loss, tape.param_gradients(l)?))
    }

    /// Argmax decoding from `[BOS]` until `[EOS]` or `max_len` tokens; the
    /// returned ids include the `[EOS]` if one was produced.
    pub fn greedy_generate(&self, inst: &Instance, max_len: usize) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Err(GamError::Config("max_len must be at least 1".into()));
        }
        let mut tape = Tape::new();
        let m = self.net.encode(&mut tape, &self.store, &self.config, inst)?;
        let memory = tape.value(m).clone();
        let eos = self.vocab.special(EOS);
        let mut ids = vec![self.vocab.special(BOS)];
        while ids.len() <= max_len {
            let mut tape = Tape::new();
            let mem = tape.constant(memory.clone());
            let logits = self.net.decode_logits(&mut tape, &self.store, mem, &ids)?;
            let last = tape.value(logits).row(ids.len() - 1);
            let mut best = 0;
            for (j, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = j;
                }
            }
            ids.push(best);
            if best == eos {
                break;
            }
        }
        ids.remove(0);
        Ok(ids)
    }

    /// Generated template tokens with any trailing `[EOS]` removed.
    pub fn generate_tokens(&self, inst: &Instance, max_len: usize) -> Result<Vec<String>> {
        let mut ids = self.greedy_generate(inst, max_len)?;
        if ids.last() == Some(&self.vocab.special(EOS)) {
            ids.pop();
        }
        self.vocab.decode(&ids)
    }

    /// Test hook: a zero output projection makes every next-token
    /// distribution uniform.
    pub fn zero_output_projection(&mut self) {
        self.store.get_mut(self.net.output).data_mut().fill(0.0);
    }
}
