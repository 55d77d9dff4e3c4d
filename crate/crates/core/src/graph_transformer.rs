//! Mention-graph transformer: node features pooled from token states, then a
//! stack of self-attention layers whose scores carry the fused graph bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GamError, Result};
use crate::graph::MentionNode;
use crate::layers::{sinusoidal_positions, EncoderLayer};
use crate::tape::{ParamStore, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphTransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub layers: usize,
    /// Add the graph bias in every layer rather than only the first.
    pub bias_every_layer: bool,
    pub node_positions: bool,
}

impl Default for GraphTransformerConfig {
    fn default() -> Self {
        GraphTransformerConfig {
            d_model: 64,
            heads: 4,
            d_k: 16,
            layers: 2,
            bias_every_layer: true,
            node_positions: true,
        }
    }
}

impl GraphTransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(GamError::Config(format!(
                "graph transformer needs at least 2 layers, got {}",
                self.layers
            )));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_k == 0 {
            return Err(GamError::Config("graph transformer dims must be positive".into()));
        }
        Ok(())
    }
}

/// `K×N` matrix whose row `k` averages the tokens of node `k`'s span.
pub fn node_pooling_matrix(nodes: &[MentionNode], n_tokens: usize) -> Result<Tensor> {
    let mut data = vec![0.0; nodes.len() * n_tokens];
    for (k, node) in nodes.iter().enumerate() {
        let s = node.token_span;
        if s.is_empty() || s.end > n_tokens {
            return Err(GamError::Span(format!(
                "node {k} span {s} outside input of {n_tokens} tokens"
            )));
        }
        let w = 1.0 / s.len() as f64;
        for t in s.range() {
            data[k * n_tokens + t] = w;
        }
    }
    Tensor::matrix(nodes.len(), n_tokens, data)
}

/// Mean of each node's token representations: `K×d` from `N×d`.
pub fn extract_node_features(tape: &mut Tape, token_reps: Var, nodes: &[MentionNode]) -> Result<Var> {
    let n = tape.shape(token_reps)[0];
    let pool = tape.constant(node_pooling_matrix(nodes, n)?);
    tape.matmul(pool, token_reps)
}

/// Adds a sinusoidal encoding of node index.
pub fn add_node_positions(tape: &mut Tape, v: Var) -> Result<Var> {
    let [k, d] = [tape.shape(v)[0], tape.shape(v)[1]];
    let pe = tape.constant(sinusoidal_positions(k, d));
    tape.add(v, pe)
}

#[derive(Debug, Clone)]
pub struct GraphTransformer {
    pub config: GraphTransformerConfig,
    pub layers: Vec<EncoderLayer>,
}

impl GraphTransformer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        config: GraphTransformerConfig,
    ) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|l| {
                EncoderLayer::new(
                    store,
                    rng,
                    &format!("{prefix}.layer{l}"),
                    config.d_model,
                    config.heads,
                    config.d_k,
                )
            })
            .collect();
        Ok(GraphTransformer { config, layers })
    }

    /// Output of every layer, first to last.
    pub fn layer_outputs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        node_features: Var,
        bias: Option<Var>,
    ) -> Result<Vec<Var>> {
        let shape = tape.shape(node_features).to_vec();
        if shape.len() != 2 || shape[1] != self.config.d_model {
            return Err(GamError::shape(format!(
                "node features {shape:?}, expected K×{}",
                self.config.d_model
            )));
        }
        let mut v = if self.config.node_positions {
            add_node_positions(tape, node_features)?
        } else {
            node_features
        };
        let mut outs = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let b = if l == 0 || self.config.bias_every_layer { bias } else { None };
            v = layer.forward(tape, store, v, b)?;
            outs.push(v);
        }
        Ok(outs)
    }

    /// `V_men`: the mean of the last two layer outputs.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        node_features: Var,
        bias: Option<Var>,
    ) -> Result<Var> {
        let outs = self.layer_outputs(tape, store, node_features, bias)?;
        let n = outs.len();
        let s = tape.add(outs[n - 2], outs[n - 1])?;
        Ok(tape.scale(s, 0.5))
    }
}
