//! Semantic mention graph: mask and entity nodes, the co-existence,
//! co-reference and co-type relation matrices, and their fused attention bias.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{placeholder_index, Document, Ontology, Span};
use crate::error::{GamError, Result};
use crate::input::InputLayout;

/// Dense `k×k` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    k: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(k: usize) -> Self {
        SquareMatrix {
            k,
            data: vec![0.0; k * k],
        }
    }

    pub fn from_data(k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * k {
            return Err(GamError::shape(format!(
                "{} values for a {k}x{k} matrix",
                data.len()
            )));
        }
        Ok(SquareMatrix { k, data })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.k + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> SquareMatrix {
        let mut t = SquareMatrix::zeros(self.k);
        for i in 0..self.k {
            for j in 0..self.k {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn is_symmetric(&self) -> bool {
        *self == self.transpose()
    }

    /// Non-zero positions in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.k)
            .flat_map(|i| (0..self.k).map(move |j| (i, j)))
            .filter(|&(i, j)| self.get(i, j) != 0.0)
            .collect()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeKind {
    /// Argument placeholder in the prompt.
    Mask {
        role: String,
        allowed_types: BTreeSet<String>,
    },
    Entity {
        entity_type: String,
        cluster_id: usize,
        /// Span in the original document.
        doc_span: Span,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionNode {
    pub index: usize,
    #[serde(flatten)]
    pub kind: NodeKind,
    /// Span in the wrapped input `X_p`.
    pub token_span: Span,
    pub sentence_id: usize,
}

impl MentionNode {
    pub fn is_mask(&self) -> bool {
        matches!(self.kind, NodeKind::Mask { .. })
    }

    pub fn is_entity(&self) -> bool {
        !self.is_mask()
    }
}

/// Sentence id shared by all mask nodes; document sentences start at 1.
pub const PROMPT_SENTENCE: usize = 0;

/// Mask nodes (prompt order) followed by entity nodes (document order).
pub fn collect_nodes(doc: &Document, ontology: &Ontology) -> Result<Vec<MentionNode>> {
    let schema = ontology.get(&doc.event_type)?;
    let layout = InputLayout {
        prompt_len: schema.template.len(),
        trigger: doc.trigger_span,
    };
    let mut nodes = Vec::new();
    for (j, tok) in schema.template.iter().enumerate() {
        let Some(idx) = placeholder_index(tok) else {
            continue;
        };
        let role = schema
            .role_for_placeholder(idx)
            .ok_or_else(|| GamError::Ontology(format!("{}: no role for {tok}", doc.event_type)))?;
        let pos = layout.prompt_position(j);
        nodes.push(MentionNode {
            index: nodes.len(),
            kind: NodeKind::Mask {
                role: role.name.clone(),
                allowed_types: role.types.clone(),
            },
            token_span: Span::new(pos, pos + 1),
            sentence_id: PROMPT_SENTENCE,
        });
    }

    let mut mentions: Vec<_> = doc.entity_mentions.iter().collect();
    mentions.sort_by_key(|m| m.span);
    for m in mentions {
        let sentence = doc.sentence_of(m.span.start).ok_or_else(|| {
            GamError::Span(format!("{}: mention {} outside sentences", doc.doc_id, m.span))
        })?;
        nodes.push(MentionNode {
            index: nodes.len(),
            kind: NodeKind::Entity {
                entity_type: m.entity_type.clone(),
                cluster_id: m.cluster(),
                doc_span: m.span,
            },
            token_span: layout.doc_span(m.span),
            sentence_id: sentence + 1,
        });
    }
    Ok(nodes)
}

/// 1 between distinct nodes of the same sentence (the prompt is one sentence).
pub fn build_coexistence(nodes: &[MentionNode]) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(nodes.len());
    for a in nodes {
        for b in nodes {
            if a.index != b.index && a.sentence_id == b.sentence_id {
                m.set(a.index, b.index, 1.0);
            }
        }
    }
    m
}

/// 1 between distinct entity nodes of the same coreference cluster.
pub fn build_coreference(nodes: &[MentionNode]) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(nodes.len());
    for a in nodes {
        for b in nodes {
            if let (
                NodeKind::Entity { cluster_id: ca, .. },
                NodeKind::Entity { cluster_id: cb, .. },
            ) = (&a.kind, &b.kind)
            {
                if a.index != b.index && ca == cb {
                    m.set(a.index, b.index, 1.0);
                }
            }
        }
    }
    m
}

/// Directed mask → entity edges where the entity type is allowed for the role.
pub fn build_cotype(nodes: &[MentionNode]) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(nodes.len());
    for s in nodes {
        let NodeKind::Mask { allowed_types, .. } = &s.kind else {
            continue;
        };
        for t in nodes {
            if let NodeKind::Entity { entity_type, .. } = &t.kind {
                if allowed_types.contains(entity_type) {
                    m.set(s.index, t.index, 1.0);
                }
            }
        }
    }
    m
}

pub fn check_coefficients(alpha: f64, beta: f64) -> Result<()> {
    let ok = alpha.is_finite()
        && beta.is_finite()
        && alpha >= 0.0
        && beta >= 0.0
        && alpha + beta <= 1.0 + 1e-12;
    if ok {
        Ok(())
    } else {
        Err(GamError::Coef { alpha, beta })
    }
}

/// `α·m_ex + β·m_ref + (1−α−β)·m_typ`, entrywise.
pub fn fuse_bias(
    m_ex: &SquareMatrix,
    m_ref: &SquareMatrix,
    m_typ: &SquareMatrix,
    alpha: f64,
    beta: f64,
) -> Result<SquareMatrix> {
    check_coefficients(alpha, beta)?;
    let k = m_ex.size();
    if m_ref.size() != k || m_typ.size() != k {
        return Err(GamError::shape(format!(
            "fuse_bias sizes {k}, {}, {}",
            m_ref.size(),
            m_typ.size()
        )));
    }
    let gamma = 1.0 - alpha - beta;
    let data = m_ex
        .data
        .iter()
        .zip(&m_ref.data)
        .zip(&m_typ.data)
        .map(|((ex, rf), ty)| alpha * ex + beta * rf + gamma * ty)
        .collect();
    Ok(SquareMatrix { k, data })
}

/// Which relations feed the fused bias, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphOptions {
    pub alpha: f64,
    pub beta: f64,
    pub use_coexistence: bool,
    pub use_coreference: bool,
    pub use_cotype: bool,
    /// Also add entity → mask co-type edges.
    pub mirror_cotype: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            alpha: 0.3,
            beta: 0.4,
            use_coexistence: true,
            use_coreference: true,
            use_cotype: true,
            mirror_cotype: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MentionGraph {
    pub nodes: Vec<MentionNode>,
    pub m_ex: SquareMatrix,
    pub m_ref: SquareMatrix,
    pub m_typ: SquareMatrix,
    /// Fused bias after dropping any disabled relations.
    pub fused: SquareMatrix,
}

impl MentionGraph {
    pub fn k(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_masks(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_mask()).count()
    }
}

pub fn build_graph(doc: &Document, ontology: &Ontology, opts: &GraphOptions) -> Result<MentionGraph> {
    check_coefficients(opts.alpha, opts.beta)?;
    let nodes = collect_nodes(doc, ontology)?;
    let m_ex = build_coexistence(&nodes);
    let m_ref = build_coreference(&nodes);
    let mut m_typ = build_cotype(&nodes);
    if opts.mirror_cotype {
        let t = m_typ.transpose();
        for (i, j) in t.edges() {
            m_typ.set(i, j, 1.0);
        }
    }
    let k = nodes.len();
    let keep = |m: &SquareMatrix, on: bool| if on { m.clone() } else { SquareMatrix::zeros(k) };
    let fused = fuse_bias(
        &keep(&m_ex, opts.use_coexistence),
        &keep(&m_ref, opts.use_coreference),
        &keep(&m_typ, opts.use_cotype),
        opts.alpha,
        opts.beta,
    )?;
    Ok(MentionGraph {
        nodes,
        m_ex,
        m_ref,
        m_typ,
        fused,
    })
}

/// JSON form written by `build-graph`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    pub doc_id: String,
    pub k: usize,
    pub nodes: Vec<MentionNode>,
    pub m_ex: Vec<(usize, usize)>,
    pub m_ref: Vec<(usize, usize)>,
    pub m_typ: Vec<(usize, usize)>,
    /// Row-major `k×k`.
    pub fused: Vec<f64>,
}

impl GraphRecord {
    pub fn new(doc_id: &str, g: &MentionGraph) -> Self {
        GraphRecord {
            doc_id: doc_id.to_string(),
            k: g.k(),
            nodes: g.nodes.clone(),
            m_ex: g.m_ex.edges(),
            m_ref: g.m_ref.edges(),
            m_typ: g.m_typ.edges(),
            fused: g.fused.data().to_vec(),
        }
    }
}

/// Mean (out-)degree per relation, averaged over graphs with at least one node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub documents: usize,
    pub mean_nodes: f64,
    pub mean_degree_ex: f64,
    pub mean_degree_ref: f64,
    pub mean_degree_typ: f64,
}

impl GraphStats {
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a MentionGraph>) -> Self {
        let mut s = GraphStats::default();
        let mut counted = 0usize;
        for g in graphs {
            s.documents += 1;
            let k = g.k();
            if k == 0 {
                continue;
            }
            counted += 1;
            s.mean_nodes += k as f64;
            s.mean_degree_ex += g.m_ex.count_nonzero() as f64 / k as f64;
            s.mean_degree_ref += g.m_ref.count_nonzero() as f64 / k as f64;
            s.mean_degree_typ += g.m_typ.count_nonzero() as f64 / k as f64;
        }
        if counted > 0 {
            let n = counted as f64;
            s.mean_nodes /= n;
            s.mean_degree_ex /= n;
            s.mean_degree_ref /= n;
            s.mean_degree_typ /= n;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{conflict_ontology, driver_doc};
    use crate::corpus::EntityMention;
    use proptest::prelude::*;

    fn entity(index: usize, sentence_id: usize, cluster_id: usize, t: &str) -> MentionNode {
        MentionNode {
            index,
            kind: NodeKind::Entity {
                entity_type: t.into(),
                cluster_id,
                doc_span: Span::new(index, index + 1),
            },
            token_span: Span::new(index, index + 1),
            sentence_id,
        }
    }

    fn mask(index: usize, types: &[&str]) -> MentionNode {
        MentionNode {
            index,
            kind: NodeKind::Mask {
                role: format!("r{index}"),
                allowed_types: types.iter().map(|t| t.to_string()).collect(),
            },
            token_span: Span::new(index, index + 1),
            sentence_id: PROMPT_SENTENCE,
        }
    }

    #[test]
    fn conflict_prompt_with_three_mentions_has_eight_nodes() {
        let mut doc = driver_doc();
        doc.entity_mentions.truncate(3);
        doc.gold_arguments.truncate(2);
        let nodes = collect_nodes(&doc, &conflict_ontology()).unwrap();
        assert_eq!(nodes.len(), 8);
        assert!(nodes[..5].iter().all(MentionNode::is_mask));
        assert!(nodes[5..].iter().all(MentionNode::is_entity));
        assert_eq!(collect_nodes(&doc, &conflict_ontology()).unwrap(), nodes);

        // node spans point at the right tokens of X_p
        let schema = conflict_ontology().events["Conflict.Attack"].clone();
        let marked = crate::input::mark_trigger(&doc.tokens, doc.trigger_span).unwrap();
        let xp = crate::input::wrap_with_prompt(&schema.template, &marked);
        assert_eq!(xp[nodes[0].token_span.range()], ["<arg1>".to_string()]);
        assert_eq!(&xp[nodes[5].token_span.range()], doc.surface(Span::new(0, 2)));
        assert_eq!(&xp[nodes[6].token_span.range()], doc.surface(Span::new(4, 7)));
    }

    #[test]
    fn zero_mentions_leaves_only_masks() {
        let mut doc = driver_doc();
        doc.entity_mentions.clear();
        doc.gold_arguments.clear();
        assert_eq!(collect_nodes(&doc, &conflict_ontology()).unwrap().len(), 5);
    }

    #[test]
    fn unknown_event_type() {
        let mut doc = driver_doc();
        doc.event_type = "Nope".into();
        assert_eq!(
            collect_nodes(&doc, &conflict_ontology()).unwrap_err().code(),
            "E_ONTOLOGY"
        );
    }

    #[test]
    fn coexistence_same_sentence_only() {
        let nodes = vec![entity(0, 1, 0, "PER"), entity(1, 1, 1, "PER"), entity(2, 2, 2, "PER")];
        let m = build_coexistence(&nodes);
        assert_eq!(m.edges(), vec![(0, 1), (1, 0)]);

        let nodes = vec![entity(0, 1, 0, "PER"), entity(1, 2, 1, "PER"), entity(2, 3, 2, "PER")];
        assert_eq!(build_coexistence(&nodes).count_nonzero(), 0);
    }

    #[test]
    fn bomb_and_driver_share_an_edge() {
        let g = build_graph(&driver_doc(), &conflict_ontology(), &GraphOptions::default()).unwrap();
        // nodes 5 = Aaron Driver, 6 = a homemade bomb (same sentence)
        assert_eq!(g.m_ex.get(5, 6), 1.0);
        // mask-mask all connected, mask-entity never
        assert_eq!(g.m_ex.get(0, 1), 1.0);
        assert_eq!(g.m_ex.get(0, 5), 0.0);
    }

    #[test]
    fn coreference_pairs() {
        let nodes = vec![entity(0, 1, 7, "PER"), entity(1, 1, 3, "PER"), entity(2, 2, 7, "PER")];
        let m = build_coreference(&nodes);
        assert_eq!(m.edges(), vec![(0, 2), (2, 0)]);

        let nodes = vec![entity(0, 1, 0, "PER"), entity(1, 1, 1, "PER")];
        assert_eq!(build_coreference(&nodes).count_nonzero(), 0);
    }

    #[test]
    fn driver_chain_is_a_clique() {
        let mut doc = driver_doc();
        // add "Harun Abdurahman" as a fourth coreferent mention
        doc.tokens.extend(["Harun", "Abdurahman", "fled", "."].map(String::from));
        doc.sentence_spans.push(Span::new(17, 21));
        doc.entity_mentions.push(EntityMention::new(Span::new(17, 19), "PER", Some(0)));
        let g = build_graph(&doc, &conflict_ontology(), &GraphOptions::default()).unwrap();
        let chain: Vec<usize> = g
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Entity { cluster_id: 0, .. }))
            .map(|n| n.index)
            .collect();
        assert_eq!(chain.len(), 4);
        for &a in &chain {
            for &b in &chain {
                assert_eq!(g.m_ref.get(a, b), if a == b { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn cotype_is_directed_mask_to_entity() {
        let nodes = vec![mask(0, &["PER"]), entity(1, 1, 0, "PER")];
        let m = build_cotype(&nodes);
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 0), 0.0);

        let nodes = vec![mask(0, &["LOC"]), entity(1, 1, 0, "PER")];
        assert_eq!(build_cotype(&nodes).count_nonzero(), 0);

        let nodes = vec![mask(0, &["PER", "ORG"]), entity(1, 1, 0, "PER"), entity(2, 1, 1, "ORG")];
        assert_eq!(build_cotype(&nodes).edges(), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn mirror_cotype_flag() {
        let opts = GraphOptions {
            mirror_cotype: true,
            ..GraphOptions::default()
        };
        let g = build_graph(&driver_doc(), &conflict_ontology(), &opts).unwrap();
        assert!(g.m_typ.is_symmetric());
        assert_eq!(g.m_typ.get(5, 0), 1.0);
    }

    #[test]
    fn fuse_examples() {
        let one = SquareMatrix::from_data(1, vec![1.0]).unwrap();
        let zero = SquareMatrix::zeros(1);
        let f = fuse_bias(&one, &one, &zero, 0.3, 0.4).unwrap();
        assert!((f.get(0, 0) - 0.7).abs() < 1e-15);
        let f = fuse_bias(&zero, &zero, &one, 0.3, 0.4).unwrap();
        assert!((f.get(0, 0) - 0.3).abs() < 1e-15);
        let z3 = SquareMatrix::zeros(3);
        assert_eq!(fuse_bias(&z3, &z3, &z3, 0.3, 0.4).unwrap(), z3);
    }

    #[test]
    fn fuse_rejects_bad_coefficients() {
        let z = SquareMatrix::zeros(2);
        for (a, b) in [(-0.1, 0.2), (0.2, -0.1), (0.6, 0.5), (f64::NAN, 0.0)] {
            assert_eq!(fuse_bias(&z, &z, &z, a, b).unwrap_err().code(), "E_COEF");
        }
    }

    fn binary(k: usize) -> impl Strategy<Value = SquareMatrix> {
        proptest::collection::vec(0u8..2, k * k)
            .prop_map(move |v| SquareMatrix::from_data(k, v.into_iter().map(f64::from).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn fuse_matches_entrywise_recomputation(
            (ex, rf, ty) in (1usize..8).prop_flat_map(|k| (binary(k), binary(k), binary(k))),
            alpha in 0.0f64..1.0, frac in 0.0f64..1.0,
        ) {
            let beta = (1.0 - alpha) * frac;
            let f = fuse_bias(&ex, &rf, &ty, alpha, beta).unwrap();
            let k = ex.size();
            for i in 0..k {
                for j in 0..k {
                    let want = alpha * ex.get(i, j) + beta * rf.get(i, j) + (1.0 - alpha - beta) * ty.get(i, j);
                    prop_assert_eq!(f.get(i, j), want);
                    prop_assert!((0.0..=1.0 + 1e-12).contains(&f.get(i, j)));
                }
            }
        }
    }
}
