//! Span-level argument scoring.
//!
//! Identification credits a predicted span that matches a gold argument;
//! classification also requires the role to agree. Matching is greedy and
//! one-to-one: predictions are visited in document order and each consumes
//! the first still-unmatched gold it matches.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Ontology, Span};
use crate::error::{GamError, Result};
use crate::extraction::DocumentPredictions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Identification,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Exact,
    Head,
    Coref,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadRule {
    LastToken,
    FirstToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    pub head: HeadRule,
    /// Coref mode also credits a head match against any mention of the gold
    /// argument's cluster, not only an exact span match.
    pub coref_head_within_cluster: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            head: HeadRule::LastToken,
            coref_head_within_cluster: false,
        }
    }
}

impl ScoreOptions {
    pub fn head_of(&self, s: Span) -> usize {
        match self.head {
            HeadRule::LastToken => s.end - 1,
            HeadRule::FirstToken => s.start,
        }
    }
}

/// A gold argument with the mention spans coreferent with it (itself included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldTarget {
    pub role: String,
    pub span: Span,
    pub cluster: Vec<Span>,
}

/// Gold targets of a document, in document order.
pub fn gold_targets(doc: &Document) -> Vec<GoldTarget> {
    let clusters = doc.clusters();
    let mut out: Vec<GoldTarget> = doc
        .gold_pairs()
        .into_iter()
        .map(|(role, span)| {
            let cluster = doc
                .entity_mentions
                .iter()
                .find(|m| m.span == span)
                .and_then(|m| clusters.get(&m.cluster()).cloned())
                .unwrap_or_else(|| vec![span]);
            GoldTarget { role, span, cluster }
        })
        .collect();
    out.sort_by(|a, b| a.span.cmp(&b.span).then_with(|| a.role.cmp(&b.role)));
    out
}

/// Whether a predicted span earns credit for `gold` under `mode`.
pub fn spans_match(pred: Span, gold: &GoldTarget, mode: MatchMode, opts: &ScoreOptions) -> bool {
    let head = |s: Span| opts.head_of(s);
    match mode {
        MatchMode::Exact => pred == gold.span,
        MatchMode::Head => head(pred) == head(gold.span),
        MatchMode::Coref => {
            head(pred) == head(gold.span)
                || gold.cluster.contains(&pred)
                || (opts.coref_head_within_cluster && gold.cluster.iter().any(|&m| head(m) == head(pred)))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub predicted: usize,
    pub gold: usize,
    pub matched: usize,
}

impl Counts {
    pub fn add(&mut self, o: Counts) {
        self.predicted += o.predicted;
        self.gold += o.gold;
        self.matched += o.matched;
    }
}

/// Matches predicted `(role, span)` pairs against gold targets.
pub fn score_pairs(
    preds: &[(String, Span)],
    golds: &[GoldTarget],
    mode: MatchMode,
    task: Task,
    opts: &ScoreOptions,
) -> Counts {
    let mut order: Vec<&(String, Span)> = preds.iter().collect();
    order.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let mut used = vec![false; golds.len()];
    let mut matched = 0;
    for (role, span) in order {
        let hit = golds.iter().enumerate().position(|(i, g)| {
            !used[i]
                && (task == Task::Identification || g.role == *role)
                && spans_match(*span, g, mode, opts)
        });
        if let Some(i) = hit {
            used[i] = true;
            matched += 1;
        }
    }
    Counts {
        predicted: preds.len(),
        gold: golds.len(),
        matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

impl Prf {
    pub fn from_counts(c: Counts) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(c.matched, c.predicted);
        let r = ratio(c.matched, c.gold);
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Prf {
            precision: p,
            recall: r,
            f1,
            counts: c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: Task,
    pub mode: MatchMode,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    /// Fills that could not be located in their document; not scored.
    pub ungrounded: usize,
    pub rows: Vec<ReportRow>,
}

pub const TASKS: [Task; 2] = [Task::Identification, Task::Classification];
pub const MODES: [MatchMode; 3] = [MatchMode::Head, MatchMode::Coref, MatchMode::Exact];

impl EvalReport {
    pub fn get(&self, task: Task, mode: MatchMode) -> &Prf {
        &self
            .rows
            .iter()
            .find(|r| r.task == task && r.mode == mode)
            .expect("report holds every family")
            .prf
    }

    /// Argument classification, head match.
    pub fn ac_head_f1(&self) -> f64 {
        self.get(Task::Classification, MatchMode::Head).f1
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:<6} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
            "task", "match", "precision", "recall", "f1", "pred", "gold", "hit"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:<6} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>6}",
                format!("{:?}", r.task),
                format!("{:?}", r.mode).to_lowercase(),
                r.prf.precision,
                r.prf.recall,
                r.prf.f1,
                r.prf.counts.predicted,
                r.prf.counts.gold,
                r.prf.counts.matched
            );
        }
        let _ = writeln!(s, "documents {}  ungrounded {}", self.documents, self.ungrounded);
        s
    }
}

/// Rejects predicted roles the event type does not define.
fn check_roles(p: &DocumentPredictions, ontology: &Ontology) -> Result<()> {
    let schema = ontology.get(&p.event_type)?;
    for pred in &p.predictions {
        if schema.role(&pred.role).is_none() {
            return Err(GamError::Role {
                doc_id: p.doc_id.clone(),
                event_type: p.event_type.clone(),
                role: pred.role.clone(),
            });
        }
    }
    Ok(())
}

/// Scores grounded predictions against every document in `docs`; documents
/// without predictions contribute only gold counts.
pub fn evaluate(
    predictions: &[DocumentPredictions],
    docs: &[Document],
    ontology: &Ontology,
    opts: &ScoreOptions,
) -> Result<EvalReport> {
    let mut by_doc: BTreeMap<&str, &DocumentPredictions> = BTreeMap::new();
    for p in predictions {
        check_roles(p, ontology)?;
        if by_doc.insert(&p.doc_id, p).is_some() {
            return Err(GamError::Parse {
                location: p.doc_id.clone(),
                detail: "duplicate predictions for document".into(),
            });
        }
    }
    let known: BTreeMap<&str, ()> = docs.iter().map(|d| (d.doc_id.as_str(), ())).collect();
    if let Some(extra) = by_doc.keys().find(|k| !known.contains_key(*k)) {
        return Err(GamError::Parse {
            location: extra.to_string(),
            detail: "predictions for a document not in the split".into(),
        });
    }

    let mut totals: BTreeMap<(Task, MatchMode), Counts> = BTreeMap::new();
    let mut ungrounded = 0;
    for doc in docs {
        let golds = gold_targets(doc);
        let preds: Vec<(String, Span)> = match by_doc.get(doc.doc_id.as_str()) {
            Some(p) => {
                ungrounded += p.ungrounded();
                p.grounded().map(|(r, s)| (r.to_string(), s)).collect()
            }
            None => Vec::new(),
        };
        for task in TASKS {
            for mode in MODES {
                totals
                    .entry((task, mode))
                    .or_default()
                    .add(score_pairs(&preds, &golds, mode, task, opts));
            }
        }
    }
    let rows = TASKS
        .iter()
        .flat_map(|&task| MODES.iter().map(move |&mode| (task, mode)))
        .map(|(task, mode)| ReportRow {
            task,
            mode,
            prf: Prf::from_counts(totals.get(&(task, mode)).copied().unwrap_or_default()),
        })
        .collect();
    Ok(EvalReport {
        documents: docs.len(),
        ungrounded,
        rows,
    })
}

/// Predictions that reproduce the gold arguments exactly.
pub fn gold_as_predictions(doc: &Document) -> DocumentPredictions {
    use crate::extraction::Prediction;
    let mut predictions: Vec<Prediction> = doc
        .gold_pairs()
        .into_iter()
        .map(|(role, span)| Prediction {
            role,
            surface: doc.surface(span).to_vec(),
            span: Some(span),
        })
        .collect();
    predictions.sort_by(|a, b| a.span.cmp(&b.span));
    DocumentPredictions {
        doc_id: doc.doc_id.clone(),
        event_type: doc.event_type.clone(),
        predictions,
    }
}
