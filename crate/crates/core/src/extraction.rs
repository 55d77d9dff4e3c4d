//! Filled templates: rendering gold targets, parsing generations back into
//! role fills, and grounding fills to document spans.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{placeholder_index, Document, EventSchema, Ontology, Span};
use crate::error::Result;
use crate::input::AND;

/// Role name → fills, each fill a token list.
pub type RoleFills = BTreeMap<String, Vec<Vec<String>>>;

/// Replaces each placeholder with its role's fills joined by `and`; roles
/// without fills keep the placeholder.
pub fn render_template(schema: &EventSchema, fills: &RoleFills) -> Vec<String> {
    let mut out = Vec::with_capacity(schema.template.len());
    for tok in &schema.template {
        let role_fills = placeholder_index(tok)
            .and_then(|i| schema.role_for_placeholder(i))
            .and_then(|r| fills.get(&r.name))
            .filter(|f| !f.is_empty());
        match role_fills {
            Some(fs) => {
                for (i, f) in fs.iter().enumerate() {
                    if i > 0 {
                        out.push(AND.to_string());
                    }
                    out.extend(f.iter().cloned());
                }
            }
            None => out.push(tok.clone()),
        }
    }
    out
}

/// Gold surfaces per role, spans in document order.
pub fn gold_fills(doc: &Document) -> RoleFills {
    let mut fills = RoleFills::new();
    for arg in &doc.gold_arguments {
        let mut spans = arg.spans.clone();
        spans.sort();
        let entry = fills.entry(arg.role.clone()).or_default();
        entry.extend(spans.iter().map(|s| doc.surface(*s).to_vec()));
    }
    fills
}

pub fn render_gold_template(doc: &Document, ontology: &Ontology) -> Result<Vec<String>> {
    Ok(render_template(ontology.get(&doc.event_type)?, &gold_fills(doc)))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTemplate {
    pub fills: RoleFills,
    pub diagnostics: Vec<String>,
}

enum Part<'a> {
    Literal(&'a [String]),
    Slot(usize),
}

fn template_parts(template: &[String]) -> Vec<Part<'_>> {
    let mut parts = Vec::new();
    let mut start = 0;
    for (i, tok) in template.iter().enumerate() {
        if let Some(idx) = placeholder_index(tok) {
            parts.push(Part::Literal(&template[start..i]));
            parts.push(Part::Slot(idx));
            start = i + 1;
        }
    }
    parts.push(Part::Literal(&template[start..]));
    parts
}

fn find_from(hay: &[String], needle: &[String], from: usize) -> Option<usize> {
    if needle.is_empty() {
        return Some(from.min(hay.len()));
    }
    (from..hay.len().saturating_sub(needle.len() - 1)).find(|&i| hay[i..i + needle.len()] == *needle)
}

fn split_fills(gap: &[String]) -> Vec<Vec<String>> {
    gap.split(|t| t == AND)
        .map(|piece| {
            piece
                .iter()
                .filter(|t| placeholder_index(t).is_none())
                .cloned()
                .collect::<Vec<_>>()
        })
        .filter(|p| !p.is_empty())
        .collect()
}

/// Aligns the template's literal segments against `generated` as ordered
/// anchors (earliest occurrence after the previous anchor); the tokens
/// between two anchors fill the placeholder they enclose.
pub fn parse_filled_template(
    generated: &[String],
    template: &[String],
    schema: &EventSchema,
) -> ParsedTemplate {
    let parts = template_parts(template);
    let mut parsed = ParsedTemplate::default();
    let Part::Literal(first) = parts[0] else {
        unreachable!("parts start with a literal")
    };
    let mut pos = match find_from(generated, first, 0) {
        Some(at) => at + first.len(),
        None => {
            parsed
                .diagnostics
                .push(format!("template prefix {:?} not found", first.join(" ")));
            return parsed;
        }
    };
    for pair in parts[1..].chunks(2) {
        let [Part::Slot(idx), Part::Literal(lit)] = pair else {
            unreachable!("slots and literals alternate")
        };
        let is_last = std::ptr::eq(pair.last().unwrap(), parts.last().unwrap());
        let end = if is_last && lit.is_empty() {
            Some(generated.len())
        } else {
            find_from(generated, lit, pos)
        };
        let Some(end) = end else {
            parsed.diagnostics.push(format!(
                "anchor {:?} after <arg{idx}> not found; later slots left empty",
                lit.join(" ")
            ));
            break;
        };
        let fills = split_fills(&generated[pos..end]);
        pos = end + lit.len();
        if fills.is_empty() {
            continue;
        }
        match schema.role_for_placeholder(*idx) {
            Some(role) => parsed.fills.entry(role.name.clone()).or_default().extend(fills),
            None => parsed.diagnostics.push(format!("<arg{idx}> has no role")),
        }
    }
    parsed
}

/// Earliest exact occurrence of `surface` in the document; failing that, the
/// earliest mention whose last token equals the surface's last token.
pub fn ground_argument(surface: &[String], doc: &Document) -> Option<Span> {
    if surface.is_empty() {
        return None;
    }
    if let Some(at) = find_from(&doc.tokens, surface, 0) {
        return Some(Span::new(at, at + surface.len()));
    }
    let last = surface.last()?;
    doc.entity_mentions
        .iter()
        .map(|m| m.span)
        .filter(|s| doc.tokens[s.end - 1] == *last)
        .min()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub role: String,
    #[serde(with = "joined")]
    pub surface: Vec<String>,
    pub span: Option<Span>,
}

mod joined {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tokens: &[String], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&tokens.join(" "))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.split_whitespace().map(String::from).collect())
    }
}

/// One line of `predict` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentPredictions {
    pub doc_id: String,
    pub event_type: String,
    pub predictions: Vec<Prediction>,
}

impl DocumentPredictions {
    pub fn grounded(&self) -> impl Iterator<Item = (&str, Span)> {
        self.predictions
            .iter()
            .filter_map(|p| p.span.map(|s| (p.role.as_str(), s)))
    }

    pub fn ungrounded(&self) -> usize {
        self.predictions.iter().filter(|p| p.span.is_none()).count()
    }
}

/// Parses a generated template and grounds every fill.
pub fn extract_predictions(
    generated: &[String],
    doc: &Document,
    ontology: &Ontology,
) -> Result<(DocumentPredictions, Vec<String>)> {
    let schema = ontology.get(&doc.event_type)?;
    let parsed = parse_filled_template(generated, &schema.template, schema);
    let mut diagnostics = parsed.diagnostics;
    let mut predictions = Vec::new();
    for (role, fills) in parsed.fills {
        for surface in fills {
            let span = ground_argument(&surface, doc);
            if span.is_none() {
                diagnostics.push(format!("{}: ungrounded {role} {:?}", doc.doc_id, surface.join(" ")));
                log::debug!("{}: ungrounded {role} {:?}", doc.doc_id, surface.join(" "));
            }
            predictions.push(Prediction {
                role: role.clone(),
                surface,
                span,
            });
        }
    }
    predictions.sort_by(|a, b| a.span.cmp(&b.span).then_with(|| a.role.cmp(&b.role)));
    Ok((
        DocumentPredictions {
            doc_id: doc.doc_id.clone(),
            event_type: doc.event_type.clone(),
            predictions,
        },
        diagnostics,
    ))
}
