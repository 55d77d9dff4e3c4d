//! Annotated documents, event ontology, and the on-disk corpus layout.
//!
//! A corpus directory holds `ontology.json` plus `train.jsonl`, `dev.jsonl`
//! and `test.jsonl`, one event instance per line. All offsets are token
//! offsets, end-exclusive.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GamError, Result};

/// Half-open token range `[start, end)`, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "MentionRecord", into = "MentionRecord")]
pub struct EntityMention {
    pub span: Span,
    pub entity_type: String,
    /// `None` until clusters are read from data or assigned by the fallback.
    pub cluster_id: Option<usize>,
}

/// File form: `{start, end, type, cluster?}`.
#[derive(Serialize, Deserialize)]
struct MentionRecord {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    entity_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cluster: Option<usize>,
}

impl From<MentionRecord> for EntityMention {
    fn from(r: MentionRecord) -> Self {
        EntityMention {
            span: Span::new(r.start, r.end),
            entity_type: r.entity_type,
            cluster_id: r.cluster,
        }
    }
}

impl From<EntityMention> for MentionRecord {
    fn from(m: EntityMention) -> Self {
        MentionRecord {
            start: m.span.start,
            end: m.span.end,
            entity_type: m.entity_type,
            cluster: m.cluster_id,
        }
    }
}

impl EntityMention {
    pub fn new(span: Span, entity_type: impl Into<String>, cluster_id: Option<usize>) -> Self {
        EntityMention {
            span,
            entity_type: entity_type.into(),
            cluster_id,
        }
    }

    pub fn span(&self) -> Span {
        self.span
    }

    /// Cluster id; mentions are singletons until clusters are assigned.
    pub fn cluster(&self) -> usize {
        self.cluster_id.unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldArgument {
    pub role: String,
    pub spans: Vec<Span>,
}

/// One event instance: a document with a single trigger and its arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    #[serde(rename = "sentences")]
    pub sentence_spans: Vec<Span>,
    pub event_type: String,
    #[serde(rename = "trigger")]
    pub trigger_span: Span,
    #[serde(rename = "mentions")]
    pub entity_mentions: Vec<EntityMention>,
    #[serde(rename = "arguments")]
    pub gold_arguments: Vec<GoldArgument>,
}

impl Document {
    pub fn surface(&self, span: Span) -> &[String] {
        &self.tokens[span.range()]
    }

    /// Index of the sentence containing token `i`.
    pub fn sentence_of(&self, i: usize) -> Option<usize> {
        self.sentence_spans.iter().position(|s| s.contains(i))
    }

    /// `(role, span)` pairs, one per gold span.
    pub fn gold_pairs(&self) -> Vec<(String, Span)> {
        self.gold_arguments
            .iter()
            .flat_map(|a| a.spans.iter().map(move |s| (a.role.clone(), *s)))
            .collect()
    }

    /// Mention spans grouped by coreference cluster.
    pub fn clusters(&self) -> BTreeMap<usize, Vec<Span>> {
        let mut out: BTreeMap<usize, Vec<Span>> = BTreeMap::new();
        for m in &self.entity_mentions {
            out.entry(m.cluster()).or_default().push(m.span());
        }
        out
    }

    pub fn has_clusters(&self) -> bool {
        self.entity_mentions.iter().all(|m| m.cluster_id.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub name: String,
    pub placeholder: usize,
    pub types: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchema {
    /// Unfilled prompt with `<argN>` placeholder tokens.
    pub template: Vec<String>,
    pub roles: Vec<RoleSpec>,
}

impl EventSchema {
    pub fn role(&self, name: &str) -> Option<&RoleSpec> {
        self.roles.iter().find(|r| r.name == name)
    }

    pub fn role_for_placeholder(&self, idx: usize) -> Option<&RoleSpec> {
        self.roles.iter().find(|r| r.placeholder == idx)
    }
}

pub fn placeholder_token(idx: usize) -> String {
    format!("<arg{idx}>")
}

/// Parses `<argN>` into `N`.
pub fn placeholder_index(token: &str) -> Option<usize> {
    token
        .strip_prefix("<arg")?
        .strip_suffix('>')?
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ontology {
    pub events: BTreeMap<String, EventSchema>,
}

impl Ontology {
    pub fn get(&self, event_type: &str) -> Result<&EventSchema> {
        self.events
            .get(event_type)
            .ok_or_else(|| GamError::Ontology(event_type.to_string()))
    }

    /// Largest placeholder index across all templates.
    pub fn max_placeholders(&self) -> usize {
        self.events.values().map(|e| e.roles.len()).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, ev) in &self.events {
            let bad = |detail: String| GamError::Parse {
                location: format!("ontology `{name}`"),
                detail,
            };
            let found: Vec<usize> = ev
                .template
                .iter()
                .filter_map(|t| placeholder_index(t))
                .collect();
            let k = found.len();
            let unique: BTreeSet<usize> = found.iter().copied().collect();
            if unique.len() != k || unique.iter().copied().ne(1..=k) {
                return Err(bad(format!("placeholders {found:?} are not exactly 1..={k}")));
            }
            if ev.roles.len() != k {
                return Err(bad(format!("{} roles for {k} placeholders", ev.roles.len())));
            }
            let role_idx: BTreeSet<usize> = ev.roles.iter().map(|r| r.placeholder).collect();
            if role_idx != unique {
                return Err(bad("role placeholder indices do not match template".into()));
            }
            let names: BTreeSet<&str> = ev.roles.iter().map(|r| r.name.as_str()).collect();
            if names.len() != k {
                return Err(bad("duplicate role names".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Dev => "dev.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = GamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(GamError::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
    pub ontology: Ontology,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Document] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Document> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn validate(&self) -> Result<()> {
        self.ontology.validate()?;
        for doc in self.documents() {
            validate_document(doc, &self.ontology)?;
        }
        Ok(())
    }
}

/// Checks every document invariant; the first violation is reported with
/// the document id and offending field.
pub fn validate_document(doc: &Document, ontology: &Ontology) -> Result<()> {
    let n = doc.tokens.len();
    let range_err = |field: &str, detail: String| GamError::Range {
        doc_id: doc.doc_id.clone(),
        field: field.to_string(),
        detail,
    };
    if n == 0 {
        return Err(range_err("tokens", "document has no tokens".into()));
    }

    let mut expected = 0;
    for s in &doc.sentence_spans {
        if s.is_empty() || s.end > n {
            return Err(range_err("sentences", format!("{s} with {n} tokens")));
        }
        if s.start != expected {
            return Err(range_err(
                "sentences",
                format!("{s} does not start at {expected} (gap or overlap)"),
            ));
        }
        expected = s.end;
    }
    if expected != n {
        return Err(range_err(
            "sentences",
            format!("sentences cover [0, {expected}) of {n} tokens"),
        ));
    }

    let t = doc.trigger_span;
    if t.is_empty() || t.end > n {
        return Err(range_err("trigger", format!("{t} with {n} tokens")));
    }

    let mut spans: Vec<Span> = Vec::with_capacity(doc.entity_mentions.len());
    for m in &doc.entity_mentions {
        let s = m.span();
        if s.is_empty() || s.end > n {
            return Err(range_err("mentions", format!("{s} with {n} tokens")));
        }
        spans.push(s);
    }
    let mut sorted = spans.clone();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[0].overlaps(&w[1]) {
            return Err(GamError::Overlap {
                doc_id: doc.doc_id.clone(),
                field: "mentions".into(),
                detail: format!("{} and {}", w[0], w[1]),
            });
        }
    }

    let schema = ontology.get(&doc.event_type)?;
    for arg in &doc.gold_arguments {
        if schema.role(&arg.role).is_none() {
            return Err(GamError::Role {
                doc_id: doc.doc_id.clone(),
                event_type: doc.event_type.clone(),
                role: arg.role.clone(),
            });
        }
        for s in &arg.spans {
            if s.is_empty() || s.end > n {
                return Err(range_err("arguments", format!("{s} with {n} tokens")));
            }
            if !spans.contains(s) {
                return Err(range_err(
                    "arguments",
                    format!("{s} of role {} is not an entity mention", arg.role),
                ));
            }
        }
    }
    Ok(())
}

/// Assigns coreference clusters by case-insensitive surface identity.
///
/// Cluster ids follow the first occurrence of each surface in document order.
pub fn fallback_coref_clusters(doc: &Document) -> Document {
    let mut out = doc.clone();
    let mut order: Vec<usize> = (0..out.entity_mentions.len()).collect();
    order.sort_by_key(|&i| out.entity_mentions[i].span());
    let mut ids: HashMap<String, usize> = HashMap::new();
    for i in order {
        let key = out
            .surface(out.entity_mentions[i].span())
            .iter()
            .map(|t| t.to_lowercase())
            .collect::<Vec<_>>()
            .join(" ");
        let next = ids.len();
        let id = *ids.entry(key).or_insert(next);
        out.entity_mentions[i].cluster_id = Some(id);
    }
    out
}

pub fn load_ontology(path: &Path) -> Result<Ontology> {
    let text = fs::read_to_string(path).map_err(|e| GamError::io(path, e))?;
    let ontology: Ontology = serde_json::from_str(&text).map_err(|e| GamError::Parse {
        location: path.display().to_string(),
        detail: e.to_string(),
    })?;
    ontology.validate()?;
    Ok(ontology)
}

/// Reads one split file. Documents without cluster ids get the surface
/// fallback; a file mixing both forms within a document is rejected.
pub fn load_documents(path: &Path, ontology: &Ontology) -> Result<Vec<Document>> {
    let file = fs::File::open(path).map_err(|e| GamError::io(path, e))?;
    let mut docs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GamError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{}", path.display(), lineno + 1);
        let doc: Document = serde_json::from_str(&line).map_err(|e| GamError::Parse {
            location: location.clone(),
            detail: e.to_string(),
        })?;
        let with = doc
            .entity_mentions
            .iter()
            .filter(|m| m.cluster_id.is_some())
            .count();
        let doc = if with == doc.entity_mentions.len() {
            doc
        } else if with == 0 {
            fallback_coref_clusters(&doc)
        } else {
            return Err(GamError::Parse {
                location,
                detail: format!("{}: some mentions carry cluster ids and some do not", doc.doc_id),
            });
        };
        validate_document(&doc, ontology)?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Loads `ontology.json` and whichever split files exist under `dir`.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let ontology = load_ontology(&dir.join("ontology.json"))?;
    let mut corpus = Corpus {
        ontology,
        ..Corpus::default()
    };
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        if path.exists() {
            let docs = load_documents(&path, &corpus.ontology)?;
            *corpus.split_mut(split) = docs;
        }
    }
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GamError::io(dir, e))?;
    let onto_path = dir.join("ontology.json");
    let text = serde_json::to_string_pretty(&corpus.ontology)?;
    fs::write(&onto_path, text + "\n").map_err(|e| GamError::io(&onto_path, e))?;
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let mut out = Vec::new();
        for doc in corpus.split(split) {
            serde_json::to_writer(&mut out, doc)?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(&path).map_err(|e| GamError::io(&path, e))?;
        f.write_all(&out).map_err(|e| GamError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    pub fn conflict_ontology() -> Ontology {
        let role = |name: &str, idx: usize, types: &[&str]| RoleSpec {
            name: name.into(),
            placeholder: idx,
            types: types.iter().map(|t| t.to_string()).collect(),
        };
        let mut events = BTreeMap::new();
        events.insert(
            "Conflict.Attack".to_string(),
            EventSchema {
                template: toks(
                    "Attacker <arg1> exploded explosiveDevice <arg2> using instrument <arg3> to attack target <arg4> at place <arg5>",
                ),
                roles: vec![
                    role("attacker", 1, &["PER"]),
                    role("explosiveDevice", 2, &["WEA"]),
                    role("instrument", 3, &["WEA", "VEH"]),
                    role("target", 4, &["PER", "ORG"]),
                    role("place", 5, &["LOC"]),
                ],
            },
        );
        Ontology { events }
    }

    /// "Aaron Driver set off a homemade bomb in Strathroy . The driver was a Canadian man ."
    pub fn driver_doc() -> Document {
        let tokens = toks(
            "Aaron Driver set off a homemade bomb in Strathroy . The driver was a Canadian man .",
        );
        Document {
            doc_id: "d0".into(),
            tokens,
            sentence_spans: vec![Span::new(0, 10), Span::new(10, 17)],
            event_type: "Conflict.Attack".into(),
            trigger_span: Span::new(2, 4),
            entity_mentions: vec![
                EntityMention::new(Span::new(0, 2), "PER", Some(0)),
                EntityMention::new(Span::new(4, 7), "WEA", Some(1)),
                EntityMention::new(Span::new(8, 9), "LOC", Some(2)),
                EntityMention::new(Span::new(10, 12), "PER", Some(0)),
                EntityMention::new(Span::new(13, 16), "PER", Some(0)),
            ],
            gold_arguments: vec![
                GoldArgument {
                    role: "attacker".into(),
                    spans: vec![Span::new(0, 2)],
                },
                GoldArgument {
                    role: "explosiveDevice".into(),
                    spans: vec![Span::new(4, 7)],
                },
                GoldArgument {
                    role: "place".into(),
                    spans: vec![Span::new(8, 9)],
                },
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn valid_fixture_passes() {
        validate_document(&driver_doc(), &conflict_ontology()).unwrap();
    }

    #[test]
    fn inverted_mention_span_is_out_of_range() {
        let mut d = driver_doc();
        d.entity_mentions[0].span = Span::new(5, 4);
        let e = validate_document(&d, &conflict_ontology()).unwrap_err();
        assert_eq!(e.code(), "E_RANGE");
        assert!(e.to_string().contains("d0"));
    }

    #[test]
    fn mentions_sharing_a_token_overlap() {
        let mut d = driver_doc();
        d.entity_mentions[1].span = Span::new(6, 8);
        d.entity_mentions[2].span = Span::new(7, 9);
        d.gold_arguments.clear();
        let e = validate_document(&d, &conflict_ontology()).unwrap_err();
        assert_eq!(e.code(), "E_OVERLAP");
    }

    #[test]
    fn unknown_role_and_event() {
        let mut d = driver_doc();
        d.gold_arguments[0].role = "victim".into();
        assert_eq!(
            validate_document(&d, &conflict_ontology()).unwrap_err().code(),
            "E_ROLE"
        );
        let mut d = driver_doc();
        d.event_type = "Life.Die".into();
        assert_eq!(
            validate_document(&d, &conflict_ontology()).unwrap_err().code(),
            "E_ONTOLOGY"
        );
    }

    #[test]
    fn sentence_gap_is_rejected() {
        let mut d = driver_doc();
        d.sentence_spans = vec![Span::new(0, 9), Span::new(10, 17)];
        assert_eq!(
            validate_document(&d, &conflict_ontology()).unwrap_err().code(),
            "E_RANGE"
        );
    }

    #[test]
    fn ontology_placeholders_must_be_dense() {
        let mut o = conflict_ontology();
        let ev = o.events.get_mut("Conflict.Attack").unwrap();
        ev.template[1] = "<arg7>".into();
        assert!(o.validate().is_err());
    }

    #[test]
    fn fallback_clusters() {
        let mut d = driver_doc();
        // "Aaron Driver" ... "aaron driver"
        d.tokens[10] = "aaron".into();
        d.tokens[11] = "driver".into();
        for m in &mut d.entity_mentions {
            m.cluster_id = None;
        }
        let c = fallback_coref_clusters(&d);
        let ids: Vec<usize> = c.entity_mentions.iter().map(|m| m.cluster()).collect();
        assert_eq!(ids, vec![0, 1, 2, 0, 3]);
        assert_eq!(fallback_coref_clusters(&c), c);
    }

    #[test]
    fn fallback_singletons_for_distinct_surfaces() {
        let d = fallback_coref_clusters(&driver_doc());
        let ids: Vec<usize> = d.entity_mentions.iter().map(|m| m.cluster()).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn driver_case_folds_into_one_cluster() {
        let mut d = driver_doc();
        d.tokens = "driver x Driver".split(' ').map(String::from).collect();
        d.sentence_spans = vec![Span::new(0, 3)];
        d.trigger_span = Span::new(1, 2);
        d.entity_mentions = vec![
            EntityMention::new(Span::new(0, 1), "PER", None),
            EntityMention::new(Span::new(2, 3), "PER", None),
        ];
        d.gold_arguments.clear();
        let c = fallback_coref_clusters(&d);
        assert_eq!(c.entity_mentions[0].cluster(), c.entity_mentions[1].cluster());
    }

    #[test]
    fn load_save_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut second = driver_doc();
        second.doc_id = "d1".into();
        let corpus = Corpus {
            train: vec![driver_doc(), second],
            dev: vec![],
            test: vec![],
            ontology: conflict_ontology(),
        };
        save_corpus(&corpus, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.train.len(), 2);
        assert_eq!(back, corpus);

        let train = dir.path().join("train.jsonl");
        fs::write(&train, "{not json\n").unwrap();
        let e = load_corpus(dir.path()).unwrap_err();
        assert_eq!(e.code(), "E_PARSE");
        assert!(e.to_string().contains("train.jsonl:1"));
    }

    #[test]
    fn mention_schema_matches_file_format() {
        let m = EntityMention::new(Span::new(3, 5), "PER", Some(2));
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v, serde_json::json!({"start": 3, "end": 5, "type": "PER", "cluster": 2}));
        let d = serde_json::to_value(driver_doc()).unwrap();
        assert_eq!(d["trigger"], serde_json::json!([2, 4]));
        assert_eq!(d["arguments"][0]["spans"], serde_json::json!([[0, 2]]));
    }

    #[test]
    fn placeholder_parsing() {
        assert_eq!(placeholder_index("<arg3>"), Some(3));
        assert_eq!(placeholder_index("<arg0>"), None);
        assert_eq!(placeholder_index("arg3"), None);
        assert_eq!(placeholder_token(12), "<arg12>");
    }
}
