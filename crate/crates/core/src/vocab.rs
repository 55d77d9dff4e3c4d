//! Closed whitespace-token vocabulary.

use std::collections::{BTreeSet, HashMap};

use crate::corpus::{placeholder_token, Corpus};
use crate::error::{GamError, Result};
use crate::input::{AND, BOS, CLS, EOS, PAD, SEP, TGR_CLOSE, TGR_OPEN, UNK};

pub const SPECIALS: [&str; 8] = [PAD, UNK, BOS, EOS, CLS, SEP, TGR_OPEN, TGR_CLOSE];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Specials first, then `extra` in the given order; duplicates are skipped.
    pub fn new<I, S>(extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            v.push(s.to_string());
        }
        for t in extra {
            v.push(t.into());
        }
        v
    }

    /// Rebuilds a vocabulary from its full token list (as stored in checkpoints).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(GamError::Vocab("token list does not start with the special tokens".into()));
        }
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            if v.index.contains_key(&t) {
                return Err(GamError::Vocab(format!("duplicate token {t:?}")));
            }
            v.push(t);
        }
        Ok(v)
    }

    /// Every document token, template token, placeholder and `and`, sorted.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut set = BTreeSet::new();
        set.insert(AND.to_string());
        for i in 1..=corpus.ontology.max_placeholders() {
            set.insert(placeholder_token(i));
        }
        for schema in corpus.ontology.events.values() {
            set.extend(schema.template.iter().cloned());
        }
        for doc in corpus.documents() {
            set.extend(doc.tokens.iter().cloned());
        }
        Vocab::new(set)
    }

    fn push(&mut self, t: String) {
        if !self.index.contains_key(&t) {
            self.index.insert(t.clone(), self.tokens.len());
            self.tokens.push(t);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or of `[UNK]`.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or_else(|| self.special(UNK))
    }

    pub fn special(&self, token: &str) -> usize {
        self.index[token]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| GamError::Vocab(format!("id {id} outside vocabulary of {}", self.len())))
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.token(i).map(String::from)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic_corpus, SynthConfig};

    #[test]
    fn specials_are_distinct_and_first() {
        let v = Vocab::new(["a", "b", "a"]);
        let ids: BTreeSet<usize> = SPECIALS.iter().map(|s| v.special(s)).collect();
        assert_eq!(ids.len(), SPECIALS.len());
        assert_eq!(v.len(), SPECIALS.len() + 2);
        assert_eq!(v.id("zzz"), v.special(UNK));
        assert_eq!(v.token(999).unwrap_err().code(), "E_VOCAB");
    }

    #[test]
    fn corpus_round_trip() {
        let corpus = generate_synthetic_corpus(1, 20, &SynthConfig::default());
        let v = Vocab::from_corpus(&corpus);
        for doc in corpus.documents() {
            let ids = v.encode(&doc.tokens);
            assert_eq!(v.decode(&ids).unwrap(), doc.tokens);
        }
        assert!(v.get("<arg5>").is_some());
        assert!(v.get(AND).is_some());
        let again = Vocab::from_tokens(v.tokens().to_vec()).unwrap();
        assert_eq!(again, v);
        assert!(Vocab::from_tokens(vec!["x".into()]).is_err());
    }
}
