//! Model input construction: trigger markers and prompt wrapping.
//!
//! `X_p = [CLS] prompt [SEP] marked_document [SEP]`, where the marked
//! document carries `<tgr>` / `</tgr>` around the trigger.

use crate::corpus::Span;
use crate::error::{GamError, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD: &str = "[PAD]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const UNK: &str = "[UNK]";
pub const TGR_OPEN: &str = "<tgr>";
pub const TGR_CLOSE: &str = "</tgr>";
/// Joins multiple fills of one role in a filled template.
pub const AND: &str = "and";

/// Inserts trigger markers immediately before and after `trigger`.
pub fn mark_trigger(tokens: &[String], trigger: Span) -> Result<Vec<String>> {
    if trigger.is_empty() || trigger.end > tokens.len() {
        return Err(GamError::Span(format!(
            "trigger {trigger} in document of {} tokens",
            tokens.len()
        )));
    }
    let mut out = Vec::with_capacity(tokens.len() + 2);
    out.extend_from_slice(&tokens[..trigger.start]);
    out.push(TGR_OPEN.to_string());
    out.extend_from_slice(&tokens[trigger.range()]);
    out.push(TGR_CLOSE.to_string());
    out.extend_from_slice(&tokens[trigger.end..]);
    Ok(out)
}

/// Position of original token `i` after marker insertion.
pub fn shift_index(i: usize, trigger: Span) -> usize {
    i + usize::from(i >= trigger.start) + usize::from(i >= trigger.end)
}

/// Original span after marker insertion; a span straddling a trigger
/// boundary grows to include the marker.
pub fn shift_span(span: Span, trigger: Span) -> Span {
    Span::new(
        shift_index(span.start, trigger),
        shift_index(span.end - 1, trigger) + 1,
    )
}

/// `[CLS] p [SEP] x̃ [SEP]`.
pub fn wrap_with_prompt(prompt: &[String], marked_doc: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(prompt.len() + marked_doc.len() + 3);
    out.push(CLS.to_string());
    out.extend_from_slice(prompt);
    out.push(SEP.to_string());
    out.extend_from_slice(marked_doc);
    out.push(SEP.to_string());
    out
}

/// Offsets of the prompt and document inside `X_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputLayout {
    pub prompt_len: usize,
    pub trigger: Span,
}

impl InputLayout {
    pub fn prompt_position(&self, j: usize) -> usize {
        1 + j
    }

    /// Span of an original-document span inside `X_p`.
    pub fn doc_span(&self, span: Span) -> Span {
        let s = shift_span(span, self.trigger);
        let off = self.prompt_len + 2;
        Span::new(s.start + off, s.end + off)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn marks_around_trigger() {
        let out = mark_trigger(&toks("a b c"), Span::new(1, 2)).unwrap();
        assert_eq!(out, toks("a <tgr> b </tgr> c"));
        let out = mark_trigger(&toks("a b c"), Span::new(0, 1)).unwrap();
        assert_eq!(out, toks("<tgr> a </tgr> b c"));
        let err = mark_trigger(&toks("a b c d"), Span::new(3, 3)).unwrap_err();
        assert_eq!(err.code(), "E_SPAN");
        assert!(mark_trigger(&toks("a b"), Span::new(1, 3)).is_err());
    }

    #[test]
    fn shifted_offsets_follow_markers() {
        let doc = toks("w0 w1 w2 w3 w4 w5");
        let trig = Span::new(2, 4);
        let marked = mark_trigger(&doc, trig).unwrap();
        for i in 0..doc.len() {
            assert_eq!(marked[shift_index(i, trig)], doc[i]);
        }
        assert_eq!(shift_span(Span::new(4, 6), trig), Span::new(6, 8));
        assert_eq!(shift_span(Span::new(0, 2), trig), Span::new(0, 2));
        // straddles the opening marker
        assert_eq!(shift_span(Span::new(1, 3), trig), Span::new(1, 4));
    }

    #[test]
    fn wrap_lengths() {
        let p = toks("p1 p2 p3 p4 p5 p6 p7");
        let x: Vec<String> = (0..20).map(|i| format!("x{i}")).collect();
        let xp = wrap_with_prompt(&p, &x);
        assert_eq!(xp.len(), 30);
        assert_eq!(xp[0], CLS);
        assert_eq!(xp[8], SEP);
        assert_eq!(xp[29], SEP);

        let xp = wrap_with_prompt(&[], &toks("a b"));
        assert_eq!(xp, toks("[CLS] [SEP] a b [SEP]"));
    }

    #[test]
    fn layout_maps_document_spans() {
        let p = toks("P <arg1> Q");
        let doc = toks("a b c d");
        let trig = Span::new(1, 2);
        let xp = wrap_with_prompt(&p, &mark_trigger(&doc, trig).unwrap());
        let layout = InputLayout {
            prompt_len: p.len(),
            trigger: trig,
        };
        let s = layout.doc_span(Span::new(2, 4));
        assert_eq!(&xp[s.range()], &doc[2..4]);
        assert_eq!(xp[layout.prompt_position(1)], "<arg1>");
    }
}
