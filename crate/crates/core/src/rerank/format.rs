//! Query/document input templates.

use crate::error::Result;
use crate::models::{encode, BackboneKind, CLS, EOS, SEP};

/// A piece of a formatted input: literal text or one special token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Token(usize),
}

/// Causal kinds read `document: {d}\n\nquery: {q}` followed by `EOS`; the
/// bidirectional kind reads `CLS q SEP d EOS`.
pub fn format_input(query: &str, doc: &str, kind: BackboneKind) -> Vec<Segment> {
    if kind.is_causal() {
        vec![
            Segment::Text(format!("document: {doc}\n\nquery: {query}")),
            Segment::Token(EOS),
        ]
    } else {
        vec![
            Segment::Token(CLS),
            Segment::Text(query.to_string()),
            Segment::Token(SEP),
            Segment::Text(doc.to_string()),
            Segment::Token(EOS),
        ]
    }
}

pub fn segments_to_ids(segments: &[Segment]) -> Vec<usize> {
    let mut ids = Vec::new();
    for s in segments {
        match s {
            Segment::Text(t) => ids.extend(encode(t.as_bytes())),
            Segment::Token(t) => ids.push(*t),
        }
    }
    ids
}

/// Token ids for a pair, at most `max_len` long. Overlong inputs lose the
/// tail of the document first so the query and the final `EOS` survive;
/// only if that is not enough is the query cut as well.
pub fn input_ids(query: &str, doc: &str, kind: BackboneKind, max_len: usize) -> Result<Vec<usize>> {
    let full = segments_to_ids(&format_input(query, doc, kind));
    if full.len() <= max_len {
        return Ok(full);
    }
    let excess = full.len() - max_len;
    let doc_bytes = doc.as_bytes();
    let keep = doc_bytes.len().saturating_sub(excess);
    // byte-level cut; the vocabulary covers partial UTF-8 sequences
    let cut = String::from_utf8_lossy(&doc_bytes[..keep]).into_owned();
    let mut ids = segments_to_ids(&format_input(query, &cut, kind));
    if ids.len() > max_len {
        let eos = ids.pop().expect("template ends with EOS");
        ids.truncate(max_len - 1);
        ids.push(eos);
    }
    Ok(ids)
}
