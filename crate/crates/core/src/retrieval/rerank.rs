//! Second-stage reordering of a first-stage run.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::retrieval::trec::Run;

/// Rescores every candidate with `scorer(query_text, doc_text)` and sorts
/// each list by the new score, keeping first-stage order among ties.
pub fn rerank(
    run: &Run,
    queries: &HashMap<String, String>,
    docs: &HashMap<String, String>,
    mut scorer: impl FnMut(&str, &str) -> Result<f64>,
) -> Result<Run> {
    let mut out = Run::new();
    for (qid, list) in run {
        let q = queries
            .get(qid)
            .ok_or_else(|| Error::Data(format!("no text for query '{qid}'")))?;
        let mut scored = Vec::with_capacity(list.len());
        for (doc, _) in list {
            let d = docs
                .get(doc)
                .ok_or_else(|| Error::Data(format!("no text for document '{doc}'")))?;
            scored.push((doc.clone(), scorer(q, d)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        out.insert(qid.clone(), scored);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Run, HashMap<String, String>, HashMap<String, String>) {
        let mut run = Run::new();
        run.insert(
            "q".into(),
            vec![("d1".into(), 3.0), ("d2".into(), 2.0), ("d3".into(), 1.0), ("d4".into(), 0.5)],
        );
        let queries = HashMap::from([("q".to_string(), "query".to_string())]);
        let docs = (1..=4).map(|i| (format!("d{i}"), format!("{i}"))).collect();
        (run, queries, docs)
    }

    fn order(run: &Run) -> Vec<String> {
        run["q"].iter().map(|e| e.0.clone()).collect()
    }

    #[test]
    fn fixed_points_and_reversal() {
        let (run, q, d) = fixture();
        let first: HashMap<&str, f64> = [("1", 3.0), ("2", 2.0), ("3", 1.0), ("4", 0.5)].into();
        let same = rerank(&run, &q, &d, |_, t| Ok(first[t])).unwrap();
        assert_eq!(order(&same), order(&run));
        let constant = rerank(&run, &q, &d, |_, _| Ok(0.0)).unwrap();
        assert_eq!(order(&constant), order(&run));
        let neg = rerank(&run, &q, &d, |_, t| Ok(-first[t])).unwrap();
        let mut rev = order(&run);
        rev.reverse();
        assert_eq!(order(&neg), rev);
    }

    #[test]
    fn missing_text_names_the_document() {
        let (run, q, mut d) = fixture();
        d.remove("d3");
        match rerank(&run, &q, &d, |_, _| Ok(0.0)) {
            Err(Error::Data(msg)) => assert!(msg.contains("d3")),
            other => panic!("{other:?}"),
        }
    }
}
