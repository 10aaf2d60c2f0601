use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::{tokenize, Corpus, Provenance, Request, Sentence, StrategyLabel};
use crate::error::{Error, Result};

/// Read a JSONL corpus, one request per line, preserving order.
///
/// With `expect_labels`, every sentence must carry a non-null label.
pub fn load_corpus(path: &Path, expect_labels: bool) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut requests = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        requests.push(parse_request(&line, lineno, expect_labels)?);
    }
    Corpus::new(requests, Provenance::Loaded)
}

fn parse_request(line: &str, lineno: usize, expect_labels: bool) -> Result<Request> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    let schema = |field: &str| Error::Schema {
        line: lineno,
        field: field.to_string(),
    };
    let obj = value.as_object().ok_or_else(|| schema("id"))?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("id"))?
        .to_string();
    let success = obj
        .get("success")
        .and_then(Value::as_bool)
        .ok_or_else(|| schema("success"))?;
    let raw = obj
        .get("sentences")
        .and_then(Value::as_array)
        .filter(|a| !a.is_empty())
        .ok_or_else(|| schema("sentences"))?;

    let mut sentences = Vec::with_capacity(raw.len());
    for s in raw {
        let text = s
            .get("text")
            .and_then(Value::as_str)
            .filter(|t| !tokenize(t).is_empty())
            .ok_or_else(|| schema("text"))?;
        let label = match s.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::String(name)) => Some(
                StrategyLabel::ALL
                    .into_iter()
                    .find(|l| l.name() == name)
                    .ok_or_else(|| schema("label"))?,
            ),
            Some(_) => return Err(schema("label")),
        };
        if expect_labels && label.is_none() {
            return Err(schema("label"));
        }
        sentences.push(Sentence::new(text, label));
    }
    Ok(Request {
        id,
        sentences,
        success,
    })
}

fn request_json(r: &Request) -> Value {
    json!({
        "id": r.id,
        "success": r.success,
        "sentences": r.sentences.iter().map(|s| json!({
            "text": s.text,
            "label": s.label.map(|l| l.name()),
        })).collect::<Vec<_>>(),
    })
}

pub fn write_corpus_jsonl<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for r in &corpus.requests {
        serde_json::to_writer(&mut out, &request_json(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus_jsonl(corpus, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let f = write("");
        assert_eq!(load_corpus(f.path(), false).unwrap().len(), 0);
    }

    #[test]
    fn save_then_load_round_trips() {
        let requests = (0..3)
            .map(|i| Request {
                id: format!("r{i}"),
                sentences: vec![
                    Sentence::new("I will pay 5% interest.", Some(StrategyLabel::Reciprocity)),
                    Sentence::new("Thank you!", if i == 1 { None } else { Some(StrategyLabel::Politeness) }),
                ],
                success: i % 2 == 0,
            })
            .collect();
        let c = Corpus::new(requests, Provenance::Loaded).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_corpus(&c, f.path()).unwrap();
        assert_eq!(load_corpus(f.path(), false).unwrap(), c);
    }

    #[test]
    fn missing_success_is_a_schema_error() {
        let f = write(r#"{"id": "a", "sentences": [{"text": "hi", "label": null}]}"#);
        match load_corpus(f.path(), false) {
            Err(Error::Schema { line, field }) => {
                assert_eq!(line, 1);
                assert_eq!(field, "success");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write("{\"id\": \"a\", \"success\": true, \"sentences\": [{\"text\": \"x\"}]}\n{oops\n");
        assert!(matches!(load_corpus(f.path(), false), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn duplicate_ids_are_an_integrity_error() {
        let line = r#"{"id": "a", "success": true, "sentences": [{"text": "x", "label": "impact"}]}"#;
        let f = write(&format!("{line}\n{line}\n"));
        assert!(matches!(load_corpus(f.path(), true), Err(Error::Integrity(_))));
    }

    #[test]
    fn expect_labels_rejects_unlabeled_sentences() {
        let f = write(r#"{"id": "a", "success": false, "sentences": [{"text": "x", "label": null}]}"#);
        assert!(load_corpus(f.path(), false).is_ok());
        assert!(matches!(load_corpus(f.path(), true), Err(Error::Schema { .. })));
    }

    #[test]
    fn unknown_or_virtual_labels_are_rejected() {
        let f = write(r#"{"id": "a", "success": false, "sentences": [{"text": "x", "label": "sos"}]}"#);
        assert!(matches!(load_corpus(f.path(), false), Err(Error::Schema { .. })));
    }
}
