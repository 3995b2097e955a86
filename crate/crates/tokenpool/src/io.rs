//! Trace files (JSON Lines), JSON documents and atomic whole-file writes.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokenpool_core::estimator::FALLBACK_CATEGORY;
use tokenpool_core::trace::{Request, Trace};

use crate::error::{Error, Result};

/// One JSONL record. `category` and `max_output_tokens` may be left out.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u64,
    arrival_s: f64,
    body_bytes: u64,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    max_output_tokens: Option<u64>,
    true_prompt_tokens: u64,
    true_output_tokens: u64,
}

impl Record {
    fn into_request(self) -> std::result::Result<Request, String> {
        if !self.arrival_s.is_finite() || self.arrival_s < 0.0 {
            return Err(format!("arrival_s must be finite and >= 0, got {}", self.arrival_s));
        }
        let max_output_tokens = self.max_output_tokens.unwrap_or(self.true_output_tokens);
        if self.true_output_tokens > max_output_tokens {
            return Err(format!(
                "true_output_tokens ({}) exceeds max_output_tokens ({max_output_tokens})",
                self.true_output_tokens
            ));
        }
        Ok(Request {
            id: self.id,
            arrival_s: self.arrival_s,
            body_bytes: self.body_bytes,
            category: self.category.unwrap_or_else(|| FALLBACK_CATEGORY.to_string()),
            max_output_tokens,
            true_prompt_tokens: self.true_prompt_tokens,
            true_output_tokens: self.true_output_tokens,
        })
    }
}

/// A parsed trace plus what had to be fixed up on the way in.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrace {
    pub trace: Trace,
    /// Records that arrived earlier than their predecessor in the file.
    pub out_of_order: usize,
}

/// Parse JSON Lines from any reader. Blank lines are skipped; `name` only
/// labels errors.
pub fn parse_trace(reader: impl Read, name: &Path) -> Result<LoadedTrace> {
    let mut requests = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| Error::Parse {
            path: name.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        requests.push(rec.into_request().map_err(parse)?);
    }
    let mut trace = Trace { requests };
    let out_of_order = trace.sort_by_arrival();
    if out_of_order > 0 {
        log::warn!("{}: {out_of_order} out-of-order arrivals; sorted", name.display());
    }
    Ok(LoadedTrace { trace, out_of_order })
}

pub fn load_trace(path: &Path) -> Result<LoadedTrace> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(f, path)
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, &it).expect("serializable");
        buf.push(b'\n');
    }
    buf
}

pub fn trace_to_jsonl(trace: &Trace) -> Vec<u8> {
    jsonl(&trace.requests)
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    write_atomic(path, &trace_to_jsonl(trace))
}

/// Write JSON Lines, one item per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    write_atomic(path, &jsonl(items))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut buf = serde_json::to_vec_pretty(value).expect("serializable");
    buf.push(b'\n');
    buf
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json(value))
}

/// Deserialize a JSON file, reporting the failing field path.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            path: path.to_path_buf(),
            line: inner.line(),
            msg: format!("at `{at}`: {inner}"),
        }
    })
}

/// Write to a temporary file beside `path`, then rename over it. Readers see
/// either the old contents or the new, never a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tokenpool_core::trace::{generate, TraceSpec};

    fn parse(s: &str) -> Result<LoadedTrace> {
        parse_trace(s.as_bytes(), Path::new("t.jsonl"))
    }

    #[test]
    fn empty_input_is_an_empty_trace() {
        let t = parse("").unwrap();
        assert!(t.trace.is_empty());
        assert_eq!(t.out_of_order, 0);
    }

    #[test]
    fn hand_written_fixture() {
        let src = r#"{"id":0,"arrival_s":0.0,"body_bytes":400,"category":"prose","max_output_tokens":128,"true_prompt_tokens":90,"true_output_tokens":100}
{"id":1,"arrival_s":0.5,"body_bytes":1000,"true_prompt_tokens":500,"true_output_tokens":7}

{"id":2,"arrival_s":0.75,"body_bytes":12,"category":"cjk","max_output_tokens":8192,"true_prompt_tokens":6,"true_output_tokens":8000}
"#;
        let t = parse(src).unwrap().trace;
        assert_eq!(t.len(), 3);
        let r = &t.requests[1];
        assert_eq!(r.category, "mixed");
        assert_eq!(r.max_output_tokens, 7);
        assert_eq!((r.body_bytes, r.true_prompt_tokens), (1000, 500));
        let r = &t.requests[2];
        assert_eq!(
            (r.id, r.arrival_s, r.category.as_str(), r.max_output_tokens, r.true_output_tokens),
            (2, 0.75, "cjk", 8192, 8000)
        );
        assert_eq!(t.requests[0].total_budget(), 218);
    }

    #[test]
    fn malformed_line_is_named() {
        let src = "{\"id\":0,\"arrival_s\":0.0,\"body_bytes\":4,\"true_prompt_tokens\":1,\"true_output_tokens\":1}\n{\"id\":1,\n";
        match parse(src) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad = "{\"id\":0,\"arrival_s\":0.0,\"body_bytes\":4,\"max_output_tokens\":3,\"true_prompt_tokens\":1,\"true_output_tokens\":9}";
        let Err(Error::Parse { line: 1, msg, .. }) = parse(bad) else { panic!() };
        assert!(msg.contains("exceeds"));
        let extra = "{\"id\":0,\"arrival_s\":0.0,\"body_bytes\":4,\"true_prompt_tokens\":1,\"true_output_tokens\":1,\"colour\":1}";
        assert!(matches!(parse(extra), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn out_of_order_records_are_sorted_and_counted() {
        let rec = |id: u64, t: f64| {
            format!("{{\"id\":{id},\"arrival_s\":{t},\"body_bytes\":4,\"true_prompt_tokens\":1,\"true_output_tokens\":1}}\n")
        };
        let src = [rec(0, 1.0), rec(1, 0.5), rec(2, 2.0), rec(3, 1.5)].concat();
        let t = parse(&src).unwrap();
        assert_eq!(t.out_of_order, 2);
        let ids: Vec<u64> = t.trace.requests.iter().map(|r| r.id).collect();
        assert_eq!(ids, [1, 0, 3, 2]);
    }

    #[test]
    fn round_trip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/trace.jsonl");
        let t = generate(&TraceSpec::azure_like(10.0, 500, 3)).unwrap();
        write_trace(&path, &t).unwrap();
        let back = load_trace(&path).unwrap();
        assert_eq!(back.trace, t);
        assert_eq!(back.out_of_order, 0);
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_atomic(&path, b"first version, long").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn json_errors_carry_the_field_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        fs::write(&path, r#"[{"category":"x","c_hat":"four","sigma_hat":0,"n_obs":1}]"#).unwrap();
        let e = read_json::<Vec<tokenpool_core::estimator::CategoryStats>>(&path).unwrap_err();
        assert!(e.to_string().contains("[0].c_hat"), "{e}");
    }
}
