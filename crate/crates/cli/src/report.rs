//! Output plumbing: JSON-lines records on stdout, a human table on stderr.

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use prpd_core::Error;

/// What a command produced. `ok` is false when a measurement exceeded its bound.
pub struct Report {
    pub records: Vec<Value>,
    pub table: Vec<String>,
    pub ok: bool,
}

impl Report {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        let digest = Sha256::digest(config.to_string().as_bytes());
        let build_id = format!("{}+{}", env!("CARGO_PKG_VERSION"), &hex::encode(digest)[..12]);
        Report {
            records: vec![json!({
                "record": "config",
                "command": command,
                "build_id": build_id,
                "config": config,
            })],
            table: vec![],
            ok: true,
        }
    }

    pub fn record(&mut self, kind: &str, body: impl Serialize) {
        let mut v = serde_json::to_value(body).expect("record serializes");
        match v.as_object_mut() {
            Some(obj) => {
                obj.insert("record".into(), json!(kind));
            }
            None => v = json!({ "record": kind, "value": v }),
        }
        self.records.push(v);
    }

    pub fn error(&mut self, e: &Error) {
        let kind = match e {
            Error::Input(_) => "input",
            Error::Parse { .. } => "parse",
            Error::Capacity { .. } => "capacity",
            Error::Contract(_) => "contract",
            Error::Construction { .. } => "construction",
        };
        self.record("error", json!({ "kind": kind, "message": e.to_string() }));
        self.table.push(format!("error: {e}"));
    }
}

/// Pads every column to its widest cell.
pub fn align(rows: &[Vec<String>]) -> Vec<String> {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    rows.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(c, s)| format!("{s:<width$}", width = widths[c]))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        })
        .collect()
}
