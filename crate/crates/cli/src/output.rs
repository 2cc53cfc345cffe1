//! Results table and run summary.
//!
//! Every task writes the same CSV schema, `quantity,index,value,se`. `index`
//! is a grid, date or level index where the quantity is a series and empty
//! otherwise; `se` is empty where no standard error applies. Numbers use the
//! shortest representation that round-trips.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub quantity: String,
    pub index: Option<usize>,
    pub value: f64,
    pub se: Option<f64>,
}

/// Rows of results.csv plus the headline numbers and screen verdicts that go
/// to the summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Results {
    pub rows: Vec<Row>,
    pub key: BTreeMap<String, f64>,
    pub se: BTreeMap<String, f64>,
    pub screens: BTreeMap<String, bool>,
}

impl Results {
    pub fn push(&mut self, quantity: &str, value: f64) {
        self.rows.push(Row {
            quantity: quantity.into(),
            index: None,
            value,
            se: None,
        });
    }

    pub fn push_se(&mut self, quantity: &str, value: f64, se: f64) {
        self.rows.push(Row {
            quantity: quantity.into(),
            index: None,
            value,
            se: Some(se),
        });
    }

    pub fn push_at(&mut self, quantity: &str, index: usize, value: f64, se: Option<f64>) {
        self.rows.push(Row {
            quantity: quantity.into(),
            index: Some(index),
            value,
            se,
        });
    }

    /// Headline number, also written as a row.
    pub fn key(&mut self, name: &str, value: f64, se: Option<f64>) {
        self.key.insert(name.into(), value);
        if let Some(s) = se {
            self.se.insert(name.into(), s);
        }
        self.rows.push(Row {
            quantity: name.into(),
            index: None,
            value,
            se,
        });
    }

    pub fn screen(&mut self, name: &str, pass: bool) {
        self.screens.insert(name.into(), pass);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["quantity", "index", "value", "se"])?;
        for r in &self.rows {
            w.write_record([
                r.quantity.clone(),
                r.index.map(|i| i.to_string()).unwrap_or_default(),
                num(r.value),
                r.se.map(num).unwrap_or_default(),
            ])?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn json_num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or_else(|| Value::String(num(v)))
}

/// What a run leaves behind in summary.json.
#[derive(Debug, Clone)]
pub struct Summary {
    pub task: String,
    pub market: String,
    pub claim: Option<String>,
    pub seed: u64,
    pub paths: usize,
    pub inputs_digest: String,
    pub exit_code: i32,
    pub error: Option<(String, String)>,
}

impl Summary {
    /// Writes results.csv (on success only) and summary.json into `out`.
    pub fn write(&self, out: &Path, results: Option<&Results>) -> Result<(), CliError> {
        fs::create_dir_all(out)?;
        let mut results_digest = Value::Null;
        let mut body = json!({});
        let csv_path = out.join("results.csv");
        if results.is_none() && csv_path.exists() {
            fs::remove_file(&csv_path)?;
        }
        if let Some(r) = results {
            let bytes = r.to_csv()?;
            results_digest = Value::String(sha256_hex(&bytes));
            fs::write(&csv_path, bytes)?;
            body = json!({
                "key_numbers": r.key.iter().map(|(k, v)| (k.clone(), json_num(*v))).collect::<serde_json::Map<_, _>>(),
                "standard_errors": r.se.iter().map(|(k, v)| (k.clone(), json_num(*v))).collect::<serde_json::Map<_, _>>(),
                "screens": r.screens,
            });
        }
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut doc = json!({
            "task": self.task,
            "market": self.market,
            "claim": self.claim,
            "seed": self.seed,
            "paths": self.paths,
            "inputs_digest": self.inputs_digest,
            "results_digest": results_digest,
            "exit_code": self.exit_code,
            "status": if self.error.is_none() { "ok" } else { "error" },
            "error": self.error.as_ref().map(|(kind, msg)| json!({"kind": kind, "message": msg})),
            "timestamp": timestamp,
        });
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(out.join("summary.json"), text + "\n")?;
        Ok(())
    }
}
