//! Line-delimited JSON outputs and their CSV export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::Observables;
use crate::error::{Error, Result};

pub const OBSERVABLES_FILE: &str = "observables.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ObservableRecord {
    pub t: f64,
    pub energy_H: f64,
    pub dissipation_H54: f64,
    pub norm_Hs: BTreeMap<String, f64>,
    pub psi: f64,
    pub run_id: String,
}

impl ObservableRecord {
    pub fn new(obs: &Observables, run_id: &str) -> Self {
        Self {
            t: obs.t,
            energy_H: obs.energy,
            dissipation_H54: obs.dissipation,
            norm_Hs: obs.norms.iter().map(|(s, v)| (format!("{s}"), *v)).collect(),
            psi: obs.psi,
            run_id: run_id.to_string(),
        }
    }
}

/// Serializes one record per line.
pub fn to_line<T: Serialize>(rec: &T) -> String {
    let mut s = serde_json::to_string(rec).expect("record serializes");
    s.push('\n');
    s
}

pub fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        w.write_all(to_line(r).as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_lines(path: &Path) -> Result<Vec<Value>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let v: Value = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidParameter(format!("{}:{}: invalid record: {e}", path.display(), i + 1))
        })?;
        if !v.is_object() {
            return Err(Error::InvalidParameter(format!(
                "{}:{}: record is not an object",
                path.display(),
                i + 1
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// Checks an observable stream: exact field set, finite non-negative values
/// and non-decreasing time within each run. Returns the record count.
pub fn validate_observable_stream(path: &Path) -> Result<usize> {
    let reader = BufReader::new(File::open(path)?);
    let mut last_t: BTreeMap<String, f64> = BTreeMap::new();
    let mut count = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |what: String| Error::InvalidParameter(format!("{}:{}: {what}", path.display(), i + 1));
        let rec: ObservableRecord = serde_json::from_str(&line).map_err(|e| bad(format!("{e}")))?;
        let values = [rec.t, rec.energy_H, rec.dissipation_H54, rec.psi];
        if values
            .iter()
            .chain(rec.norm_Hs.values())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(bad("non-finite or negative value".into()));
        }
        if let Some(&prev) = last_t.get(&rec.run_id) {
            if rec.t < prev {
                return Err(bad(format!("time goes backwards ({} < {prev})", rec.t)));
            }
        }
        last_t.insert(rec.run_id, rec.t);
        count += 1;
    }
    Ok(count)
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, x, out);
            }
        }
        Value::Null => {
            out.insert(prefix.to_string(), String::new());
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Writes `<stem>.csv` next to a `.jsonl` file, one column per flattened key.
pub fn export_csv(jsonl: &Path) -> Result<PathBuf> {
    let rows: Vec<BTreeMap<String, String>> = read_lines(jsonl)?
        .iter()
        .map(|v| {
            let mut m = BTreeMap::new();
            flatten("", v, &mut m);
            m
        })
        .collect();
    let mut columns: Vec<String> = Vec::new();
    for r in &rows {
        for k in r.keys() {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    let out = jsonl.with_extension("csv");
    let mut w = csv::Writer::from_path(&out).map_err(csv_err)?;
    w.write_record(&columns).map_err(csv_err)?;
    for r in &rows {
        w.write_record(columns.iter().map(|c| r.get(c).map(String::as_str).unwrap_or("")))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Exports every `.jsonl` file in `dir`.
pub fn export_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    files.iter().map(|p| export_csv(p)).collect()
}
