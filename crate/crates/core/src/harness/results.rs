//! Result tables and their CSV form.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::BatchRecord;

pub const CSV_HEADER: &str = "model,batch_index,cumulative_n,m_pseudo,rmse,nlpd,train_seconds,predict_seconds,onboard_points,sigma_f2,ell_1,ell_2,sigma_y2,failed";

/// Column indices that hold wall-clock timings.
pub const TIMING_COLUMNS: [usize; 2] = [6, 7];

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<BatchRecord>,
    /// Config echo, crate version and seeds.
    pub metadata: BTreeMap<String, String>,
}

impl ResultTable {
    pub fn for_model<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a BatchRecord> + 'a {
        self.rows.iter().filter(move |r| r.model == model)
    }

    pub fn last_for(&self, model: &str) -> Option<&BatchRecord> {
        self.rows.iter().rev().find(|r| r.model == model)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let [sf2, l1, l2, sn2] = r.hyperparameters;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.model,
                r.batch_index,
                r.cumulative_n,
                r.m_pseudo,
                r.rmse,
                r.nlpd,
                r.train_seconds,
                r.predict_seconds,
                r.onboard_points,
                sf2,
                l1,
                l2,
                sn2,
                r.failed
            ));
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self, ResultsError> {
        let perr = |line: usize, message: String| ResultsError::Parse { path: path.into(), line, message };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == CSV_HEADER => {}
            other => return Err(perr(1, format!("unexpected header {other:?}"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 14 {
                return Err(perr(n, format!("expected 14 fields, found {}", f.len())));
            }
            let float = |j: usize| f[j].parse::<f64>().map_err(|e| perr(n, format!("column {}: {e}", j + 1)));
            let int = |j: usize| f[j].parse::<usize>().map_err(|e| perr(n, format!("column {}: {e}", j + 1)));
            rows.push(BatchRecord {
                model: f[0].to_string(),
                batch_index: int(1)?,
                cumulative_n: int(2)?,
                m_pseudo: int(3)?,
                rmse: float(4)?,
                nlpd: float(5)?,
                train_seconds: float(6)?,
                predict_seconds: float(7)?,
                onboard_points: int(8)?,
                hyperparameters: [float(9)?, float(10)?, float(11)?, float(12)?],
                failed: f[13].parse().map_err(|e| perr(n, format!("column 14: {e}")))?,
            });
        }
        Ok(Self { rows, metadata: BTreeMap::new() })
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta");
    path.with_file_name(name)
}

/// Writes the CSV at `path` and the metadata to `<path>.meta`.
pub fn emit_results(table: &ResultTable, path: impl AsRef<Path>) -> Result<(), ResultsError> {
    let path = path.as_ref();
    fn io(p: &Path) -> impl FnOnce(std::io::Error) -> ResultsError + '_ {
        move |source| ResultsError::Io { path: p.into(), source }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, table.to_csv()).map_err(io(path))?;
    let meta = sidecar(path);
    let mut text = String::new();
    for (k, v) in &table.metadata {
        // values may span lines (the config echo); continuation lines are indented
        text.push_str(&format!("{k}: {}\n", v.trim_end().replace('\n', "\n  ")));
    }
    fs::write(&meta, text).map_err(io(&meta))
}

pub fn load_results(path: impl AsRef<Path>) -> Result<ResultTable, ResultsError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ResultsError::Io { path: path.into(), source })?;
    let mut table = ResultTable::from_csv(&text, path)?;
    let meta = sidecar(path);
    if let Ok(text) = fs::read_to_string(&meta) {
        let mut current: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            if let Some(cont) = line.strip_prefix("  ") {
                let key = current.as_ref().ok_or_else(|| ResultsError::Parse {
                    path: meta.clone(),
                    line: i + 1,
                    message: "continuation without key".into(),
                })?;
                let v = table.metadata.get_mut(key).expect("key inserted");
                v.push('\n');
                v.push_str(cont);
            } else if let Some((k, v)) = line.split_once(": ") {
                table.metadata.insert(k.to_string(), v.to_string());
                current = Some(k.to_string());
            } else {
                return Err(ResultsError::Parse { path: meta.clone(), line: i + 1, message: format!("bad line {line:?}") });
            }
        }
    }
    Ok(table)
}

/// Drops the timing columns, leaving the deterministic part of a results CSV.
pub fn strip_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| !TIMING_COLUMNS.contains(i))
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(model: &str, b: usize) -> BatchRecord {
        BatchRecord {
            model: model.into(),
            batch_index: b,
            cumulative_n: 44 * (b + 1),
            m_pseudo: 30,
            rmse: 0.1 / (b + 1) as f64,
            nlpd: -0.3 + b as f64 * 1e-3,
            train_seconds: 0.5,
            predict_seconds: 0.01,
            onboard_points: 74,
            hyperparameters: [1.0, 0.3, 0.7 + 1e-17, 0.01],
            failed: b == 2,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(ResultTable::default().to_csv(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn round_trip() {
        let mut t = ResultTable::default();
        for b in 0..4 {
            t.rows.push(record("gpr", b));
            t.rows.push(record("ssgp", b));
        }
        t.metadata.insert("seed".into(), "3".into());
        t.metadata.insert("config".into(), "a = 1\nb = 2\n".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out").join("results.csv");
        emit_results(&t, &p).unwrap();
        let back = load_results(&p).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.metadata["seed"], "3");
        assert_eq!(back.metadata["config"], "a = 1\nb = 2");
        assert_eq!(back.last_for("ssgp").unwrap().batch_index, 3);
    }

    #[test]
    fn five_models_98_batches() {
        let mut t = ResultTable::default();
        for b in 0..98 {
            for m in ["gpr", "gpr500", "vsgp", "spgp", "ssgp"] {
                t.rows.push(record(m, b));
            }
        }
        assert_eq!(t.to_csv().lines().count(), 1 + 490);
    }

    #[test]
    fn strip_timing_drops_two_columns() {
        let mut t = ResultTable::default();
        t.rows.push(record("gpr", 0));
        let mut u = t.clone();
        u.rows[0].train_seconds = 9.0;
        assert_ne!(t.to_csv(), u.to_csv());
        assert_eq!(strip_timing(&t.to_csv()), strip_timing(&u.to_csv()));
        assert_eq!(strip_timing(CSV_HEADER).split(',').count(), 12);
    }

    #[test]
    fn bad_csv() {
        let p = Path::new("x.csv");
        assert!(ResultTable::from_csv("model\n", p).is_err());
        assert!(ResultTable::from_csv(&format!("{CSV_HEADER}\ngpr,0,1\n"), p).is_err());
        let missing = load_results("/nonexistent/results.csv");
        assert!(matches!(missing, Err(ResultsError::Io { .. })));
    }
}
