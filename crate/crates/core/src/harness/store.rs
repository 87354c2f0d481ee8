use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::DatasetInfo;
use crate::metrics::MetricReport;
use crate::{Error, Result};

pub const SCHEMA: &str = "trialrecord/1";

/// One evaluated fold of one cross-validation trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub dataset: String,
    pub pipeline: String,
    pub trial: usize,
    pub fold: usize,
    pub master_seed: u64,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: MetricReport,
    pub memory_mb: Option<f64>,
    /// Precision of the constant-favorable classifier on the test fold.
    pub trivial_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub dataset: String,
    pub pipeline: String,
    pub trial: usize,
    pub fold: usize,
    pub master_seed: u64,
}

impl TrialRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            dataset: self.dataset.clone(),
            pipeline: self.pipeline.clone(),
            trial: self.trial,
            fold: self.fold,
            master_seed: self.master_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub dataset: String,
    pub pipeline: String,
    pub master_seed: u64,
    pub reason: String,
}

#[derive(Serialize)]
struct Header<'a> {
    schema: &'a str,
}

#[derive(Serialize)]
struct FailureLine<'a> {
    failure: &'a Failure,
}

#[derive(Serialize)]
struct DatasetLine<'a> {
    dataset_info: &'a DatasetInfo,
}

/// Append-only result store, optionally backed by a JSON-Lines file.
///
/// Besides trial records the file holds `{"failure": ..}` lines for
/// pipelines that could not be run and `{"dataset_info": ..}` lines with the
/// metadata the guidance step needs.
#[derive(Debug, Default)]
pub struct Store {
    path: Option<PathBuf>,
    records: Vec<TrialRecord>,
    keys: BTreeSet<RecordKey>,
    failures: Vec<Failure>,
    datasets: BTreeMap<String, DatasetInfo>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store::default()
    }

    /// Opens an existing store or creates one with a schema header.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut store = Store {
            path: Some(path.clone()),
            ..Store::default()
        };
        if path.exists() {
            store.load(&path)?;
        } else {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let line = serde_json::to_string(&Header { schema: SCHEMA })?;
            writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(store)
    }

    /// Reads a store without keeping it open for appends.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut store = Store::in_memory();
        store.load(path.as_ref())?;
        Ok(store)
    }

    fn load(&mut self, path: &Path) -> Result<()> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::Serde(format!("{}: empty store file", path.display()))),
        };
        let header: Value = serde_json::from_str(&header)?;
        if header.get("schema").and_then(Value::as_str) != Some(SCHEMA) {
            return Err(Error::Serde(format!(
                "{}: expected schema header {SCHEMA}",
                path.display()
            )));
        }
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(&line)
                .map_err(|e| Error::Serde(format!("{} line {}: {e}", path.display(), i + 2)))?;
            if let Some(f) = v.get("failure") {
                let f: Failure = serde_json::from_value(f.clone())?;
                if !self.failures.contains(&f) {
                    self.failures.push(f);
                }
            } else if let Some(d) = v.get("dataset_info") {
                let d: DatasetInfo = serde_json::from_value(d.clone())?;
                self.datasets.insert(d.name.clone(), d);
            } else {
                let r: TrialRecord = serde_json::from_value(v)?;
                if self.keys.insert(r.key()) {
                    self.records.push(r);
                }
            }
        }
        Ok(())
    }

    fn append_lines(&self, lines: &[String]) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if lines.is_empty() {
            return Ok(());
        }
        let mut f = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut buf = String::new();
        for l in lines {
            buf.push_str(l);
            buf.push('\n');
        }
        f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn contains(&self, key: &RecordKey) -> bool {
        self.keys.contains(key)
    }

    /// Appends records whose key is new; returns how many were written.
    pub fn append(&mut self, records: &[TrialRecord]) -> Result<usize> {
        let mut lines = Vec::new();
        let mut fresh = Vec::new();
        for r in records {
            if self.keys.insert(r.key()) {
                lines.push(serde_json::to_string(r)?);
                fresh.push(r.clone());
            }
        }
        self.append_lines(&lines)?;
        let n = fresh.len();
        self.records.extend(fresh);
        Ok(n)
    }

    pub fn record_failure(&mut self, failure: Failure) -> Result<()> {
        if self.failures.contains(&failure) {
            return Ok(());
        }
        self.append_lines(&[serde_json::to_string(&FailureLine { failure: &failure })?])?;
        self.failures.push(failure);
        Ok(())
    }

    pub fn put_dataset(&mut self, info: DatasetInfo) -> Result<()> {
        if self.datasets.get(&info.name) == Some(&info) {
            return Ok(());
        }
        self.append_lines(&[serde_json::to_string(&DatasetLine { dataset_info: &info })?])?;
        self.datasets.insert(info.name.clone(), info);
        Ok(())
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn failures(&self) -> &[Failure] {
        &self.failures
    }

    pub fn datasets(&self) -> &BTreeMap<String, DatasetInfo> {
        &self.datasets
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// In-memory copy restricted to the given datasets.
    pub fn subset(&self, keep: &dyn Fn(&str) -> bool) -> Store {
        let mut out = Store::in_memory();
        for r in self.records.iter().filter(|r| keep(&r.dataset)) {
            out.keys.insert(r.key());
            out.records.push(r.clone());
        }
        out.failures = self.failures.iter().filter(|f| keep(&f.dataset)).cloned().collect();
        out.datasets = self
            .datasets
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        out
    }
}
