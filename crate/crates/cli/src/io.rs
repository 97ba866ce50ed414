//! Dataset CSV, JSON artifacts and the hashed manifest.

use std::fs;
use std::path::{Path, PathBuf};

use dualid_core::model::{Dataset, Sample};
use nalgebra::DVector;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::MechanismConfig;
use crate::error::{CliError, Result};

/// `t,q_1..q_n,qd_1..qd_n,qdd_1..qdd_n,tau_1..tau_n`.
pub fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["q", "qd", "qdd", "tau"] {
        h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    h
}

/// Shortest text that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn dataset_to_csv(ds: &Dataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let n = ds.n;
    w.write_record(csv_header(n)).map_err(csv_err)?;
    for s in &ds.samples {
        let mut row = Vec::with_capacity(1 + 4 * n);
        row.push(num(s.t));
        row.extend(s.q.iter().map(|v| num(*v)));
        row.extend(s.qd.iter().map(|v| num(*v)));
        match &s.qdd {
            Some(a) => row.extend(a.iter().map(|v| num(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), n)),
        }
        row.extend(s.tau.iter().map(|v| num(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Validation(format!("csv: {e}")))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Validation(format!("csv: {e}"))
}

/// Labels a parsed CSV cannot carry.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub chart_id: String,
    pub coordinate_names: Vec<String>,
    pub coordinate_units: Vec<String>,
    /// Sampling interval; taken from the first two timestamps if absent.
    pub dt: Option<f64>,
}

/// Parses a dataset. The header must match the expected layout exactly and
/// acceleration columns may be left empty only all together.
pub fn dataset_from_csv(text: &[u8], meta: &DatasetMeta, origin: &str) -> Result<Dataset> {
    let bad = |msg: String| CliError::Validation(format!("{origin}: {msg}"));
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text);
    let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    let n = meta.coordinate_names.len();
    if header != csv_header(n) {
        return Err(bad(format!("header must be `{}`", csv_header(n).join(","))));
    }
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = line + 2;
        let field = |i: usize| -> Result<Option<f64>> {
            let s = rec.get(i).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| bad(format!("row {row}: `{s}` is not a number")))
        };
        let required = |i: usize| -> Result<f64> {
            field(i)?.ok_or_else(|| bad(format!("row {row}: column {} is empty", header[i])))
        };
        let vec_at = |start: usize| -> Result<DVector<f64>> {
            Ok(DVector::from_iterator(n, (start..start + n).map(&required).collect::<Result<Vec<_>>>()?))
        };
        let qdd: Vec<Option<f64>> = (1 + 2 * n..1 + 3 * n).map(&field).collect::<Result<_>>()?;
        let qdd = if qdd.iter().all(Option::is_none) {
            None
        } else if qdd.iter().all(Option::is_some) {
            Some(DVector::from_iterator(n, qdd.into_iter().flatten()))
        } else {
            return Err(bad(format!("row {row}: accelerations partially missing")));
        };
        samples.push(Sample {
            t: required(0)?,
            q: vec_at(1)?,
            qd: vec_at(1 + n)?,
            qdd,
            tau: vec_at(1 + 3 * n)?,
        });
    }
    let dt = match meta.dt {
        Some(dt) => dt,
        None if samples.len() >= 2 => samples[1].t - samples[0].t,
        None => return Err(bad("cannot infer the sampling interval from one sample".into())),
    };
    Dataset::new(samples, dt, meta.chart_id.clone(), meta.coordinate_names.clone(), meta.coordinate_units.clone())
        .map_err(|e| bad(e.to_string()))
}

pub fn read_dataset(path: &Path, meta: &DatasetMeta) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    dataset_from_csv(&bytes, meta, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterValue {
    pub name: String,
    pub unit: String,
    pub value: f64,
}

/// Ground truth and provenance written next to simulated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub mechanism: MechanismConfig,
    pub parameters: Vec<ParameterValue>,
    pub chart_id: String,
    /// Rows of the chart map, if the data is not in the physical chart.
    pub chart: Option<Vec<Vec<f64>>>,
    pub coordinate_names: Vec<String>,
    pub coordinate_units: Vec<String>,
    pub dt: f64,
    pub slowest_period: f64,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Sidecar {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            chart_id: self.chart_id.clone(),
            coordinate_names: self.coordinate_names.clone(),
            coordinate_units: self.coordinate_units.clone(),
            dt: Some(self.dt),
        }
    }

    pub fn values(&self) -> DVector<f64> {
        DVector::from_iterator(self.parameters.len(), self.parameters.iter().map(|p| p.value))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| CliError::Validation(format!("json: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub artifacts: Vec<Artifact>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory that records every file it writes.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        self.write(rel, &to_json(value)?)
    }

    /// Writes the manifest, sorted by path.
    pub fn finish(mut self, command: &str) -> Result<Manifest> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: command.to_string(),
            artifacts: self.artifacts,
        };
        let path = self.root.join(MANIFEST);
        fs::write(&path, to_json(&manifest)?).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Re-hashes every artifact a manifest lists; returns the paths that no
/// longer match.
pub fn verify_manifest(root: &Path, manifest: &Manifest) -> Result<Vec<String>> {
    let mut stale = Vec::new();
    for a in &manifest.artifacts {
        let path = root.join(&a.path);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        if sha256_hex(&bytes) != a.sha256 {
            stale.push(a.path.clone());
        }
    }
    Ok(stale)
}
