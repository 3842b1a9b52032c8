//! On-disk formats.
//!
//! * configuration: one TOML file mirroring [`PipelineConfig`];
//! * datasets: a JSON manifest listing, per subject, three headerless CSV
//!   tables with declared shapes and SHA-256 checksums;
//! * graphs, checkpoints, reports and pooling exports: JSON;
//! * training curves: CSV.
//!
//! Numbers are written in shortest round-trip form, so every file reloads
//! to bit-identical values.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Matrix;
use crate::error::{Error, Result, SubjectIssue};
use crate::graphbuild::{HeteroGraph, SubjectRaw};
use crate::harness::{FoldReport, FoldSplit, PipelineConfig};
use crate::model::{Model, ModelConfig, ModelDims};
use crate::train::{OptimizerState, TrainConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

fn parse_error(path: &Path, detail: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path)?;
    let config: PipelineConfig = toml::from_str(&text).map_err(|e| parse_error(path, e))?;
    config.validate()?;
    Ok(config)
}

pub fn config_to_toml(config: &PipelineConfig) -> Result<String> {
    toml::to_string_pretty(config).map_err(|e| Error::Config(e.to_string()))
}

pub fn save_config(path: &Path, config: &PipelineConfig) -> Result<()> {
    write_file(path, config_to_toml(config)?.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| parse_error(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e))
}

/// Headerless CSV, one matrix row per line.
pub fn table_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn csv_to_table(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(format!(
                "row {r} has {} values, expected {}",
                record.len(),
                cols.unwrap_or(0)
            ));
        }
        for (c, field) in record.iter().enumerate() {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| format!("row {r}, column {c}: {field:?} is not a number"))?,
            );
        }
        rows += 1;
    }
    Matrix::from_shape_vec((rows, cols.unwrap_or(0)), values).map_err(|e| e.to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRef {
    /// Relative to the manifest's directory.
    pub path: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub label: usize,
    pub fmri: TableRef,
    pub dti: TableRef,
    pub sc: TableRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub subjects: Vec<ManifestEntry>,
}

/// Write one directory of CSV tables per subject plus `manifest.json` into
/// `dir`, returning the manifest path.
pub fn write_dataset(dir: &Path, subjects: &[SubjectRaw]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(subjects.len());
    for s in subjects {
        let table = |name: &str, m: &Matrix| -> Result<TableRef> {
            let rel = format!("{}/{name}.csv", s.id);
            let text = table_to_csv(m);
            write_file(&dir.join(&rel), text.as_bytes())?;
            Ok(TableRef {
                path: rel,
                rows: m.nrows(),
                cols: m.ncols(),
                sha256: sha256_hex(text.as_bytes()),
            })
        };
        entries.push(ManifestEntry {
            id: s.id.clone(),
            label: s.label,
            fmri: table("fmri", &s.fmri)?,
            dti: table("dti", &s.dti)?,
            sc: table("sc", &s.sc)?,
        });
    }
    let path = dir.join("manifest.json");
    save_json(
        &path,
        &Manifest {
            format_version: MANIFEST_VERSION,
            subjects: entries,
        },
    )?;
    Ok(path)
}

fn load_table(
    base: &Path,
    entry: &ManifestEntry,
    field: &str,
    table: &TableRef,
) -> std::result::Result<Matrix, SubjectIssue> {
    let issue = |detail: String| SubjectIssue {
        subject: entry.id.clone(),
        field: field.to_string(),
        detail,
    };
    let path = base.join(&table.path);
    let bytes =
        fs::read(&path).map_err(|e| issue(format!("cannot read {}: {e}", path.display())))?;
    let digest = sha256_hex(&bytes);
    if !digest.eq_ignore_ascii_case(&table.sha256) {
        return Err(issue(format!(
            "checksum mismatch: manifest {}, file {digest}",
            table.sha256
        )));
    }
    let m = csv_to_table(&bytes).map_err(issue)?;
    if m.dim() != (table.rows, table.cols) {
        return Err(issue(format!(
            "shape {}x{} does not match declared {}x{}",
            m.nrows(),
            m.ncols(),
            table.rows,
            table.cols
        )));
    }
    Ok(m)
}

fn load_entry(
    base: &Path,
    entry: &ManifestEntry,
) -> std::result::Result<SubjectRaw, Vec<SubjectIssue>> {
    let tables = [
        ("fmri", &entry.fmri),
        ("dti", &entry.dti),
        ("sc", &entry.sc),
    ]
    .map(|(f, t)| load_table(base, entry, f, t));
    let issues: Vec<SubjectIssue> = tables
        .iter()
        .filter_map(|t| t.as_ref().err().cloned())
        .collect();
    if !issues.is_empty() {
        return Err(issues);
    }
    let [fmri, dti, sc] = tables.map(|t| t.expect("checked above"));
    let subject = SubjectRaw {
        id: entry.id.clone(),
        label: entry.label,
        fmri,
        dti,
        sc,
    };
    let mut issues = Vec::new();
    if entry.label > 1 {
        issues.push(SubjectIssue {
            subject: entry.id.clone(),
            field: "label".into(),
            detail: format!("label {} is not 0 or 1", entry.label),
        });
    }
    if let Err(e) = subject.validate() {
        issues.push(SubjectIssue {
            subject: entry.id.clone(),
            field: "tables".into(),
            detail: e.to_string(),
        });
    }
    let flat: Vec<usize> = (0..subject.fmri.nrows())
        .filter(|&i| {
            let row = subject.fmri.row(i);
            row.iter().all(|&v| v == row[0])
        })
        .collect();
    if !flat.is_empty() {
        issues.push(SubjectIssue {
            subject: entry.id.clone(),
            field: "fmri".into(),
            detail: format!("zero-variance ROIs {flat:?}"),
        });
    }
    if issues.is_empty() {
        Ok(subject)
    } else {
        Err(issues)
    }
}

/// Load and validate every subject of a manifest. Problems in any subject
/// are gathered and reported together.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<SubjectRaw>> {
    let manifest: Manifest = load_json(manifest_path)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(parse_error(
            manifest_path,
            format!("unsupported manifest version {}", manifest.format_version),
        ));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let loaded: Vec<_> = manifest
        .subjects
        .par_iter()
        .map(|e| load_entry(base, e))
        .collect();
    let mut subjects = Vec::with_capacity(loaded.len());
    let mut issues = Vec::new();
    for r in loaded {
        match r {
            Ok(s) => subjects.push(s),
            Err(mut i) => issues.append(&mut i),
        }
    }
    let mut seen = std::collections::HashSet::new();
    for e in &manifest.subjects {
        if !seen.insert(e.id.as_str()) {
            issues.push(SubjectIssue {
                subject: e.id.clone(),
                field: "id".into(),
                detail: "duplicate subject id".into(),
            });
        }
    }
    if issues.is_empty() {
        Ok(subjects)
    } else {
        Err(Error::Dataset(issues))
    }
}

pub fn save_graphs(path: &Path, graphs: &[HeteroGraph]) -> Result<()> {
    save_json(path, &graphs)
}

pub fn load_graphs(path: &Path) -> Result<Vec<HeteroGraph>> {
    let graphs: Vec<HeteroGraph> = load_json(path)?;
    for g in &graphs {
        g.validate()?;
    }
    Ok(graphs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerEntry {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub dims: ModelDims,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: CheckpointConfig,
    pub params: Vec<ParamEntry>,
    pub optimizer: Option<OptimizerEntry>,
}

fn flat(m: &Matrix) -> Vec<f64> {
    m.iter().copied().collect()
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        optimizer: Option<&OptimizerState>,
        train: Option<&TrainConfig>,
    ) -> Self {
        let params = model
            .params()
            .iter()
            .map(|(name, v)| ParamEntry {
                name: name.to_string(),
                shape: [v.nrows(), v.ncols()],
                values: flat(v),
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: CheckpointConfig {
                model: model.config().clone(),
                dims: *model.dims(),
                train: train.cloned(),
            },
            params,
            optimizer: optimizer.map(|o| OptimizerEntry {
                step: o.step,
                m: o.m.iter().map(flat).collect(),
                v: o.v.iter().map(flat).collect(),
            }),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let names: Vec<String> = self.params.iter().map(|p| p.name.clone()).collect();
        let values = self
            .params
            .iter()
            .map(|p| {
                Matrix::from_shape_vec((p.shape[0], p.shape[1]), p.values.clone())
                    .map_err(|e| Error::InvalidArgument(format!("parameter {}: {e}", p.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        Model::from_params(self.config.model.clone(), self.config.dims, &names, values)
    }

    pub fn optimizer_state(&self) -> Result<Option<OptimizerState>> {
        let Some(o) = &self.optimizer else {
            return Ok(None);
        };
        if o.m.len() != self.params.len() || o.v.len() != self.params.len() {
            return Err(Error::InvalidArgument(
                "optimizer moments do not match parameters".into(),
            ));
        }
        let shape = |i: usize, v: &Vec<f64>| {
            let [r, c] = self.params[i].shape;
            Matrix::from_shape_vec((r, c), v.clone())
                .map_err(|e| Error::InvalidArgument(e.to_string()))
        };
        Ok(Some(OptimizerState {
            step: o.step,
            m: o.m
                .iter()
                .enumerate()
                .map(|(i, v)| shape(i, v))
                .collect::<Result<_>>()?,
            v: o.v
                .iter()
                .enumerate()
                .map(|(i, v)| shape(i, v))
                .collect::<Result<_>>()?,
        }))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    save_json(path, checkpoint)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c: Checkpoint = load_json(path)?;
    if c.format_version != CHECKPOINT_VERSION {
        return Err(parse_error(
            path,
            format!("unsupported checkpoint version {}", c.format_version),
        ));
    }
    Ok(c)
}

pub fn save_report(path: &Path, report: &FoldReport) -> Result<()> {
    save_json(path, report)
}

/// Per-epoch curves of every fold as CSV.
pub fn curves_to_csv(report: &FoldReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record([
        "fold",
        "epoch",
        "lr",
        "train_loss",
        "train_acc",
        "val_loss",
        "val_acc",
    ])
    .map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for f in &report.folds {
        for c in &f.curves {
            w.write_record([
                f.fold.to_string(),
                c.epoch.to_string(),
                format!("{:?}", c.lr),
                format!("{:?}", c.train_loss),
                format!("{:?}", c.train_acc),
                opt(c.val_loss),
                opt(c.val_acc),
            ])
            .map_err(io)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Custom folds listed by subject id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldsFile {
    pub folds: Vec<FoldIds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl FoldsFile {
    /// Index form against `ids`; unknown ids are rejected.
    pub fn to_splits(&self, ids: &[String]) -> Result<Vec<FoldSplit>> {
        let index = |id: &String| {
            ids.iter().position(|x| x == id).ok_or_else(|| {
                Error::InvalidArgument(format!("folds file names unknown subject {id}"))
            })
        };
        self.folds
            .iter()
            .map(|f| {
                Ok(FoldSplit {
                    train: f.train.iter().map(index).collect::<Result<_>>()?,
                    val: f.val.iter().map(index).collect::<Result<_>>()?,
                })
            })
            .collect()
    }
}
