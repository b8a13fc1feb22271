//! Files: dataset CSV + JSON sidecar, JSON documents, atomic writes.
//!
//! A dataset dump is `data.csv` (header row, one sample per row: inputs then
//! targets) with `data.json` describing the generator, seed and column layout.
//! Multi-label dumps carry the sampled `label` and the full `label_set` as
//! `;`-separated class indices.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Sample, TargetKind, TaskSpec};
use crate::error::{Error, Result};
use crate::losses::Target;

pub const DATA_CSV: &str = "data.csv";
pub const DATA_META: &str = "data.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub spec: TaskSpec,
    pub seed: u64,
    pub n: usize,
    pub input_dim: usize,
    pub target: TargetKind,
    pub columns: Vec<String>,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, detail: impl ToString) -> Error {
    Error::Format {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

/// Write via a temporary sibling and rename, so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| format_err(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| format_err(path, e))
}

fn column_names(spec: &TaskSpec) -> Vec<String> {
    let mut cols: Vec<String> = match spec {
        TaskSpec::Temporal2d { .. } => vec!["t".into()],
        TaskSpec::Gmm(_) => vec!["x".into()],
        _ => (1..=spec.input_dim()).map(|i| format!("x{i}")).collect(),
    };
    match spec.target_kind() {
        TargetKind::Vector { dim } => cols.extend((1..=dim).map(|i| format!("y{i}"))),
        TargetKind::Class { .. } => cols.extend(["label".to_string(), "label_set".to_string()]),
    }
    cols
}

/// Write `data.csv` and `data.json` into `dir`; returns both paths.
pub fn write_dataset(dir: &Path, dataset: &Dataset, seed: u64) -> Result<Vec<PathBuf>> {
    let columns = column_names(&dataset.task);
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_path = dir.join(DATA_CSV);
    let csv_err = |e: csv::Error| format_err(&csv_path, e);
    w.write_record(&columns).map_err(csv_err)?;
    for (i, s) in dataset.samples.iter().enumerate() {
        let mut row: Vec<String> = s.input.iter().map(f64::to_string).collect();
        match &s.target {
            Target::Vector(v) => row.extend(v.iter().map(f64::to_string)),
            Target::Class(c) => {
                row.push(c.to_string());
                let set = dataset
                    .label_sets
                    .as_ref()
                    .and_then(|sets| sets.get(i))
                    .ok_or_else(|| Error::invalid("class dataset without label sets"))?;
                row.push(set.iter().map(usize::to_string).collect::<Vec<_>>().join(";"));
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| format_err(&csv_path, e))?;
    write_atomic(&csv_path, &bytes)?;

    let meta = DatasetMeta {
        spec: dataset.task.clone(),
        seed,
        n: dataset.len(),
        input_dim: dataset.task.input_dim(),
        target: dataset.task.target_kind(),
        columns,
    };
    let meta_path = dir.join(DATA_META);
    write_json(&meta_path, &meta)?;
    Ok(vec![csv_path, meta_path])
}

/// Read a dataset from a directory holding `data.csv` + `data.json`, or from the
/// CSV path itself (the sidecar is looked up next to it).
pub fn read_dataset(path: &Path) -> Result<(Dataset, DatasetMeta)> {
    let (csv_path, meta_path) = if path.is_dir() {
        (path.join(DATA_CSV), path.join(DATA_META))
    } else {
        (path.to_path_buf(), path.with_extension("json"))
    };
    let meta: DatasetMeta = read_json(&meta_path)?;
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| format_err(&csv_path, e))?;
    let expected = meta.columns.len();
    let mut samples = Vec::with_capacity(meta.n);
    let mut label_sets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(&csv_path, e))?;
        if record.len() != expected {
            return Err(format_err(
                &csv_path,
                format!("row {row} has {} fields, expected {expected}", record.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| format_err(&csv_path, format!("row {row}, column {i}: not a number")))
        };
        let input = (0..meta.input_dim).map(num).collect::<Result<Vec<f64>>>()?;
        let target = match meta.target {
            TargetKind::Vector { dim } => {
                Target::Vector((meta.input_dim..meta.input_dim + dim).map(num).collect::<Result<_>>()?)
            }
            TargetKind::Class { .. } => {
                let bad = || format_err(&csv_path, format!("row {row}: bad label field"));
                let label = record[meta.input_dim].parse::<usize>().map_err(|_| bad())?;
                let set = record[meta.input_dim + 1]
                    .split(';')
                    .map(|v| v.parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                label_sets.push(set);
                Target::Class(label)
            }
        };
        samples.push(Sample { input, target });
    }
    if samples.len() != meta.n {
        return Err(format_err(
            &csv_path,
            format!("{} rows but sidecar says {}", samples.len(), meta.n),
        ));
    }
    let is_class = matches!(meta.target, TargetKind::Class { .. });
    Ok((
        Dataset {
            task: meta.spec.clone(),
            samples,
            label_sets: is_class.then_some(label_sets),
        },
        meta,
    ))
}

/// Rows of numbers as CSV, with an optional header.
pub fn write_matrix_csv(path: &Path, header: Option<&[String]>, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| format_err(path, e);
    if let Some(h) = header {
        w.write_record(h).map_err(err)?;
    }
    for r in rows {
        w.write_record(r.iter().map(f64::to_string)).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| format_err(path, e))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{GridFrameSpec, MultiLabelSpec};
    use crate::rng::SeedStream;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (i, task) in [
            TaskSpec::Temporal2d { t: None },
            TaskSpec::Multilabel(MultiLabelSpec::adjacent_pairs(6)),
            TaskSpec::Gridframe(GridFrameSpec::default()),
        ]
        .into_iter()
        .enumerate()
        {
            let sub = dir.path().join(format!("d{i}"));
            let mut rng = SeedStream::new(3).stream(2);
            let data = Dataset::generate(&task, 50, &mut rng).unwrap();
            write_dataset(&sub, &data, 3).unwrap();
            let (back, meta) = read_dataset(&sub).unwrap();
            assert_eq!(back, data);
            assert_eq!(meta.seed, 3);
            let (via_csv, _) = read_dataset(&sub.join(DATA_CSV)).unwrap();
            assert_eq!(via_csv, data);
        }
    }

    #[test]
    fn temporal_columns() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeedStream::new(1).stream(2);
        let data = Dataset::generate(&TaskSpec::Temporal2d { t: None }, 4, &mut rng).unwrap();
        write_dataset(dir.path(), &data, 1).unwrap();
        let text = fs::read_to_string(dir.path().join(DATA_CSV)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,y1,y2"));
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn truncated_csv_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeedStream::new(1).stream(2);
        let data = Dataset::generate(&TaskSpec::Temporal2d { t: Some(0.5) }, 10, &mut rng).unwrap();
        write_dataset(dir.path(), &data, 1).unwrap();
        let path = dir.path().join(DATA_CSV);
        let text = fs::read_to_string(&path).unwrap();
        let cut: Vec<&str> = text.lines().take(5).collect();
        fs::write(&path, cut.join("\n")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
        assert!(matches!(
            read_dataset(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
