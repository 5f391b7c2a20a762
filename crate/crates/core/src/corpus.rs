//! On-disk corpora: one `<report_id>.json` per item in a directory, and JSONL logs.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::model::{check_unique_ids, BinaryLabelSheet, LabelSheet, ModelError, ReportDocument};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path} line {line}: {source}")]
    JsonLine { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("report id {0:?} cannot be used as a file name")]
    UnsafeId(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Items with a report id, stored one file each.
pub trait CorpusItem: Serialize + DeserializeOwned {
    fn id(&self) -> &str;
}

impl CorpusItem for ReportDocument {
    fn id(&self) -> &str {
        &self.report_id
    }
}

impl CorpusItem for LabelSheet {
    fn id(&self) -> &str {
        &self.report_id
    }
}

impl CorpusItem for BinaryLabelSheet {
    fn id(&self) -> &str {
        &self.report_id
    }
}

pub fn file_name(id: &str) -> Result<String, CorpusError> {
    let safe = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if !safe {
        return Err(CorpusError::UnsafeId(id.to_string()));
    }
    Ok(format!("{id}.json"))
}

/// Reads every `*.json` in `dir`, sorted by file name; ids must be unique.
pub fn read_dir<T: CorpusItem>(dir: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let items = paths.iter().map(read_json::<T>).collect::<Result<Vec<T>, _>>()?;
    check_unique_ids(items.iter().map(|i| i.id()))?;
    Ok(items)
}

/// Writes each item to `<dir>/<id>.json`, creating `dir`.
pub fn write_dir<T: CorpusItem>(dir: impl AsRef<Path>, items: &[T]) -> Result<(), CorpusError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io(dir))?;
    for item in items {
        write_json(dir.join(file_name(item.id())?), item)?;
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|source| CorpusError::Json { path: path.to_path_buf(), source })
}

/// Pretty JSON with a trailing newline, written via a temporary file and rename.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<(), CorpusError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| CorpusError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CorpusError::JsonLine {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let file = fs::File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| CorpusError::Json { path: path.to_path_buf(), source })?;
        writeln!(w, "{line}").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LabelState, Region};
    use crate::template::TemplateRegistry;

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = TemplateRegistry::shipped().get(&Region::elbow()).unwrap().clone();
        let sheets: Vec<LabelSheet> = ["b", "a"].iter().map(|id| LabelSheet::filled(*id, &t, LabelState::False)).collect();
        write_dir(dir.path(), &sheets).unwrap();
        let back: Vec<LabelSheet> = read_dir(dir.path()).unwrap();
        assert_eq!(back.iter().map(|s| s.report_id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(back[1], sheets[0]);
    }

    #[test]
    fn unsafe_ids_rejected() {
        for id in ["", "../x", "a/b", ".hidden"] {
            assert!(matches!(file_name(id), Err(CorpusError::UnsafeId(_))), "{id}");
        }
        assert_eq!(file_name("clavicle-0001").unwrap(), "clavicle-0001.json");
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl(&p, &[1, 2, 3]).unwrap();
        assert_eq!(read_jsonl::<i32>(&p).unwrap(), vec![1, 2, 3]);
        fs::write(&p, "1\n\nnope\n").unwrap();
        assert!(matches!(read_jsonl::<i32>(&p), Err(CorpusError::JsonLine { line: 3, .. })));
    }
}
