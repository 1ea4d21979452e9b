//! All-or-nothing output: every file is staged next to its target and only
//! renamed into place once all of them were written.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.add(path, text.into_bytes());
        Ok(())
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let tmp = staging_path(path);
            if let Err(e) = fs::write(&tmp, bytes) {
                for t in &staged {
                    let _ = fs::remove_file(t);
                }
                return Err(e).with_context(|| format!("writing {}", tmp.display()));
            }
            staged.push(tmp);
        }
        for (tmp, (path, _)) in staged.iter().zip(&self.files) {
            fs::rename(tmp, path).with_context(|| format!("moving {} into place", path.display()))?;
        }
        Ok(self.files.into_iter().map(|(p, _)| p).collect())
    }
}

fn staging_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Render rows as CSV with one header line.
pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().context("flushing csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_every_file_and_leaves_no_staging() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::default();
        out.add(dir.path().join("a/x.txt"), b"x".to_vec());
        out.add_json(dir.path().join("y.json"), &[1, 2]).unwrap();
        out.commit().unwrap();
        assert_eq!(fs::read(dir.path().join("a/x.txt")).unwrap(), b"x");
        assert_eq!(fs::read_to_string(dir.path().join("y.json")).unwrap(), "[\n  1,\n  2\n]\n");
        let leftovers = fs::read_dir(dir.path()).unwrap().filter(|e| {
            e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".partial")
        });
        assert_eq!(leftovers.count(), 0);
    }

    #[test]
    fn csv_quotes_fields_with_commas() {
        let bytes = csv_bytes(&["a".into(), "b".into()], &[vec!["1".into(), "x, y".into()]]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "a,b\n1,\"x, y\"\n");
    }
}
