//! Run directories: every artifact is a pure function of the config and
//! overrides, except `index.json`, which carries the wall-clock stamp.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::train::TrainTrace;

pub struct RunDir {
    path: PathBuf,
    overrides: Vec<String>,
    artifacts: Vec<String>,
    started: Instant,
}

/// First 16 hex digits of the SHA-256 of the config JSON and the overrides.
pub fn run_id(config: &Value, overrides: &[String]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.to_string().as_bytes());
    for o in overrides {
        hasher.update([0u8]);
        hasher.update(o.as_bytes());
    }
    hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl RunDir {
    /// Creates `<root>/<subcommand>-<run id>`.
    pub fn create(root: &Path, subcommand: &str, config: &Value, overrides: &[String]) -> Result<Self> {
        let path = root.join(format!("{subcommand}-{}", run_id(config, overrides)));
        fs::create_dir_all(&path)?;
        Ok(Self {
            path,
            overrides: overrides.to_vec(),
            artifacts: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn artifacts(&self) -> &[String] {
        &self.artifacts
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        Ok(BufWriter::new(fs::File::create(self.path.join(name))?))
    }

    /// Pretty JSON with the overrides echoed under `"overrides"`.
    pub fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        if let Value::Object(map) = &mut v {
            map.insert("overrides".into(), serde_json::to_value(&self.overrides)?);
        }
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(self.path.join(name))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let mut w = self.open(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(self.path.join(name))
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let mut w = self.open(name)?;
        w.write_all(bytes)?;
        w.flush()?;
        Ok(self.path.join(name))
    }

    /// One value per line under a single header.
    pub fn write_eigenvalues(&mut self, name: &str, values: &[f64]) -> Result<PathBuf> {
        let mut w = self.open(name)?;
        writeln!(w, "eigenvalue")?;
        for v in values {
            writeln!(w, "{v:e}")?;
        }
        w.flush()?;
        Ok(self.path.join(name))
    }

    /// `<stem>.csv` with the rows and `<stem>.json` with the header.
    pub fn write_trace(&mut self, stem: &str, trace: &TrainTrace) -> Result<()> {
        let mut w = self.open(&format!("{stem}.csv"))?;
        trace.write_csv(&mut w)?;
        w.flush()?;
        self.write_json(&format!("{stem}.json"), &trace.header())?;
        Ok(())
    }

    /// Writes `index.json` and returns its path.
    pub fn finish(self) -> Result<PathBuf> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let index = serde_json::json!({
            "created_unix": stamp,
            "wall_clock_seconds": self.started.elapsed().as_secs_f64(),
            "overrides": self.overrides,
            "artifacts": self.artifacts,
        });
        let path = self.path.join("index.json");
        fs::write(&path, serde_json::to_string_pretty(&index)? + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_depends_on_overrides() {
        let cfg = serde_json::json!({"n": 3});
        let a = run_id(&cfg, &[]);
        assert_eq!(a.len(), 16);
        assert_eq!(a, run_id(&cfg, &[]));
        assert_ne!(a, run_id(&cfg, &["n=4".into()]));
    }

    #[test]
    fn writes_and_indexes() {
        let tmp = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(tmp.path(), "x", &serde_json::json!({}), &["a=1".into()]).unwrap();
        run.write_json("r.json", &serde_json::json!({"k": 1})).unwrap();
        run.write_eigenvalues("e.csv", &[2.0, 1.0]).unwrap();
        let dir = run.path().to_path_buf();
        let index = run.finish().unwrap();
        let r: Value = serde_json::from_str(&fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
        assert_eq!(r["overrides"][0], "a=1");
        assert_eq!(fs::read_to_string(dir.join("e.csv")).unwrap().lines().count(), 3);
        let idx: Value = serde_json::from_str(&fs::read_to_string(index).unwrap()).unwrap();
        assert_eq!(idx["artifacts"].as_array().unwrap().len(), 2);
    }
}
