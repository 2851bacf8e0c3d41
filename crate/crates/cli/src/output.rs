//! Fixed output layout: `config.toml`, `run.log`, CSV tables and
//! `summary.json` in one directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use obstacle_core::FemSpace;

use crate::commands::Failure;

pub struct OutputDir {
    dir: PathBuf,
    log: BufWriter<File>,
    quiet: bool,
}

impl OutputDir {
    pub fn create(dir: &Path, quiet: bool) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let path = dir.join("run.log");
        let log = File::create(&path).map_err(|e| Failure::io(&path, e))?;
        Ok(Self { dir: dir.to_path_buf(), log: BufWriter::new(log), quiet })
    }

    /// Appends a line to `run.log`, echoing it unless quiet. No timestamps,
    /// so logs are reproducible.
    pub fn log(&mut self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        let _ = writeln!(self.log, "{msg}");
        if !self.quiet {
            println!("{msg}");
        }
    }

    pub fn write(
        &self,
        name: &str,
        f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Failure::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Failure::io(&path, e))
    }

    pub fn write_str(&self, name: &str, text: &str) -> Result<(), Failure> {
        self.write(name, |w| w.write_all(text.as_bytes()))
    }

    /// `x,y,<column>` per vertex.
    pub fn write_field(&self, name: &str, space: &FemSpace, column: &str, values: &[f64]) -> Result<(), Failure> {
        self.write(name, |w| {
            writeln!(w, "x,y,{column}")?;
            for (p, v) in space.mesh().vertices().iter().zip(values) {
                writeln!(w, "{},{},{v}", p[0], p[1])?;
            }
            Ok(())
        })
    }

    pub fn finish(mut self) -> Result<(), Failure> {
        let path = self.dir.join("run.log");
        self.log.flush().map_err(|e| Failure::io(&path, e))
    }
}

/// Reads nodal values: an optional header row, then one row per vertex whose
/// last comma-separated column is the value. Accepts the `x,y,g` dumps
/// written by `optimize`.
pub fn read_nodal(path: &Path, expected: usize) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut values = Vec::with_capacity(expected);
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or("").trim();
        match last.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(v) => return Err(format!("{}:{}: non-finite value {v}", path.display(), k + 1)),
            Err(_) if k == 0 => {} // header
            Err(_) => return Err(format!("{}:{}: cannot parse `{last}`", path.display(), k + 1)),
        }
    }
    if values.len() != expected {
        return Err(format!(
            "{} holds {} values but the mesh has {expected} vertices",
            path.display(),
            values.len()
        ));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_dumps_and_plain_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        fs::write(&p, "x,y,g\n0,0,1.5\n1,0,-2\n").unwrap();
        assert_eq!(read_nodal(&p, 2).unwrap(), vec![1.5, -2.0]);
        fs::write(&p, "3\n4\n").unwrap();
        assert_eq!(read_nodal(&p, 2).unwrap(), vec![3.0, 4.0]);
        assert!(read_nodal(&p, 3).unwrap_err().contains("3 vertices"));
        fs::write(&p, "g\n1\nnan\n").unwrap();
        assert!(read_nodal(&p, 2).is_err());
    }
}
