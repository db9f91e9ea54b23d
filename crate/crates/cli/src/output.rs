use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use percept::dataset::format_sig9;
use serde_json::{json, Map, Value};

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path.file_name().ok_or_else(|| {
        io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name")
    })?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp-{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Render one CSV cell; missing values become empty cells.
pub fn cell(v: Option<f64>) -> String {
    v.map(format_sig9).unwrap_or_default()
}

/// Accumulates what a subcommand read and wrote. `finish` writes the
/// manifest, which is always the last file a run produces.
pub struct Manifest {
    subcommand: &'static str,
    parameters: Map<String, Value>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config_digest: String,
    started: Instant,
}

impl Manifest {
    pub fn new(subcommand: &'static str, config_digest: String) -> Self {
        Self {
            subcommand,
            parameters: Map::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config_digest,
            started: Instant::now(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Into<Value>) {
        self.parameters.insert(key.to_string(), value.into());
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Record a file written by other means.
    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(&mut self, path: &Path, contents: &str) -> io::Result<()> {
        write_atomic(path, contents.as_bytes())?;
        self.output(path);
        Ok(())
    }

    pub fn write_json(&mut self, path: &Path, value: &Value) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(path, &text)
    }

    pub fn finish(self, path: &Path) -> io::Result<()> {
        let paths = |v: &[PathBuf]| {
            v.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
        };
        let value = json!({
            "subcommand": self.subcommand,
            "parameters": self.parameters,
            "inputs": paths(&self.inputs),
            "outputs": paths(&self.outputs),
            "config_digest": self.config_digest,
            "wall_clock_seconds": self.started.elapsed().as_secs_f64(),
        });
        let mut text = serde_json::to_string_pretty(&value).map_err(io::Error::other)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("corr", "abc".into());
        m.param("k", 3);
        let out = dir.path().join("x.csv");
        m.write(&out, "a\n").unwrap();
        let mp = dir.path().join("m.json");
        m.finish(&mp).unwrap();
        let v: Value = serde_json::from_str(&fs::read_to_string(mp).unwrap()).unwrap();
        assert_eq!(v["outputs"][0], out.display().to_string());
        assert_eq!(v["parameters"]["k"], 3);
        assert_eq!(v["config_digest"], "abc");
    }

    #[test]
    fn missing_cells_are_empty() {
        assert_eq!(cell(None), "");
        assert_eq!(cell(Some(0.5)), "0.5");
    }
}
