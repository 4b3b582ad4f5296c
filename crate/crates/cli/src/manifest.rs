//! Provenance record written next to every run's outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mhyper::kgdata::{TEST_FILE, TEXTUAL_FILE, TRAIN_FILE, VALID_FILE, VISUAL_FILE};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// `v<crate version>` plus the `git describe` of the build tree when known.
pub fn version_string() -> String {
    let pkg = env!("CARGO_PKG_VERSION");
    match option_env!("MHYPER_GIT_DESCRIBE") {
        Some(g) if !g.is_empty() => format!("v{pkg} ({g})"),
        _ => format!("v{pkg}"),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(bytes)))
}

/// SHA-256 over the standard dataset files in fixed order, each prefixed by
/// its name and length; an absent feature file contributes its name only.
pub fn dataset_fingerprint(dir: &Path) -> Result<String, CliError> {
    let mut h = Sha256::new();
    for name in [TRAIN_FILE, VALID_FILE, TEST_FILE, VISUAL_FILE, TEXTUAL_FILE] {
        h.update(name.as_bytes());
        let path = dir.join(name);
        if path.is_file() {
            let bytes = fs::read(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        } else {
            h.update(b"absent");
        }
    }
    Ok(hex(&h.finalize()))
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub dataset: PathBuf,
    pub dataset_fingerprint: String,
    pub config: String,
    /// `(phase, seconds)` in execution order.
    pub phases: Vec<(String, f64)>,
    /// `(file name, sha256)` of every output this manifest covers.
    pub outputs: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, dataset: &Path, config: String) -> Result<Self, CliError> {
        Ok(Self {
            command: command.into(),
            version: version_string(),
            seed,
            dataset: dataset.to_path_buf(),
            dataset_fingerprint: dataset_fingerprint(dataset)?,
            config,
            phases: Vec::new(),
            outputs: Vec::new(),
        })
    }

    /// Runs `f` and records its wall-clock time under `name`.
    pub fn phase<R>(&mut self, name: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let r = f();
        self.phases.push((name.into(), start.elapsed().as_secs_f64()));
        r
    }

    pub fn add_output(&mut self, path: &Path) -> Result<(), CliError> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into());
        self.outputs.push((name, file_sha256(path)?));
        Ok(())
    }

    /// `key = value` lines; config keys are prefixed with `config.`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "dataset = \"{}\"", self.dataset.display());
        let _ = writeln!(s, "dataset_sha256 = {}", self.dataset_fingerprint);
        for line in self.config.lines() {
            let _ = writeln!(s, "config.{line}");
        }
        for (name, secs) in &self.phases {
            let _ = writeln!(s, "seconds.{name} = {secs:.3}");
        }
        for (name, sha) in &self.outputs {
            let _ = writeln!(s, "output.{name} = {sha}");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.render()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            hex(&Sha256::digest(b"")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn fingerprint_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(TRAIN_FILE), "a\tr\tb\n").unwrap();
        let a = dataset_fingerprint(dir.path()).unwrap();
        assert_eq!(a, dataset_fingerprint(dir.path()).unwrap());
        fs::write(dir.path().join(TRAIN_FILE), "a\tr\tc\n").unwrap();
        assert_ne!(a, dataset_fingerprint(dir.path()).unwrap());
    }

    #[test]
    fn render_lists_config_phases_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.bin");
        fs::write(&out, b"").unwrap();
        let mut m = RunManifest::new("train", 7, dir.path(), "d = 16\n".into()).unwrap();
        m.phase("load", || ());
        m.add_output(&out).unwrap();
        let text = m.render();
        assert!(text.contains("seed = 7\n"));
        assert!(text.contains("config.d = 16\n"));
        assert!(text.contains("seconds.load = "));
        assert!(text.contains("output.x.bin = e3b0c442"));
    }
}
