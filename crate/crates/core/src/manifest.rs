//! Provenance records written next to every command's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_file_bytes, read_json, write_json, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: impl AsRef<Path>) -> Result<FileDigest> {
    let path = path.as_ref();
    let bytes = read_file_bytes(path)?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Every regular file under `dir`, sorted, as paths relative to `dir`.
pub fn list_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
            }
        }
        Ok(())
    }
    let dir = dir.as_ref();
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    /// The parsed command line, enough to run the command again.
    pub invocation: serde_json::Value,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    pub inputs: Vec<FileDigest>,
    pub output_root: PathBuf,
    /// Paths relative to `output_root`.
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    pub path: PathBuf,
    pub expected: String,
    /// `None` when the file could not be read.
    pub found: Option<String>,
}

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.found {
            Some(found) => write!(f, "{}: expected {}, found {}", self.path.display(), self.expected, found),
            None => write!(f, "{}: missing", self.path.display()),
        }
    }
}

fn check(path: &Path, expected: &str) -> Option<Mismatch> {
    let found = read_file_bytes(path).ok().map(|b| sha256_hex(&b));
    (found.as_deref() != Some(expected)).then(|| Mismatch {
        path: path.to_path_buf(),
        expected: expected.to_string(),
        found,
    })
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub struct ManifestBuilder {
    command: String,
    invocation: serde_json::Value,
    config: serde_json::Value,
    seed: u64,
    threads: Option<usize>,
    inputs: Vec<FileDigest>,
    started_at: String,
}

impl ManifestBuilder {
    pub fn new(command: &str, invocation: serde_json::Value, seed: u64, threads: Option<usize>) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            invocation,
            config: serde_json::Value::Null,
            seed,
            threads,
            inputs: Vec::new(),
            started_at: now(),
        }
    }

    pub fn config(&mut self, config: serde_json::Value) -> &mut Self {
        self.config = config;
        self
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<&mut Self> {
        self.inputs.push(digest_file(path)?);
        Ok(self)
    }

    /// Digests `outputs` (relative to `output_root`) and stamps the run id.
    pub fn finish(self, output_root: impl AsRef<Path>, outputs: &[PathBuf]) -> Result<RunManifest> {
        let output_root = output_root.as_ref().to_path_buf();
        let outputs = outputs
            .iter()
            .map(|rel| {
                let mut d = digest_file(output_root.join(rel))?;
                d.path = rel.clone();
                Ok(d)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = RunManifest {
            run_id: String::new(),
            command: self.command,
            invocation: self.invocation,
            config: self.config,
            seed: self.seed,
            threads: self.threads,
            inputs: self.inputs,
            output_root,
            outputs,
            started_at: self.started_at,
            finished_at: now(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        manifest.run_id = manifest.content_id();
        Ok(manifest)
    }
}

impl RunManifest {
    /// Hash of everything except the id itself, shortened to 40 hex digits.
    pub fn content_id(&self) -> String {
        let mut unstamped = self.clone();
        unstamped.run_id.clear();
        let bytes = serde_json::to_vec(&unstamped).expect("manifest serializes");
        sha256_hex(&bytes)[..40].to_string()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let manifest: RunManifest = read_json(path.as_ref())?;
        if manifest.run_id != manifest.content_id() {
            return Err(Error::Manifest(format!(
                "{} was edited after it was written (run id does not match its contents)",
                path.as_ref().display()
            )));
        }
        Ok(manifest)
    }

    pub fn verify_inputs(&self) -> Vec<Mismatch> {
        self.inputs.iter().filter_map(|d| check(&d.path, &d.sha256)).collect()
    }

    /// Compares the recorded outputs against the files under `root`.
    pub fn compare_outputs(&self, root: impl AsRef<Path>) -> Vec<Mismatch> {
        let root = root.as_ref();
        self.outputs
            .iter()
            .filter_map(|d| check(&root.join(&d.path), &d.sha256))
            .collect()
    }

    pub fn verify(&self) -> Vec<Mismatch> {
        let mut all = self.verify_inputs();
        all.extend(self.compare_outputs(&self.output_root));
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dir: &Path) -> RunManifest {
        let input = dir.join("in.txt");
        std::fs::write(&input, "abc").unwrap();
        let out = dir.join("out");
        std::fs::create_dir_all(out.join("sub")).unwrap();
        std::fs::write(out.join("a.json"), "{}").unwrap();
        std::fs::write(out.join("sub/b.txt"), "b").unwrap();
        let mut b = ManifestBuilder::new("demo", serde_json::json!({"x": 1}), 7, Some(1));
        b.input(&input).unwrap();
        let files = list_files(&out).unwrap();
        b.finish(&out, &files).unwrap()
    }

    #[test]
    fn digest_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn fresh_manifest_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample(dir.path());
        assert_eq!(m.outputs.len(), 2);
        assert_eq!(m.outputs[1].path, PathBuf::from("sub/b.txt"));
        assert!(m.verify().is_empty());
        let path = dir.path().join(MANIFEST_FILE);
        m.save(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn changed_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample(dir.path());
        std::fs::write(dir.path().join("in.txt"), "abd").unwrap();
        std::fs::remove_file(dir.path().join("out/a.json")).unwrap();
        let bad = m.verify();
        assert_eq!(bad.len(), 2);
        assert!(bad[0].found.is_some());
        assert!(bad[1].found.is_none());
    }

    #[test]
    fn edited_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = sample(dir.path());
        m.seed = 8;
        let path = dir.path().join(MANIFEST_FILE);
        m.save(&path).unwrap();
        assert!(matches!(RunManifest::load(&path), Err(Error::Manifest(_))));
    }
}
