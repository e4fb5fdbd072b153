use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mixflow::channel::sha256_hex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-execute a command and check its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub working_dir: PathBuf,
    pub out_dir: PathBuf,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to `out_dir`.
    pub artifacts: Vec<FileDigest>,
    pub version: String,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    /// Fails if any recorded input no longer has its recorded hash.
    pub fn check_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let path = self.working_dir.join(&input.path);
            let bytes = fs::read(&path).with_context(|| format!("reading input {}", path.display()))?;
            let got = sha256_hex(&bytes);
            if got != input.sha256 {
                bail!("input {} changed since the manifest was written", path.display());
            }
        }
        Ok(())
    }
}

/// Collects the files a command writes under its output directory.
#[derive(Debug)]
pub struct ArtifactWriter {
    out_dir: PathBuf,
    written: Vec<FileDigest>,
}

impl ArtifactWriter {
    pub fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(Self { out_dir: out_dir.to_path_buf(), written: Vec::new() })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Writes `contents` to `out_dir/rel` via a temporary file and rename, so a
    /// crash never leaves a truncated artifact behind.
    pub fn write(&mut self, rel: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(FileDigest { path: rel.to_string(), sha256: sha256_hex(contents.as_bytes()) });
        Ok(path)
    }

    pub fn into_artifacts(self) -> Vec<FileDigest> {
        self.written
    }
}

pub fn digest_input(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

/// Compares the artifacts a replay produced against the manifest; returns the mismatching paths.
pub fn compare_artifacts(expected: &[FileDigest], got: &[FileDigest]) -> Vec<String> {
    let mut bad = Vec::new();
    for e in expected {
        match got.iter().find(|g| g.path == e.path) {
            Some(g) if g.sha256 == e.sha256 => {}
            Some(_) => bad.push(format!("{} differs", e.path)),
            None => bad.push(format!("{} was not produced", e.path)),
        }
    }
    for g in got {
        if !expected.iter().any(|e| e.path == g.path) {
            bad.push(format!("{} is new", g.path));
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writer_records_hashes_and_leaves_no_partials() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path()).unwrap();
        w.write("a.txt", "hello").unwrap();
        w.write("sub/b.txt", "x").unwrap();
        let arts = w.into_artifacts();
        assert_eq!(arts[0].sha256, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        assert_eq!(fs::read_to_string(dir.path().join("sub/b.txt")).unwrap(), "x");
        let leftovers: Vec<_> = walk(dir.path()).into_iter().filter(|p| p.ends_with(".partial")).collect();
        assert!(leftovers.is_empty());
    }

    fn walk(dir: &Path) -> Vec<String> {
        let mut out = Vec::new();
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p.display().to_string());
            }
        }
        out
    }

    #[test]
    fn comparison_reports_each_kind_of_mismatch() {
        let d = |p: &str, h: &str| FileDigest { path: p.into(), sha256: h.into() };
        let expected = vec![d("a", "1"), d("b", "2"), d("c", "3")];
        let got = vec![d("a", "1"), d("b", "9"), d("z", "0")];
        let bad = compare_artifacts(&expected, &got);
        assert_eq!(bad, vec!["b differs", "c was not produced", "z is new"]);
        assert!(compare_artifacts(&expected, &expected).is_empty());
    }
}
