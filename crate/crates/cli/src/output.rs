//! Output guarding, atomic writes and run manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Files a command is about to create. Existing files are refused unless
/// `force` is set.
pub struct Outputs {
    force: bool,
    files: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(force: bool) -> Self {
        Self {
            force,
            files: Vec::new(),
        }
    }

    /// Registers `path`, failing if it exists and overwriting is off.
    pub fn claim(&mut self, path: PathBuf) -> Result<PathBuf> {
        if path.exists() && !self.force {
            bail!(crate::Refused(path));
        }
        self.files.push(path.clone());
        Ok(path)
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes through a sibling temporary file, so readers never see a
/// partial file and a failure leaves nothing behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| {
        let _ = std::fs::remove_file(&tmp);
        format!("renaming into {}", path.display())
    })
}

pub struct Manifest {
    pub command: String,
    pub config_text: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<(String, PathBuf)>,
}

impl Manifest {
    pub fn render(&self, outputs: &[PathBuf], out_dir: &Path) -> Result<String> {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut s = String::new();
        let _ = writeln!(s, "command\t{}", self.command);
        let _ = writeln!(s, "version\ttextomic {VERSION}");
        let _ = writeln!(s, "timestamp_unix\t{now}");
        let _ = writeln!(
            s,
            "config_sha256\t{}",
            sha256_hex(self.config_text.as_bytes())
        );
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds\t{}", seeds.join(","));
        for (role, path) in &self.inputs {
            let _ = writeln!(
                s,
                "input\t{role}\t{}\t{}",
                path.display(),
                file_sha256(path)?
            );
        }
        for path in outputs {
            let shown = path.strip_prefix(out_dir).unwrap_or(path);
            let _ = writeln!(s, "output\t{}\t{}", shown.display(), file_sha256(path)?);
        }
        Ok(s)
    }

    /// Writes `manifest.<command>.txt` in `out_dir`.
    pub fn write(&self, outputs: &Outputs, out_dir: &Path) -> Result<()> {
        let text = self.render(outputs.files(), out_dir)?;
        write_atomic(
            &out_dir.join(format!("manifest.{}.txt", self.command)),
            text.as_bytes(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn claim_refuses_existing_files_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.tsv");
        std::fs::write(&f, "x").unwrap();
        assert!(Outputs::new(false).claim(f.clone()).is_err());
        assert!(Outputs::new(true).claim(f.clone()).is_ok());
        assert!(Outputs::new(false).claim(dir.path().join("b.tsv")).is_ok());
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("sub").join("x.bin");
        write_atomic(&f, b"abc").unwrap();
        assert_eq!(std::fs::read(&f).unwrap(), b"abc");
        let names: Vec<_> = std::fs::read_dir(f.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }
}
