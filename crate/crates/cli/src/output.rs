//! Append-only experiment directories.
//!
//! Every command invocation gets a fresh numbered subdirectory
//! `<dir>/<NNNN>-<command>/`. Files are created with `create_new`, listed with
//! their SHA-256 in `manifest.json`, and each finished run appends one line to
//! `<dir>/manifest.jsonl`. Wall-clock data goes to `timing.json`, which is
//! deliberately left out of the manifest.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA: &str = "svsd-manifest v1";

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema: &'static str,
    command: &'a str,
    generator: String,
    files: &'a [FileEntry],
    nondeterministic: [&'static str; 1],
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn generator() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

pub struct RunDir {
    base: PathBuf,
    path: PathBuf,
    command: String,
    files: Vec<FileEntry>,
    started: Instant,
}

impl RunDir {
    /// Creates the next numbered subdirectory of `base` for `command`.
    pub fn create(base: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(base).with_context(|| format!("creating {}", base.display()))?;
        let next = fs::read_dir(base)
            .with_context(|| format!("listing {}", base.display()))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.get(..4)?.parse::<u32>().ok()))
            .max()
            .map_or(1, |n| n + 1);
        let path = base.join(format!("{next:04}-{command}"));
        fs::create_dir(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { base: base.to_path_buf(), path, command: command.to_string(), files: Vec::new(), started: Instant::now() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes a new file; existing files are never replaced.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path.join(name);
        let mut f = File::create_new(&p).with_context(|| format!("creating {}", p.display()))?;
        f.write_all(bytes).with_context(|| format!("writing {}", p.display()))?;
        self.files.push(FileEntry { name: name.to_string(), bytes: bytes.len() as u64, sha256: hex_sha256(bytes) });
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).context("serializing JSON")?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest and timing files and appends to the index.
    pub fn finish(self) -> Result<Vec<FileEntry>> {
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA,
            command: &self.command,
            generator: generator(),
            files: &self.files,
            nondeterministic: ["timing.json"],
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let mp = self.path.join("manifest.json");
        File::create_new(&mp)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .with_context(|| format!("writing {}", mp.display()))?;

        let timing = serde_json::json!({ "wall_seconds": self.started.elapsed().as_secs_f64() });
        let tp = self.path.join("timing.json");
        File::create_new(&tp)
            .and_then(|mut f| f.write_all((serde_json::to_string_pretty(&timing)? + "\n").as_bytes()))
            .with_context(|| format!("writing {}", tp.display()))?;

        let index = self.base.join("manifest.jsonl");
        let line = serde_json::json!({
            "run": self.path.file_name().and_then(|n| n.to_str()),
            "command": self.command,
            "manifest_sha256": hex_sha256(text.as_bytes()),
        });
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .and_then(|mut f| writeln!(f, "{line}"))
            .with_context(|| format!("appending to {}", index.display()))?;
        Ok(self.files)
    }
}
