//! Collects output files in memory and writes them together with a manifest
//! of input and output hashes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use snvsim_core::ssa::sha256_hex;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path, text: &str) -> Self {
        Self {
            path: path.display().to_string(),
            sha256: sha256_hex(text),
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    reps_override: Option<u64>,
    inputs: &'a [FileHash],
    outputs: Vec<FileHash>,
}

pub struct Output {
    dir: PathBuf,
    command: &'static str,
    files: Vec<(String, String)>,
    inputs: Vec<FileHash>,
    seed: Option<u64>,
    reps_override: Option<u64>,
}

impl Output {
    pub fn new(dir: &Path, command: &'static str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            command,
            files: Vec::new(),
            inputs: Vec::new(),
            seed: None,
            reps_override: None,
        }
    }

    pub fn input(&mut self, h: FileHash) -> &mut Self {
        self.inputs.push(h);
        self
    }

    pub fn inputs(&mut self, hs: &[FileHash]) -> &mut Self {
        self.inputs.extend_from_slice(hs);
        self
    }

    pub fn seed(&mut self, seed: u64, reps_override: Option<u64>) -> &mut Self {
        self.seed = Some(seed);
        self.reps_override = reps_override;
        self
    }

    pub fn add(&mut self, name: impl Into<String>, text: impl Into<String>) -> &mut Self {
        self.files.push((name.into(), text.into()));
        self
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> &mut Self {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.add(name, text)
    }

    /// Writes every file and `manifest.json`; returns the directory.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let io = |p: &Path, e: std::io::Error| CliError::Runtime(format!("cannot write `{}`: {e}", p.display()));
        fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        let mut outputs = Vec::with_capacity(self.files.len());
        for (name, text) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, text).map_err(|e| io(&path, e))?;
            outputs.push(FileHash {
                path: name.clone(),
                sha256: sha256_hex(text),
            });
        }
        let manifest = Manifest {
            tool: "snvsim",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            reps_override: self.reps_override,
            inputs: &self.inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| io(&path, e))?;
        Ok(self.dir)
    }
}
