//! Per-command manifests recording arguments, configuration and file digests.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nppr::fingerprint::sha256_file;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_file(path)
                .with_context(|| format!("cannot read input `{}`", path.display()))?,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'a str,
    pub arguments: &'a [String],
    pub config_fingerprint: String,
    pub config: &'a RunConfig,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

/// Digests of the files a command wrote, and the manifest itself.
pub struct Outputs {
    pub dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory `{}`", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Path of an output file, remembered for the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn finish(
        self,
        subcommand: &str,
        arguments: &[String],
        config: &RunConfig,
        inputs: Vec<FileDigest>,
    ) -> Result<()> {
        let mut outputs = Vec::new();
        for f in &self.files {
            let d = FileDigest::of(&self.dir.join(f))?;
            outputs.push(FileDigest {
                path: f.clone(),
                sha256: d.sha256,
            });
        }
        let manifest = Manifest {
            tool: "nppr",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            arguments,
            config_fingerprint: config.fingerprint(),
            config,
            inputs,
            outputs,
        };
        let path = self.dir.join(format!("{subcommand}.manifest.json"));
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("cannot write `{}`", path.display()))
    }
}
