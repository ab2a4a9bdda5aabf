//! Output bookkeeping: every command writes its files through a [`RunContext`],
//! which hashes them and records one manifest per run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// `println!` unless the context is quiet.
#[macro_export]
macro_rules! say {
    ($ctx:expr, $($t:tt)*) => {
        if !$ctx.quiet {
            println!($($t)*);
        }
    };
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub outputs: Vec<OutputFile>,
}

pub struct RunContext {
    pub out_dir: PathBuf,
    pub verbose: u8,
    /// Suppresses the human-readable tables on stdout.
    pub quiet: bool,
    command: String,
    started_at: String,
    outputs: Vec<OutputFile>,
    config_path: Option<String>,
    parameters: serde_json::Value,
    seed: Option<u64>,
}

impl RunContext {
    pub fn new(command: &str, out_dir: &Path, verbose: u8) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(RunContext {
            out_dir: out_dir.to_path_buf(),
            verbose,
            quiet: false,
            command: command.to_string(),
            started_at: now(),
            outputs: Vec::new(),
            config_path: None,
            parameters: serde_json::Value::Null,
            seed: None,
        })
    }

    pub fn record_inputs(&mut self, config: Option<&Path>, parameters: serde_json::Value, seed: Option<u64>) {
        self.config_path = config.map(|p| p.display().to_string());
        self.parameters = parameters;
        self.seed = seed;
    }

    /// Resolves a user path against the output directory.
    pub fn resolve(&self, name: &Path) -> PathBuf {
        if name.is_absolute() {
            name.to_path_buf()
        } else {
            self.out_dir.join(name)
        }
    }

    /// Writes `bytes` to `name` and records its hash.
    pub fn write(&mut self, name: &Path, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.resolve(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(OutputFile {
            path: path.display().to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        self.info(&format!("wrote {}", path.display()));
        Ok(path)
    }

    pub fn info(&self, msg: &str) {
        if self.verbose > 0 {
            eprintln!("[{}] {msg}", self.command);
        }
    }

    /// Writes `<command>.manifest.json` next to the outputs.
    pub fn finish(self, exit_code: i32, error: Option<String>) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.clone(),
            config_path: self.config_path,
            parameters: self.parameters,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            started_at: self.started_at,
            finished_at: now(),
            exit_code,
            error,
            outputs: self.outputs,
        };
        let path = self.out_dir.join(format!("{}.manifest.json", self.command));
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}
