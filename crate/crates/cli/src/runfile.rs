//! Run bookkeeping: inputs tracked by content hash, outputs written
//! atomically under a provenance header, and the closing manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// One command execution. Collects what was read and written so `finish`
/// can drop a manifest beside the first output.
pub struct Run {
    command: &'static str,
    seed: u64,
    config_echo: String,
    config_hash: String,
    /// (path as given, canonical path when resolvable, content hash)
    inputs: Vec<(PathBuf, Option<PathBuf>, String)>,
    outputs: Vec<(PathBuf, String)>,
}

impl Run {
    pub fn new(command: &'static str, cfg: &RunConfig) -> Run {
        let echo = cfg.echo();
        let hash = sha256_hex(echo.as_bytes());
        Run {
            command,
            seed: cfg.seed,
            config_echo: echo,
            config_hash: hash,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Read an input file, recording its content hash.
    pub fn read_input(&mut self, path: &Path) -> Result<String, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.inputs.push((
            path.to_path_buf(),
            fs::canonicalize(path).ok(),
            sha256_hex(text.as_bytes()),
        ));
        Ok(text)
    }

    fn header(&self) -> String {
        format!(
            "# produced-by: ctids {}\n# config-hash: {}\n",
            self.command, self.config_hash
        )
    }

    /// Write the provenance header plus `body` to `path` atomically. Paths
    /// already read as inputs are refused: no command rewrites an input.
    pub fn write_output(&mut self, path: &Path, body: &str) -> Result<(), CliError> {
        let target = canonical_target(path);
        if target.is_some() && self.inputs.iter().any(|(_, c, _)| c.as_deref() == target.as_deref()) {
            return Err(CliError::Input(format!(
                "refusing to overwrite input file {}",
                path.display()
            )));
        }
        let full = format!("{}{}", self.header(), body);
        write_atomic(path, full.as_bytes())?;
        self.outputs.push((path.to_path_buf(), sha256_hex(full.as_bytes())));
        Ok(())
    }

    /// Write `<first output>.manifest`: the provenance header, the full
    /// configuration echo, and a closing [manifest] section naming the
    /// command, seed, and every file touched with its hash.
    pub fn finish(self) -> Result<(), CliError> {
        let primary = match self.outputs.first() {
            Some((path, _)) => path.clone(),
            None => {
                return Err(CliError::Input(format!(
                    "{} produced no output to anchor its manifest",
                    self.command
                )))
            }
        };
        let mut name = primary.into_os_string();
        name.push(".manifest");
        let path = PathBuf::from(name);

        let mut body = self.config_echo.clone();
        body.push_str("\n[manifest]\n");
        let _ = write!(body, "command = {}\n", self.command);
        let _ = write!(body, "config_hash = {}\n", self.config_hash);
        let _ = write!(body, "seed = {}\n", self.seed);
        for (given, _, hash) in &self.inputs {
            let _ = write!(body, "input = {} sha256:{hash}\n", given.display());
        }
        for (given, hash) in &self.outputs {
            let _ = write!(body, "output = {} sha256:{hash}\n", given.display());
        }
        let full = format!("{}{}", self.header(), body);
        write_atomic(&path, full.as_bytes())
    }
}

/// Where `path` will land, resolved enough to compare against inputs even
/// though the file may not exist yet.
fn canonical_target(path: &Path) -> Option<PathBuf> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let dir = fs::canonicalize(parent).ok()?;
    Some(dir.join(path.file_name()?))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Input(format!("{}: cannot create temp file: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(())
}
