//! Run manifests: flat `key = value` files written next to every output.
//!
//! Config keys are stored with a `config.` prefix, so a manifest can be
//! passed back as `--config` to reproduce the run.

use crate::error::{CliResult, WithPath};
use afc_dlcz::ProtocolConfig;
use sha2::{Digest, Sha256};
use std::fmt::{Display, Write as _};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

const CONFIG_PREFIX: &str = "config.";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

/// `path` with `suffix` appended to its file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn sidecar(path: &Path) -> PathBuf {
    with_suffix(path, ".manifest")
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = std::fs::File::open(path).at(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).at(path)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let mut hex = String::with_capacity(64);
    for b in hasher.finalize().iter() {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest::default();
        m.set("manifest", "afc-dlcz");
        m.set("tool_version", env!("CARGO_PKG_VERSION"));
        m.set("command", command);
        m.set("started_unix_ms", unix_ms());
        m
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_config(&mut self, config: &ProtocolConfig) {
        for line in config.to_string().lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.set(&format!("{CONFIG_PREFIX}{}", k.trim()), v.trim());
            }
        }
    }

    /// Config snapshot, if the manifest carries one.
    pub fn config(&self) -> Option<afc_dlcz::Result<ProtocolConfig>> {
        let text: String = self
            .entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(CONFIG_PREFIX).map(|k| format!("{k} = {v}\n")))
            .collect();
        (!text.is_empty()).then(|| text.parse())
    }

    /// Records a file under `role` with its digest.
    pub fn file(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let digest = sha256_file(path)?;
        self.set(role, path.display());
        self.set(&format!("{role}.sha256"), digest);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut m = Manifest::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=')?;
            m.set(k.trim(), v.trim());
        }
        (m.get("manifest") == Some("afc-dlcz")).then_some(m)
    }

    pub fn read(path: &Path) -> CliResult<Option<Self>> {
        if !path.exists() {
            return Ok(None);
        }
        Ok(Self::parse(&std::fs::read_to_string(path).at(path)?))
    }

    /// Writes the manifest to the sidecar of `output`.
    pub fn write_for(mut self, output: &Path) -> CliResult<PathBuf> {
        self.set("finished_unix_ms", unix_ms());
        let path = sidecar(output);
        std::fs::write(&path, self.to_text()).at(&path)?;
        Ok(path)
    }
}

/// Reads a config file, or the config snapshot of a manifest.
pub fn load_config(path: &Path) -> CliResult<ProtocolConfig> {
    let text = std::fs::read_to_string(path).at(path)?;
    let parsed = match Manifest::parse(&text) {
        Some(m) => m.config().unwrap_or_else(|| Ok(ProtocolConfig::default())),
        None => text.parse(),
    };
    parsed.at(path)
}
