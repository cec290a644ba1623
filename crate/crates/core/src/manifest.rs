//! Run manifests: canonical `key=value` text, one entry per line, sorted
//! by key.
//!
//! ```text
//! command=train
//! config.lr0=0.001
//! input.pairs.txt=<sha256>
//! output.model.stgn=<sha256>
//! seed.run=7
//! time.finished=1760000000
//! ```
//! `time.*` entries are informational; [`RunManifest::fingerprint`] ignores
//! them, so two runs with equal fingerprints used the same inputs and
//! produced the same outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binio::{read_file, write_file};
use crate::error::{ensure, Error, Result};
use crate::rng::RNG_ALGORITHM;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    entries: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&read_file(path.as_ref())?))
}

impl RunManifest {
    /// A manifest with the command, tool version and RNG algorithm filled in.
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.entries.insert("command".into(), command.into());
        m.entries.insert("tool.version".into(), env!("CARGO_PKG_VERSION").into());
        m.entries.insert("tool.rng".into(), RNG_ALGORITHM.into());
        m
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> Result<&mut Self> {
        let value = value.to_string();
        ensure!(!key.is_empty() && !key.contains(['=', '\n', '\r']), "bad manifest key `{key}`");
        ensure!(!value.contains(['\n', '\r']), "manifest value for `{key}` spans lines");
        self.entries.insert(key.into(), value);
        Ok(self)
    }

    pub fn config(&mut self, key: &str, value: impl Display) -> Result<&mut Self> {
        self.set(&format!("config.{key}"), value)
    }

    pub fn seed(&mut self, key: &str, seed: u64) -> Result<&mut Self> {
        self.set(&format!("seed.{key}"), seed)
    }

    /// Records the SHA-256 of an input file under `label`.
    pub fn input(&mut self, label: &str, path: impl AsRef<Path>) -> Result<&mut Self> {
        let hash = sha256_file(path)?;
        self.set(&format!("input.{label}"), hash)
    }

    pub fn output(&mut self, label: &str, path: impl AsRef<Path>) -> Result<&mut Self> {
        let hash = sha256_file(path)?;
        self.set(&format!("output.{label}"), hash)
    }

    pub fn timestamp(&mut self, key: &str) -> Result<&mut Self> {
        let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        self.set(&format!("time.{key}"), secs)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries().filter_map(move |(k, v)| k.strip_prefix(prefix)?.strip_prefix('.').map(|k| (k, v)))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.is_empty() {
                let (k, v) = body
                    .split_once('=')
                    .ok_or_else(|| Error::Parse { offset, message: format!("expected key=value, got `{body}`") })?;
                if m.entries.insert(k.into(), v.into()).is_some() {
                    return Err(Error::Parse { offset, message: format!("duplicate key `{k}`") });
                }
            }
            offset += line.len();
        }
        Ok(m)
    }

    /// SHA-256 of the canonical text without `time.*` entries.
    pub fn fingerprint(&self) -> String {
        let text: String =
            self.entries.iter().filter(|(k, _)| !k.starts_with("time.")).map(|(k, v)| format!("{k}={v}\n")).collect();
        sha256_hex(text.as_bytes())
    }

    /// Re-hashes every `output.<label>` entry against `dir/<label>`.
    pub fn verify_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        for (label, expected) in self.section("output") {
            let actual = sha256_file(dir.as_ref().join(label))?;
            if actual != expected {
                return Err(Error::format("manifest", format!("output `{label}` hash {actual} != recorded {expected}")));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        Self::parse(&String::from_utf8(bytes).map_err(|e| Error::format("manifest", e.to_string()))?)
    }
}
