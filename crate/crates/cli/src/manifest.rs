//! `manifest.txt`: one line per artifact, `path config-digest content-hash`.
//!
//! Paths are relative to the output directory and use `/`. Both numbers are
//! 16 hex digits; the content hash is FNV-1a over the file bytes. Lines are
//! kept sorted by path so the file itself is deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::hash::Hasher;
use std::path::Path;

use crate::CliError;

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub config_digest: u64,
    pub content_hash: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: BTreeMap<String, Entry>,
}

pub fn content_hash(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

impl Manifest {
    /// An absent manifest reads as empty.
    pub fn load(out: &Path) -> Result<Self, CliError> {
        let path = out.join(FILE_NAME);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(e) => return Err(r4t::Error::from(e).into()),
        };
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        let mut offset = 0u64;
        for line in text.lines() {
            let here = offset;
            offset += line.len() as u64 + 1;
            let bad = |what: &str| {
                CliError::Core(r4t::Error::Format {
                    offset: here,
                    message: format!("{FILE_NAME}: {what}"),
                })
            };
            let parts: Vec<&str> = line.split(' ').collect();
            let [path, digest, hash] = parts[..] else {
                return Err(bad("expected `path digest hash`"));
            };
            let hex = |s: &str| u64::from_str_radix(s, 16).map_err(|_| bad("malformed hex field"));
            let entry = Entry {
                config_digest: hex(digest)?,
                content_hash: hex(hash)?,
            };
            if entries.insert(path.to_string(), entry).is_some() {
                return Err(bad("duplicate path"));
            }
        }
        Ok(Self { entries })
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(p, e)| format!("{p} {:016x} {:016x}\n", e.config_digest, e.content_hash))
            .collect()
    }

    pub fn save(&self, out: &Path) -> Result<(), CliError> {
        fs::write(out.join(FILE_NAME), self.render()).map_err(r4t::Error::from)?;
        Ok(())
    }

    /// Hashes `out/rel` and records it under `digest`.
    pub fn record(&mut self, out: &Path, rel: &str, digest: u64) -> Result<(), CliError> {
        let bytes = fs::read(out.join(rel)).map_err(r4t::Error::from)?;
        self.entries.insert(
            rel.to_string(),
            Entry {
                config_digest: digest,
                content_hash: content_hash(&bytes),
            },
        );
        Ok(())
    }

    /// Fails unless `out/rel` is listed under `digest` with its current contents.
    pub fn verify(&self, out: &Path, rel: &str, digest: u64) -> Result<(), CliError> {
        let mismatch = |found: String| CliError::DigestMismatch {
            path: rel.to_string(),
            expected: format!("{digest:016x}"),
            found,
        };
        let entry = self
            .entries
            .get(rel)
            .ok_or_else(|| mismatch("no manifest entry".into()))?;
        if entry.config_digest != digest {
            return Err(mismatch(format!("{:016x}", entry.config_digest)));
        }
        let bytes = fs::read(out.join(rel)).map_err(r4t::Error::from)?;
        if content_hash(&bytes) != entry.content_hash {
            return Err(mismatch("file modified after it was written".into()));
        }
        Ok(())
    }
}
