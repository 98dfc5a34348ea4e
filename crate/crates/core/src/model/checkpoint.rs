//! Checkpoints: a raw little-endian `f32` blob in parameter definition
//! order, plus a `key=value` text sidecar with the same stem and a `.meta`
//! extension.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Parameters;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn from_pairs<K: Into<String>, const N: usize>(pairs: [(K, String); N]) -> Self {
        Self {
            entries: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::config(key, "missing from checkpoint metadata"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::config(key, "unparsable checkpoint metadata value"))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut meta = Metadata::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, "metadata line lacks `=`"))?;
            meta.insert(k.trim(), v.trim());
        }
        Ok(meta)
    }
}

pub fn metadata_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

pub fn write_checkpoint<P: Parameters + ?Sized>(path: &Path, meta: &Metadata, params: &P) -> Result<()> {
    let mut blob = Vec::with_capacity(params.parameter_count() * 4);
    for t in params.tensors() {
        for v in t {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    fs::write(path, blob).map_err(|e| Error::file(path, e))?;
    let meta_path = metadata_path(path);
    fs::write(&meta_path, meta.to_text()).map_err(|e| Error::file(&meta_path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(Metadata, Vec<u8>)> {
    let blob = fs::read(path).map_err(|e| Error::file(path, e))?;
    let meta_path = metadata_path(path);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::file(&meta_path, e))?;
    Ok((Metadata::from_text(&text)?, blob))
}

pub(crate) fn load_into<P: Parameters + ?Sized>(params: &mut P, blob: &[u8]) -> std::result::Result<(), String> {
    let expected = params.parameter_count() * 4;
    if blob.len() != expected {
        return Err(format!(
            "parameter blob has {} bytes, architecture needs {expected}",
            blob.len()
        ));
    }
    let mut chunks = blob.chunks_exact(4);
    for t in params.tensors_mut() {
        for (v, c) in t.iter_mut().zip(&mut chunks) {
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    Ok(())
}
