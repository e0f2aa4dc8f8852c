//! On-disk persistence: `key=value` manifests, raw little-endian arrays and
//! named array bundles used for checkpoints.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ordered `key=value` text record. Lines starting with `#` are comments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format("<manifest>", format!("missing key `{key}`")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::format("<manifest>", format!("bad value for `{key}`: {raw}")))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format("<manifest>", format!("line {}: expected key=value", lineno + 1))
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format { reason, .. } => Error::format(path, reason),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(Dtype::F32),
            "f64" => Some(Dtype::F64),
            _ => None,
        }
    }
}

pub fn encode_array(a: &Array2<f64>, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len() * 8);
    for &x in a.iter() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
        }
    }
    out
}

pub fn decode_array(bytes: &[u8], shape: (usize, usize), dtype: Dtype) -> Option<Array2<f64>> {
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    if bytes.len() != shape.0 * shape.1 * width {
        return None;
    }
    let values: Vec<f64> = bytes
        .chunks_exact(width)
        .map(|c| match dtype {
            Dtype::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            Dtype::F64 => f64::from_le_bytes(c.try_into().unwrap()),
        })
        .collect();
    Array2::from_shape_vec(shape, values).ok()
}

pub fn write_array(path: &Path, a: &Array2<f64>, dtype: Dtype) -> Result<()> {
    fs::write(path, encode_array(a, dtype))?;
    Ok(())
}

pub fn read_array(path: &Path, shape: (usize, usize), dtype: Dtype) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    decode_array(&bytes, shape, dtype)
        .ok_or_else(|| Error::format(path, format!("size does not match shape {shape:?}")))
}

pub fn write_labels(path: &Path, labels: &[i64]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(path, "label file length not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn format_shape(shape: (usize, usize)) -> String {
    format!("{},{}", shape.0, shape.1)
}

pub fn parse_shape(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// Writes `manifest.txt` plus one `<name>.bin` (f64) per array. Array shapes
/// and the ordered name list are recorded in the manifest.
pub fn save_bundle(dir: &Path, meta: &Manifest, arrays: &[(String, &Array2<f64>)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut m = meta.clone();
    let names: Vec<&str> = arrays.iter().map(|(n, _)| n.as_str()).collect();
    m.set("arrays", names.join(";"));
    for (name, a) in arrays {
        m.set(format!("array.{name}.shape"), format_shape(a.dim()));
        m.set(format!("array.{name}.dtype"), Dtype::F64.name());
        write_array(&dir.join(format!("{name}.bin")), a, Dtype::F64)?;
    }
    m.write(&dir.join("manifest.txt"))
}

pub fn load_bundle(dir: &Path) -> Result<(Manifest, Vec<(String, Array2<f64>)>)> {
    let m = Manifest::read(&dir.join("manifest.txt"))?;
    let names = m.get("arrays").unwrap_or("");
    let mut arrays = Vec::new();
    for name in names.split(';').filter(|n| !n.is_empty()) {
        let shape = m
            .get(&format!("array.{name}.shape"))
            .and_then(parse_shape)
            .ok_or_else(|| Error::format(dir, format!("missing shape for {name}")))?;
        let dtype = m
            .get(&format!("array.{name}.dtype"))
            .and_then(Dtype::parse)
            .unwrap_or(Dtype::F64);
        let a = read_array(&dir.join(format!("{name}.bin")), shape, dtype)?;
        arrays.push((name.to_string(), a));
    }
    Ok((m, arrays))
}

/// SHA-256 over shapes and exact bit patterns.
pub fn hash_arrays<'a>(arrays: impl IntoIterator<Item = &'a Array2<f64>>) -> String {
    let mut h = Sha256::new();
    for a in arrays {
        h.update((a.nrows() as u64).to_le_bytes());
        h.update((a.ncols() as u64).to_le_bytes());
        for x in a.iter() {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
