//! JSON header + little-endian `f64` blob storage.
//!
//! A container is two files: `name.json` holds the kind tag, free-form
//! metadata and an array table (`name`, `shape`, element `offset`), and
//! `name.bin` holds every array back to back as raw little-endian `f64`.
//! Body models, expression bases, codebooks, embedding tables and vertex or
//! pose tracks all use this layout.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const FORMAT_TAG: &str = "gesturekit-container";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed header {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("container kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },
    #[error("missing array '{0}'")]
    MissingArray(String),
    #[error("array '{name}': shape {shape:?} does not match {len} values")]
    ShapeMismatch { name: String, shape: Vec<usize>, len: usize },
    #[error("array '{name}' expected shape {expected}, found {found:?}")]
    UnexpectedShape { name: String, expected: String, found: Vec<usize> },
    #[error("blob {path} is truncated: needs {needed} bytes, has {actual}")]
    Truncated { path: PathBuf, needed: usize, actual: usize },
    #[error("invalid metadata: {0}")]
    Meta(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    blob: String,
    meta: Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    arrays: Vec<(ArrayEntry, Vec<f64>)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container { kind: kind.to_string(), meta: Value::Object(Default::default()), arrays: Vec::new() }
    }

    pub fn with_meta(mut self, meta: Value) -> Self {
        self.meta = meta;
        self
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<(), ContainerError> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(ContainerError::ShapeMismatch { name: name.into(), shape: shape.to_vec(), len: data.len() });
        }
        let offset = self.arrays.last().map(|(e, d)| e.offset + d.len()).unwrap_or(0);
        self.arrays.retain(|(e, _)| e.name != name);
        self.arrays.push((ArrayEntry { name: name.into(), shape: shape.to_vec(), offset }, data));
        Ok(())
    }

    pub fn array(&self, name: &str) -> Result<(&[usize], &[f64]), ContainerError> {
        self.arrays
            .iter()
            .find(|(e, _)| e.name == name)
            .map(|(e, d)| (e.shape.as_slice(), d.as_slice()))
            .ok_or_else(|| ContainerError::MissingArray(name.into()))
    }

    /// Fetches an array and checks its shape; `None` entries match any size.
    pub fn array_shaped(&self, name: &str, expected: &[Option<usize>]) -> Result<(&[usize], &[f64]), ContainerError> {
        let (shape, data) = self.array(name)?;
        let ok = shape.len() == expected.len() && shape.iter().zip(expected).all(|(s, e)| e.map_or(true, |e| e == *s));
        if !ok {
            let expected = expected
                .iter()
                .map(|e| e.map_or("_".to_string(), |v| v.to_string()))
                .collect::<Vec<_>>()
                .join("x");
            return Err(ContainerError::UnexpectedShape { name: name.into(), expected, found: shape.to_vec() });
        }
        Ok((shape, data))
    }

    pub fn has_array(&self, name: &str) -> bool {
        self.arrays.iter().any(|(e, _)| e.name == name)
    }

    pub fn array_names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(e, _)| e.name.as_str())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), ContainerError> {
        if self.kind != kind {
            return Err(ContainerError::KindMismatch { expected: kind.into(), found: self.kind.clone() });
        }
        Ok(())
    }

    /// Writes `path` (the JSON header) and its sibling `.bin` blob.
    pub fn write(&self, path: &Path) -> Result<(), ContainerError> {
        let blob_path = path.with_extension("bin");
        let blob_name = blob_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let header = Header {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            blob: blob_name,
            meta: self.meta.clone(),
            arrays: self.arrays.iter().map(|(e, _)| e.clone()).collect(),
        };
        let mut bytes = Vec::with_capacity(self.arrays.iter().map(|(_, d)| d.len() * 8).sum());
        for (_, data) in &self.arrays {
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut text = serde_json::to_string_pretty(&header).map_err(|e| ContainerError::Json { path: path.into(), source: e })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| ContainerError::Io { path: path.into(), source: e })?;
        fs::write(&blob_path, bytes).map_err(|e| ContainerError::Io { path: blob_path, source: e })
    }

    pub fn read(path: &Path) -> Result<Container, ContainerError> {
        let text = fs::read_to_string(path).map_err(|e| ContainerError::Io { path: path.into(), source: e })?;
        let header: Header = serde_json::from_str(&text).map_err(|e| ContainerError::Json { path: path.into(), source: e })?;
        if header.format != FORMAT_TAG {
            return Err(ContainerError::Meta(format!("unknown format tag '{}'", header.format)));
        }
        let blob_path = path.parent().unwrap_or(Path::new(".")).join(&header.blob);
        let bytes = fs::read(&blob_path).map_err(|e| ContainerError::Io { path: blob_path.clone(), source: e })?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let len: usize = entry.shape.iter().product();
            let start = entry.offset * 8;
            let end = start + len * 8;
            if end > bytes.len() {
                return Err(ContainerError::Truncated { path: blob_path, needed: end, actual: bytes.len() });
            }
            let data = bytes[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            arrays.push((entry, data));
        }
        Ok(Container { kind: header.kind, meta: header.meta, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_preserves_arrays_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("thing.json");
        let mut c = Container::new("test").with_meta(serde_json::json!({"seed": 7}));
        c.push("a", &[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, -0.125]).unwrap();
        c.push("b", &[1], vec![f64::MIN_POSITIVE]).unwrap();
        c.write(&path).unwrap();
        let back = Container::read(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.array("b").unwrap().1, &[f64::MIN_POSITIVE]);
        assert!(dir.path().join("thing.bin").exists());
    }

    #[test]
    fn shape_checks() {
        let mut c = Container::new("test");
        assert!(c.push("a", &[2, 2], vec![0.0; 3]).is_err());
        c.push("a", &[2, 2], vec![0.0; 4]).unwrap();
        assert!(c.array_shaped("a", &[Some(2), None]).is_ok());
        assert!(matches!(c.array_shaped("a", &[Some(3), None]), Err(ContainerError::UnexpectedShape { .. })));
        assert!(matches!(c.array("zzz"), Err(ContainerError::MissingArray(_))));
    }

    #[test]
    fn truncated_blob_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let mut c = Container::new("test");
        c.push("a", &[4], vec![1.0; 4]).unwrap();
        c.write(&path).unwrap();
        std::fs::write(dir.path().join("t.bin"), [0u8; 16]).unwrap();
        assert!(matches!(Container::read(&path), Err(ContainerError::Truncated { .. })));
    }
}
