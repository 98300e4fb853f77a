//! SBM1 binary array container.
//!
//! Layout: magic bytes `SBM1`, a little-endian `u32` header length, a UTF-8
//! JSON header, then the raw array bytes. The header declares the container
//! kind, free-form metadata, and for every array its name, dtype, shape and
//! byte offset into the data section. Numeric payloads are float32
//! little-endian; index payloads are u32/i32 little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SBM1";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not an SBM1 container)")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("array {name:?}: declared shape {shape:?} does not cover {bytes} bytes")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        bytes: usize,
    },
    #[error("array {name:?} extends past end of data section")]
    Truncated { name: String },
    #[error("missing array {0:?}")]
    MissingArray(String),
    #[error("array {name:?} has dtype {got}, expected {want}")]
    DtypeMismatch {
        name: String,
        got: &'static str,
        want: &'static str,
    },
    #[error("array {name:?} has shape {got:?}, expected {want:?}")]
    ArrayShape {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    I32(Vec<i32>),
}

impl ArrayData {
    pub fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::U32(_) => "u32",
            ArrayData::I32(_) => "i32",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::U32(v) => v.len(),
            ArrayData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn byte_len(&self) -> usize {
        self.len() * 4
    }
}

/// One named array with a row-major (C order) shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn f32(name: &str, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: ArrayData::F32(data),
        }
    }

    pub fn from_f64(name: &str, shape: Vec<usize>, data: &[f64]) -> Self {
        Self::f32(name, shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn u32(name: &str, shape: Vec<usize>, data: Vec<u32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: ArrayData::U32(data),
        }
    }

    pub fn i32(name: &str, shape: Vec<usize>, data: Vec<i32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: ArrayData::I32(data),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderArray {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    #[serde(default)]
    meta: serde_json::Value,
    arrays: Vec<HeaderArray>,
}

/// A parsed SBM1 container.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.into(),
            meta: serde_json::Value::Object(Default::default()),
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, array: NamedArray) {
        self.arrays.push(array);
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray, ContainerError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| ContainerError::MissingArray(name.into()))
    }

    pub fn get_f32(&self, name: &str) -> Result<(&[usize], &[f32]), ContainerError> {
        let arr = self.get(name)?;
        match &arr.data {
            ArrayData::F32(v) => Ok((&arr.shape, v)),
            other => Err(ContainerError::DtypeMismatch {
                name: name.into(),
                got: other.dtype(),
                want: "f32",
            }),
        }
    }

    /// f32 payload widened to f64, with the expected shape enforced.
    pub fn take_f64(&self, name: &str, want: &[usize]) -> Result<Vec<f64>, ContainerError> {
        let (shape, data) = self.get_f32(name)?;
        if shape != want {
            return Err(ContainerError::ArrayShape {
                name: name.into(),
                got: shape.to_vec(),
                want: want.to_vec(),
            });
        }
        Ok(data.iter().map(|&v| v as f64).collect())
    }

    pub fn get_u32(&self, name: &str) -> Result<(&[usize], &[u32]), ContainerError> {
        let arr = self.get(name)?;
        match &arr.data {
            ArrayData::U32(v) => Ok((&arr.shape, v)),
            other => Err(ContainerError::DtypeMismatch {
                name: name.into(),
                got: other.dtype(),
                want: "u32",
            }),
        }
    }

    pub fn get_i32(&self, name: &str) -> Result<(&[usize], &[i32]), ContainerError> {
        let arr = self.get(name)?;
        match &arr.data {
            ArrayData::I32(v) => Ok((&arr.shape, v)),
            other => Err(ContainerError::DtypeMismatch {
                name: name.into(),
                got: other.dtype(),
                want: "i32",
            }),
        }
    }

    pub fn meta_object(&self) -> BTreeMap<String, serde_json::Value> {
        match &self.meta {
            serde_json::Value::Object(map) => {
                map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
            }
            _ => BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), ContainerError> {
        let mut header_arrays = Vec::with_capacity(self.arrays.len());
        let mut offset = 0usize;
        for arr in &self.arrays {
            header_arrays.push(HeaderArray {
                name: arr.name.clone(),
                dtype: arr.data.dtype().into(),
                shape: arr.shape.clone(),
                offset,
            });
            offset += arr.data.byte_len();
        }
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: header_arrays,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| ContainerError::Header(e.to_string()))?;

        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(&MAGIC)?;
        w.write_all(&(header_json.len() as u32).to_le_bytes())?;
        w.write_all(&header_json)?;
        for arr in &self.arrays {
            match &arr.data {
                ArrayData::F32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                ArrayData::U32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                ArrayData::I32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let mut len_bytes = [0u8; 4];
        file.read_exact(&mut len_bytes)?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        file.read_exact(&mut header_json)?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| ContainerError::Header(e.to_string()))?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;

        let mut arrays = Vec::with_capacity(header.arrays.len());
        for ha in header.arrays {
            let count: usize = ha.shape.iter().product();
            let bytes = count * 4;
            let end = ha.offset.checked_add(bytes).filter(|&e| e <= data.len());
            let end = end.ok_or(ContainerError::Truncated {
                name: ha.name.clone(),
            })?;
            let raw = &data[ha.offset..end];
            let array_data = match ha.dtype.as_str() {
                "f32" => ArrayData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                ),
                "u32" => ArrayData::U32(
                    raw.chunks_exact(4)
                        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                ),
                "i32" => ArrayData::I32(
                    raw.chunks_exact(4)
                        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                ),
                other => {
                    return Err(ContainerError::Header(format!(
                        "array {:?} has unsupported dtype {other:?}",
                        ha.name
                    )))
                }
            };
            if array_data.len() != count {
                return Err(ContainerError::ShapeMismatch {
                    name: ha.name,
                    shape: ha.shape,
                    bytes: raw.len(),
                });
            }
            arrays.push(NamedArray {
                name: ha.name,
                shape: ha.shape,
                data: array_data,
            });
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("test");
        c.meta = serde_json::json!({"alpha": 1, "label": "x"});
        c.push(NamedArray::f32("a", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        c.push(NamedArray::u32("faces", vec![1, 3], vec![0, 1, 2]));
        c.push(NamedArray::i32("parents", vec![2], vec![-1, 0]));
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sbm1");
        c.write(&path).unwrap();
        let back = Container::read(&path).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.meta, c.meta);
        assert_eq!(back.arrays, c.arrays);
    }

    #[test]
    fn write_is_deterministic() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.sbm1");
        let p2 = dir.path().join("b.sbm1");
        c.write(&p1).unwrap();
        c.write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.sbm1");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(
            Container::read(&path),
            Err(ContainerError::BadMagic)
        ));
    }

    #[test]
    fn truncated_array_rejected() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sbm1");
        c.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            Container::read(&path),
            Err(ContainerError::Truncated { .. })
        ));
    }
}
