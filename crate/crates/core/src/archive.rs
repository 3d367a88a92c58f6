//! Named-tensor container used for every set of model parameters.
//!
//! File layout (all text is UTF-8, lines end in a single `\n`):
//!
//! ```text
//! tensor-archive v1
//! <name> [<d0>,<d1>,...] f32le      one line per tensor, payload order
//! end
//! <raw payload>                      concatenated little-endian f32, row-major
//! ```
//!
//! Names are non-empty and contain no whitespace. A scalar has shape `[]`.
//! The parser only accepts the canonical spelling above, so any archive that
//! loads is reproduced byte for byte by [`TensorArchive::to_bytes`].

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "tensor-archive v1";
const END: &str = "end";
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    tensors: Vec<Tensor>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<()> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Integrity {
                tensor: name.to_string(),
                reason: "name must be non-empty without whitespace".into(),
            });
        }
        if self.get(name).is_some() {
            return Err(Error::Integrity {
                tensor: name.to_string(),
                reason: "duplicate tensor name".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Integrity {
                tensor: name.to_string(),
                reason: format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            });
        }
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    /// Inserts or replaces a tensor, keeping the position of a replaced entry.
    pub fn upsert(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<()> {
        if let Some(pos) = self.tensors.iter().position(|t| t.name == name) {
            let old = self.tensors.remove(pos);
            if let Err(e) = self.insert(name, shape, data) {
                self.tensors.insert(pos, old);
                return Err(e);
            }
            let new = self.tensors.pop().expect("just inserted");
            self.tensors.insert(pos, new);
            Ok(())
        } else {
            self.insert(name, shape, data)
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Fetches a tensor and checks it has exactly `shape`.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Model(format!("tensor `{name}` missing from archive")))?;
        if t.shape != shape {
            return Err(Error::Model(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn merge(&mut self, other: TensorArchive) -> Result<()> {
        for t in other.tensors {
            self.upsert(&t.name, &t.shape, t.data)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            out.push_str(&format!("{} [{}] {DTYPE}\n", t.name, dims.join(",")));
        }
        out.push_str(END);
        out.push('\n');
        let mut bytes = out.into_bytes();
        for t in &self.tensors {
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut next_line = |what: &str| -> Result<(usize, String)> {
            let rest = &bytes[pos..];
            let nl = rest.iter().position(|b| *b == b'\n').ok_or_else(|| Error::Integrity {
                tensor: what.to_string(),
                reason: "unterminated manifest".into(),
            })?;
            let line = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::Integrity {
                tensor: what.to_string(),
                reason: "manifest is not UTF-8".into(),
            })?;
            let start = pos;
            pos += nl + 1;
            Ok((start, line.to_string()))
        };

        let (_, magic) = next_line("<header>")?;
        if magic != MAGIC {
            return Err(Error::Integrity {
                tensor: "<header>".into(),
                reason: format!("bad magic line `{magic}`"),
            });
        }
        let mut entries: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            let (_, line) = next_line("<manifest>")?;
            if line == END {
                break;
            }
            entries.push(parse_entry(&line)?);
        }

        let mut archive = TensorArchive::new();
        let mut offset = pos;
        for (name, shape) in entries {
            let numel: usize = shape.iter().product();
            let len = numel * 4;
            let available = bytes.len() - offset;
            if available < len {
                return Err(Error::Integrity {
                    tensor: name,
                    reason: format!("needs {len} payload bytes, only {available} remain"),
                });
            }
            let data = bytes[offset..offset + len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += len;
            archive.insert(&name, &shape, data)?;
        }
        if offset != bytes.len() {
            let last = archive
                .tensors
                .last()
                .map_or_else(|| "<payload>".to_string(), |t| t.name.clone());
            return Err(Error::Integrity {
                tensor: last,
                reason: format!("{} trailing payload bytes", bytes.len() - offset),
            });
        }
        Ok(archive)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn parse_entry(line: &str) -> Result<(String, Vec<usize>)> {
    let bad = |reason: &str| Error::Integrity {
        tensor: line.split(' ').next().unwrap_or_default().to_string(),
        reason: format!("{reason} in manifest line `{line}`"),
    };
    let parts: Vec<&str> = line.split(' ').collect();
    let [name, shape, dtype] = parts[..] else {
        return Err(bad("expected `name [shape] dtype`"));
    };
    if name.is_empty() {
        return Err(bad("empty name"));
    }
    if dtype != DTYPE {
        return Err(bad("unsupported dtype"));
    }
    let inner = shape
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| bad("malformed shape"))?;
    let dims = if inner.is_empty() {
        Vec::new()
    } else {
        inner
            .split(',')
            .map(|d| {
                // canonical decimal only: no sign, no leading zeros
                if d.is_empty() || (d.len() > 1 && d.starts_with('0')) || !d.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(bad("malformed dimension"));
                }
                d.parse::<usize>().map_err(|_| bad("malformed dimension"))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok((name.to_string(), dims))
}
