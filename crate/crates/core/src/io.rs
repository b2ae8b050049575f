//! `PUSR` checkpoint files.
//!
//! All integers are little-endian.
//!
//! | field            | type                                   |
//! |------------------|----------------------------------------|
//! | magic            | `b"PUSR"`                              |
//! | format_version   | `u16` (currently 1)                    |
//! | form             | `u8`, 0 = training, 1 = fused          |
//! | config_len       | `u32`                                  |
//! | config           | `config_len` bytes of UTF-8 JSON       |
//! | tensor_count     | `u32`                                  |
//! | tensor entries   | `tensor_count` × entry (below)         |
//! | payload          | tensors, each at a 64-byte aligned offset, zero padded |
//!
//! Entry: `name_len: u16`, `name` (UTF-8), `dtype: u8` (0 = f32, 1 = f64),
//! `rank: u8`, `dims: rank × u32`, `offset: u64` (absolute, from file start).
//!
//! Tensors are written in the model's canonical order, so equal models
//! produce identical files. The file ends right after the last tensor.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::backbone::{Form, ModelConfig, PlainUsrModel};
use crate::error::CheckpointError;
use crate::tensor::{DType, Scalar};

pub const MAGIC: [u8; 4] = *b"PUSR";
pub const FORMAT_VERSION: u16 = 1;
pub const ALIGNMENT: u64 = 64;

type Result<T> = std::result::Result<T, CheckpointError>;

/// A model of either dtype, as read from disk.
#[derive(Debug, Clone)]
pub enum AnyModel {
    F32(PlainUsrModel<f32>),
    F64(PlainUsrModel<f64>),
}

impl AnyModel {
    pub fn dtype(&self) -> DType {
        match self {
            AnyModel::F32(_) => DType::F32,
            AnyModel::F64(_) => DType::F64,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::F32(m) => &m.config,
            AnyModel::F64(m) => &m.config,
        }
    }

    pub fn form(&self) -> Form {
        match self {
            AnyModel::F32(m) => m.form,
            AnyModel::F64(m) => m.form,
        }
    }
}

fn align_up(v: u64) -> u64 {
    v.div_ceil(ALIGNMENT) * ALIGNMENT
}

pub fn to_bytes<T: Scalar>(m: &PlainUsrModel<T>) -> Vec<u8> {
    let config = serde_json::to_vec(&m.config).expect("config serializes");
    let tensors = m.named_tensors();

    let mut header = Vec::new();
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.push(m.form.code());
    header.extend_from_slice(&(config.len() as u32).to_le_bytes());
    header.extend_from_slice(&config);
    header.extend_from_slice(&(tensors.len() as u32).to_le_bytes());

    let table_len: usize = tensors
        .iter()
        .map(|t| 2 + t.name.len() + 1 + 1 + 4 * t.dims.len() + 8)
        .sum();
    let mut offset = align_up((header.len() + table_len) as u64);
    let mut offsets = Vec::with_capacity(tensors.len());
    for t in &tensors {
        offsets.push(offset);
        offset = align_up(offset + (t.data.len() * T::DTYPE.size()) as u64);
    }
    for (t, &off) in tensors.iter().zip(&offsets) {
        header.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        header.extend_from_slice(t.name.as_bytes());
        header.push(T::DTYPE.code());
        header.push(t.dims.len() as u8);
        for &d in &t.dims {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        header.extend_from_slice(&off.to_le_bytes());
    }

    let mut out = header;
    for (t, &off) in tensors.iter().zip(&offsets) {
        out.resize(off as usize, 0);
        for &v in t.data {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn save<T: Scalar>(m: &PlainUsrModel<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(m))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                offset: self.pos as u64,
                needed: n as u64,
                len: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct Entry<'a> {
    name: String,
    dtype: DType,
    dims: Vec<usize>,
    data: &'a [u8],
}

struct Parsed<'a> {
    form: Form,
    config: ModelConfig,
    entries: Vec<Entry<'a>>,
}

fn parse(bytes: &[u8]) -> Result<Parsed<'_>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let form_code = cur.u8()?;
    let form = Form::from_code(form_code).ok_or(CheckpointError::UnknownForm(form_code))?;
    let config_len = cur.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(cur.take(config_len)?).map_err(|e| CheckpointError::Config(e.to_string()))?;
    config.validate().map_err(|e| CheckpointError::Config(e.to_string()))?;

    let count = cur.u32()? as usize;
    let mut raw = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| CheckpointError::BadName)?
            .to_owned();
        let code = cur.u8()?;
        let dtype = DType::from_code(code).ok_or(CheckpointError::UnknownDtype(code))?;
        let rank = cur.u8()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = cur.u64()?;
        raw.push((name, dtype, dims, offset));
    }

    let file_len = bytes.len() as u64;
    let mut prev_end = cur.pos as u64;
    let mut entries = Vec::with_capacity(raw.len());
    for (name, dtype, dims, offset) in raw {
        if offset % ALIGNMENT != 0 {
            return Err(CheckpointError::Misaligned { name, offset });
        }
        if offset < prev_end {
            return Err(CheckpointError::Overlap { name, offset, prev_end });
        }
        let len = dims
            .iter()
            .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d as u64))
            .unwrap_or(u64::MAX);
        if offset.checked_add(len).is_none_or(|end| end > file_len) {
            return Err(CheckpointError::Truncated {
                offset,
                needed: len,
                len: file_len,
            });
        }
        prev_end = offset + len;
        entries.push(Entry {
            name,
            dtype,
            dims,
            data: &bytes[offset as usize..prev_end as usize],
        });
    }
    if prev_end < file_len {
        return Err(CheckpointError::TrailingBytes(file_len - prev_end));
    }
    Ok(Parsed { form, config, entries })
}

fn fill<T: Scalar>(parsed: Parsed<'_>) -> Result<PlainUsrModel<T>> {
    let mut model = PlainUsrModel::<T>::skeleton(&parsed.config, parsed.form)
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    let mut by_name: HashMap<&str, &Entry<'_>> = HashMap::with_capacity(parsed.entries.len());
    for e in &parsed.entries {
        if by_name.insert(e.name.as_str(), e).is_some() {
            return Err(CheckpointError::DuplicateTensor(e.name.clone()));
        }
    }
    for slot in model.named_tensors_mut() {
        let entry = by_name
            .remove(slot.name.as_str())
            .ok_or_else(|| CheckpointError::MissingTensor(slot.name.clone()))?;
        if entry.dims != slot.dims {
            return Err(CheckpointError::TensorShape {
                name: slot.name,
                expected: slot.dims,
                found: entry.dims.clone(),
            });
        }
        if entry.dtype != T::DTYPE {
            return Err(CheckpointError::Dtype {
                name: slot.name,
                expected: T::DTYPE.name(),
                found: entry.dtype.name(),
            });
        }
        for (dst, chunk) in slot.data.iter_mut().zip(entry.data.chunks_exact(T::DTYPE.size())) {
            *dst = T::read_le(chunk);
        }
    }
    if let Some(name) = parsed
        .entries
        .iter()
        .map(|e| e.name.as_str())
        .find(|n| by_name.contains_key(n))
    {
        return Err(CheckpointError::UnexpectedTensor(name.to_owned()));
    }
    Ok(model)
}

/// Parses a checkpoint whose tensors are stored as `T`.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<PlainUsrModel<T>> {
    fill(parse(bytes)?)
}

/// Parses a checkpoint of either dtype; the first tensor decides.
pub fn from_bytes_any(bytes: &[u8]) -> Result<AnyModel> {
    let parsed = parse(bytes)?;
    match parsed.entries.first().map(|e| e.dtype) {
        Some(DType::F64) => Ok(AnyModel::F64(fill(parsed)?)),
        _ => Ok(AnyModel::F32(fill(parsed)?)),
    }
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<PlainUsrModel<T>> {
    from_bytes(&fs::read(path)?)
}

pub fn load_any(path: impl AsRef<Path>) -> Result<AnyModel> {
    from_bytes_any(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_model, Variant};

    fn small() -> PlainUsrModel<f32> {
        build_model(&ModelConfig::preset(Variant::U, 2), 5).unwrap()
    }

    #[test]
    fn offsets_are_aligned_and_file_is_tight() {
        let m = small();
        let bytes = to_bytes(&m);
        let parsed = parse(&bytes).unwrap();
        let mut end = 0;
        for e in &parsed.entries {
            let off = e.data.as_ptr() as usize - bytes.as_ptr() as usize;
            assert_eq!(off % 64, 0);
            assert!(off >= end);
            end = off + e.data.len();
        }
        assert_eq!(end, bytes.len());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = to_bytes(&small());
        bytes[0] = b'X';
        assert!(matches!(from_bytes::<f32>(&bytes), Err(CheckpointError::BadMagic(_))));
        let mut bytes = to_bytes(&small());
        bytes[4] = 9;
        assert!(matches!(
            from_bytes::<f32>(&bytes),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
        let mut bytes = to_bytes(&small());
        bytes[6] = 7;
        assert!(matches!(
            from_bytes::<f32>(&bytes),
            Err(CheckpointError::UnknownForm(7))
        ));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = to_bytes(&small());
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(from_bytes::<f32>(&bytes[..cut]), Err(CheckpointError::Truncated { .. })),
                "cut at {cut}"
            );
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            from_bytes::<f32>(&longer),
            Err(CheckpointError::TrailingBytes(1))
        ));
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let bytes = to_bytes(&small());
        assert!(matches!(from_bytes::<f64>(&bytes), Err(CheckpointError::Dtype { .. })));
        assert!(matches!(from_bytes_any(&bytes).unwrap(), AnyModel::F32(_)));
    }
}
