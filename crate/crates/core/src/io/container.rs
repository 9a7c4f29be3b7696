//! The named-tensor container.
//!
//! ```text
//! "TERNMM01"                 8 bytes
//! header length H            u64 little-endian
//! header                     H bytes of UTF-8 JSON, keys sorted, no whitespace
//! data section               tensors in name order, each 64-byte aligned
//! ```
//!
//! The header is `{"meta": {...}, "tensors": {name: {dtype, nbytes, offset,
//! shape}}}` with offsets relative to the start of the data section.
//! `f32` payloads are little-endian; `t2` payloads use the packed trit
//! layout of [`crate::quant`] and always come with an `f32` companion
//! `"<name>.scale"` holding β.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::layout::{scale_name, SCALE_SUFFIX};
use crate::pipeline::ModelConfig;
use crate::quant::{packed_row_bytes, PackedTernaryMatrix};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TERNMM01";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGN: u64 = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Tensor),
    I8 {
        shape: Vec<usize>,
        values: Vec<i8>,
    },
    T2 {
        rows: usize,
        cols: usize,
        bytes: Vec<u8>,
    },
}

impl TensorData {
    pub fn dtype(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::I8 { .. } => "i8",
            TensorData::T2 { .. } => "t2",
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorData::F32(t) => t.shape().to_vec(),
            TensorData::I8 { shape, .. } => shape.clone(),
            TensorData::T2 { rows, cols, .. } => vec![*rows, *cols],
        }
    }

    pub fn numel(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn nbytes(&self) -> usize {
        match self {
            TensorData::F32(t) => 4 * t.len(),
            TensorData::I8 { values, .. } => values.len(),
            TensorData::T2 { bytes, .. } => bytes.len(),
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(t) => {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            TensorData::I8 { values, .. } => out.extend(values.iter().map(|&v| v as u8)),
            TensorData::T2 { bytes, .. } => out.extend_from_slice(bytes),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
}

impl Default for Meta {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub tensors: BTreeMap<String, TensorData>,
    pub meta: Meta,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: BTreeMap<String, Entry>,
    meta: Meta,
}

impl Container {
    pub fn new(meta: Meta) -> Self {
        Self {
            tensors: BTreeMap::new(),
            meta,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, data: TensorData) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Format(format!("duplicate tensor name {name}")));
        }
        self.tensors.insert(name, data);
        Ok(())
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        self.insert(name, TensorData::F32(t))
    }

    /// Inserts a packed ternary tensor and its `.scale` companion.
    pub fn insert_ternary(&mut self, name: &str, p: &PackedTernaryMatrix) -> Result<()> {
        self.insert(
            name,
            TensorData::T2 {
                rows: p.rows(),
                cols: p.cols(),
                bytes: p.bytes().to_vec(),
            },
        )?;
        self.insert_f32(scale_name(name), Tensor::new(vec![1], vec![p.scale()])?)
    }

    pub fn get(&self, name: &str) -> Option<&TensorData> {
        self.tensors.get(name)
    }

    pub fn f32(&self, name: &str) -> Result<&Tensor> {
        match self.tensors.get(name) {
            Some(TensorData::F32(t)) => Ok(t),
            Some(other) => Err(Error::Format(format!(
                "tensor {name} is {}, expected f32",
                other.dtype()
            ))),
            None => Err(Error::MissingTensor(name.to_string())),
        }
    }

    /// Rebuilds the packed matrix (validating its codes) for a `t2` tensor.
    pub fn ternary(&self, name: &str) -> Result<PackedTernaryMatrix> {
        match self.tensors.get(name) {
            Some(TensorData::T2 { rows, cols, bytes }) => {
                let scale = match self.tensors.get(&scale_name(name)) {
                    Some(TensorData::F32(s)) if s.len() == 1 => s.data()[0],
                    _ => return Err(Error::MissingTensor(scale_name(name))),
                };
                PackedTernaryMatrix::from_bytes(*rows, *cols, bytes.clone(), scale)
            }
            Some(other) => Err(Error::Format(format!(
                "tensor {name} is {}, expected t2",
                other.dtype()
            ))),
            None => Err(Error::MissingTensor(name.to_string())),
        }
    }

    fn check_companions(&self) -> Result<()> {
        for (name, data) in &self.tensors {
            if let TensorData::T2 { .. } = data {
                match self.tensors.get(&scale_name(name)) {
                    Some(TensorData::F32(s)) if s.len() == 1 => {}
                    _ => {
                        return Err(Error::Format(format!(
                            "t2 tensor {name} has no f32 scalar companion {name}{SCALE_SUFFIX}"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        write_container(self)
    }
}

fn align_up(x: u64) -> u64 {
    x.div_ceil(ALIGN) * ALIGN
}

/// Rebuilds every JSON object with sorted keys so the header bytes do not
/// depend on how serde_json's map type is configured.
fn canonical(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> =
                map.into_iter().map(|(k, v)| (k, canonical(v))).collect();
            let mut out = serde_json::Map::new();
            for (k, v) in sorted {
                out.insert(k, v);
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

pub fn write_container(c: &Container) -> Result<Vec<u8>> {
    c.check_companions()?;
    let mut entries = BTreeMap::new();
    let mut offset = 0u64;
    for (name, data) in &c.tensors {
        offset = align_up(offset);
        let nbytes = data.nbytes() as u64;
        entries.insert(
            name.clone(),
            Entry {
                dtype: data.dtype().to_string(),
                shape: data.shape(),
                offset,
                nbytes,
            },
        );
        offset += nbytes;
    }
    let header = Header {
        tensors: entries,
        meta: c.meta.clone(),
    };
    let json = serde_json::to_vec(&canonical(serde_json::to_value(&header)?))?;

    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let data_start = out.len();
    for data in c.tensors.values() {
        let pos = (out.len() - data_start) as u64;
        out.resize(data_start + align_up(pos) as usize, 0);
        data.write_payload(&mut out);
    }
    Ok(out)
}

pub fn read_container(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 8 {
        return Err(Error::Truncated(format!(
            "{} bytes is too short for the magic",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
        });
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated("missing header length".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let rest = (bytes.len() - 16) as u64;
    if hlen > rest {
        return Err(Error::Truncated(format!(
            "header declares {hlen} bytes but only {rest} follow"
        )));
    }
    let header_end = 16 + hlen as usize;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Format(format!("invalid header: {e}")))?;
    if header.meta.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {}",
            header.meta.format_version
        )));
    }
    let data = &bytes[header_end..];
    let data_len = data.len() as u64;

    let mut ranges: Vec<(u64, u64, &str)> = Vec::new();
    for (name, e) in &header.tensors {
        let numel: usize = e.shape.iter().product();
        let expected = match e.dtype.as_str() {
            "f32" => 4 * numel,
            "i8" => numel,
            "t2" => match e.shape[..] {
                [r, c] => r * packed_row_bytes(c),
                _ => {
                    return Err(Error::Format(format!(
                        "t2 tensor {name} must be 2-D, got {:?}",
                        e.shape
                    )))
                }
            },
            other => {
                return Err(Error::UnknownDtype {
                    name: name.clone(),
                    dtype: other.to_string(),
                })
            }
        } as u64;
        if e.nbytes != expected {
            return Err(Error::Format(format!(
                "tensor {name}: nbytes {} does not match {} {:?} ({expected})",
                e.nbytes, e.dtype, e.shape
            )));
        }
        if e.offset % ALIGN != 0 {
            return Err(Error::Format(format!(
                "tensor {name}: offset {} is not {ALIGN}-byte aligned",
                e.offset
            )));
        }
        let end = e.offset.saturating_add(e.nbytes);
        if end > data_len {
            return Err(Error::Bounds {
                name: name.clone(),
                start: e.offset,
                end,
                len: data_len,
            });
        }
        ranges.push((e.offset, end, name));
    }
    ranges.sort();
    for w in ranges.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::Overlap {
                first: w[0].2.to_string(),
                second: w[1].2.to_string(),
            });
        }
    }

    let mut c = Container::new(header.meta);
    for (name, e) in header.tensors {
        let raw = &data[e.offset as usize..(e.offset + e.nbytes) as usize];
        let t = match e.dtype.as_str() {
            "f32" => {
                let vals = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                TensorData::F32(Tensor::new(e.shape, vals)?)
            }
            "i8" => TensorData::I8 {
                shape: e.shape,
                values: raw.iter().map(|&b| b as i8).collect(),
            },
            _ => TensorData::T2 {
                rows: e.shape[0],
                cols: e.shape[1],
                bytes: raw.to_vec(),
            },
        };
        c.tensors.insert(name, t);
    }
    c.check_companions()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::TritMatrix;

    fn header_len(bytes: &[u8]) -> usize {
        u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize
    }

    #[test]
    fn empty_container_is_header_only() {
        let bytes = write_container(&Container::default()).unwrap();
        assert_eq!(bytes.len(), 16 + header_len(&bytes));
        assert_eq!(
            &bytes[16..],
            br#"{"meta":{"format_version":1},"tensors":{}}"#
        );
    }

    #[test]
    fn single_f32_tensor_layout() {
        let mut c = Container::default();
        c.insert_f32("w", Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]))
            .unwrap();
        let bytes = write_container(&c).unwrap();
        let header = std::str::from_utf8(&bytes[16..16 + header_len(&bytes)]).unwrap();
        assert!(
            header.contains(r#""w":{"dtype":"f32","nbytes":16,"offset":0,"shape":[2,2]}"#),
            "{header}"
        );
        assert_eq!(bytes.len(), 16 + header_len(&bytes) + 16);
        assert_eq!(read_container(&bytes).unwrap(), c);
    }

    #[test]
    fn ternary_tensor_payload_sizes() {
        let p = TritMatrix::new(1, 5, vec![1, 0, -1, 1, -1])
            .unwrap()
            .pack(0.25);
        let mut c = Container::default();
        c.insert_ternary("x", &p).unwrap();
        let bytes = write_container(&c).unwrap();
        let header = std::str::from_utf8(&bytes[16..16 + header_len(&bytes)]).unwrap();
        assert!(header.contains(r#""x":{"dtype":"t2","nbytes":2,"offset":0,"shape":[1,5]}"#));
        assert!(header.contains(r#""x.scale":{"dtype":"f32","nbytes":4,"offset":64,"shape":[1]}"#));
        let back = read_container(&bytes).unwrap();
        assert_eq!(back.ternary("x").unwrap(), p);
    }

    #[test]
    fn write_rejects_bad_inputs() {
        let mut c = Container::default();
        c.insert_f32("a", Tensor::zeros(&[1])).unwrap();
        assert!(matches!(
            c.insert_f32("a", Tensor::zeros(&[1])),
            Err(Error::Format(_))
        ));
        c.insert(
            "t",
            TensorData::T2 {
                rows: 1,
                cols: 4,
                bytes: vec![0],
            },
        )
        .unwrap();
        assert!(matches!(write_container(&c), Err(Error::Format(_))));
    }

    fn sample() -> Vec<u8> {
        let mut c = Container::default();
        c.insert_f32("a", Tensor::from_fn(&[3, 3], |i| i as f32))
            .unwrap();
        c.insert_f32("b", Tensor::from_fn(&[5], |i| -(i as f32)))
            .unwrap();
        write_container(&c).unwrap()
    }

    fn rewrite_header(bytes: &[u8], f: impl FnOnce(&mut Value)) -> Vec<u8> {
        let h = header_len(bytes);
        let mut v: Value = serde_json::from_slice(&bytes[16..16 + h]).unwrap();
        f(&mut v);
        let json = serde_json::to_vec(&v).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[16 + h..]);
        out
    }

    #[test]
    fn read_diagnostics_are_distinct() {
        let good = sample();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_container(&bad), Err(Error::BadMagic { .. })));

        assert!(matches!(
            read_container(&good[..20]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            read_container(&good[..4]),
            Err(Error::Truncated(_))
        ));

        let past = rewrite_header(&good, |v| v["tensors"]["b"]["offset"] = 6400.into());
        match read_container(&past) {
            Err(Error::Bounds { name, .. }) => assert_eq!(name, "b"),
            other => panic!("expected bounds error, got {other:?}"),
        }

        let overlap = rewrite_header(&good, |v| v["tensors"]["b"]["offset"] = 0.into());
        assert!(matches!(
            read_container(&overlap),
            Err(Error::Overlap { .. })
        ));

        let dtype = rewrite_header(&good, |v| v["tensors"]["b"]["dtype"] = "f16".into());
        assert!(matches!(
            read_container(&dtype),
            Err(Error::UnknownDtype { .. })
        ));

        let unaligned = rewrite_header(&good, |v| v["tensors"]["b"]["offset"] = 4.into());
        assert!(matches!(read_container(&unaligned), Err(Error::Format(_))));
    }

    #[test]
    fn corrupt_trits_surface_on_unpack() {
        let p = TritMatrix::new(1, 4, vec![1, 1, 1, 1]).unwrap().pack(1.0);
        let mut c = Container::default();
        c.insert_ternary("x", &p).unwrap();
        let mut bytes = write_container(&c).unwrap();
        let data_start = 16 + header_len(&bytes);
        bytes[data_start] = 0xFF;
        let back = read_container(&bytes).unwrap();
        assert!(matches!(back.ternary("x"), Err(Error::Corruption { .. })));
    }
}
