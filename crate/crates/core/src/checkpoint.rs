//! Checkpoints and the `SMECKPT1` container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 0..8        b"SMECKPT1"
//! 8..16       u64 header length H
//! 16..16+H    compact UTF-8 JSON header
//!             {"version":1,"tensors":{name:{"dtype":"f32","shape":[..],"offset":u64,"nbytes":u64}},"meta":{..}}
//! ..          zero padding to the next 8-byte boundary
//! data        f32 values, row-major, tensors contiguous in name order;
//!             offsets are relative to the start of the data section
//! ```
//!
//! Only canonical files are accepted by the reader, which is what makes
//! `write(read(bytes)) == bytes` hold for every file it accepts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::seed::fnv1a64;

pub const MAGIC: &[u8; 8] = b"SMECKPT1";
pub const FORMAT_VERSION: u32 = 1;

pub const META_KIND: &str = "kind";
pub const META_STAGE: &str = "stage";
pub const META_PARENT: &str = "parent_digest";
pub const META_SOURCE_FINETUNED: &str = "source_finetuned_digest";
pub const META_SOURCE_BASE: &str = "source_base_digest";

/// Dense row-major f32 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::ShapeLength {
                name: String::new(),
                shape,
                expected,
                actual: values.len(),
            });
        }
        Ok(Tensor { shape, values })
    }

    /// One-dimensional tensor. Panics on an empty slice.
    pub fn vector(values: &[f32]) -> Self {
        assert!(!values.is_empty(), "empty vector tensor");
        Tensor {
            shape: vec![values.len()],
            values: values.to_vec(),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same shape, new values.
    pub(crate) fn with_values(&self, values: Vec<f32>) -> Tensor {
        debug_assert_eq!(values.len(), self.values.len());
        Tensor {
            shape: self.shape.clone(),
            values,
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        par::position_f32(&self.values, |x| !x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Model,
    Delta,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Model => "model",
            Kind::Delta => "delta",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 64-bit FNV-1a digest of a checkpoint's tensor content.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub u64);

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for Digest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 16 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(Error::InvalidMeta(format!("bad digest {s:?}")));
        }
        u64::from_str_radix(s, 16)
            .map(Digest)
            .map_err(|e| Error::InvalidMeta(e.to_string()))
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Named tensors plus string metadata. Tensor names iterate in lexicographic
/// (byte) order, which is the canonical order everywhere in this crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
    meta: BTreeMap<String, String>,
}

impl Checkpoint {
    /// Builds a `kind = "model"`, `stage = 0` checkpoint.
    pub fn new<I, S>(tensors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Tensor)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (name, tensor) in tensors {
            let name = name.into();
            if name.is_empty() {
                return Err(Error::InvalidName(name));
            }
            if map.contains_key(&name) {
                return Err(Error::DuplicateName(name));
            }
            map.insert(name, tensor);
        }
        if map.is_empty() {
            return Err(Error::EmptyCheckpoint);
        }
        let mut meta = BTreeMap::new();
        meta.insert(META_KIND.to_string(), Kind::Model.as_str().to_string());
        meta.insert(META_STAGE.to_string(), "0".to_string());
        Ok(Checkpoint { tensors: map, meta })
    }

    pub(crate) fn from_parts(
        tensors: BTreeMap<String, Tensor>,
        meta: BTreeMap<String, String>,
    ) -> Checkpoint {
        Checkpoint { tensors, meta }
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.set_meta(key, value);
        self
    }

    pub fn clear_meta(&mut self) {
        self.meta.clear();
    }

    pub fn kind(&self) -> Result<Kind> {
        match self.meta.get(META_KIND).map(String::as_str) {
            None | Some("model") => Ok(Kind::Model),
            Some("delta") => Ok(Kind::Delta),
            Some(other) => Err(Error::InvalidMeta(format!("unknown kind {other:?}"))),
        }
    }

    pub fn stage(&self) -> Result<u32> {
        match self.meta.get(META_STAGE) {
            None => Ok(0),
            Some(s) => s
                .parse()
                .map_err(|_| Error::InvalidMeta(format!("bad stage {s:?}"))),
        }
    }

    pub fn set_stage(&mut self, stage: u32) {
        self.set_meta(META_STAGE, stage.to_string());
    }

    /// Total parameter count.
    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Replaces every tensor's values, keeping names, shapes and meta.
    pub(crate) fn map_tensors<F>(&self, mut f: F) -> Result<Checkpoint>
    where
        F: FnMut(&str, &Tensor) -> Result<Vec<f32>>,
    {
        let mut tensors = BTreeMap::new();
        for (name, t) in &self.tensors {
            tensors.insert(name.clone(), t.with_values(f(name, t)?));
        }
        Ok(Checkpoint {
            tensors,
            meta: self.meta.clone(),
        })
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if let Some(index) = t.first_non_finite() {
                return Err(Error::NonFinite {
                    name: name.clone(),
                    index,
                });
            }
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<()> {
        if self.tensors.is_empty() {
            return Err(Error::EmptyCheckpoint);
        }
        for (name, t) in &self.tensors {
            if name.is_empty() {
                return Err(Error::InvalidName(name.clone()));
            }
            let expected: usize = t.shape.iter().product();
            if expected != t.values.len() || t.shape.contains(&0) {
                return Err(Error::ShapeLength {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    expected,
                    actual: t.values.len(),
                });
            }
        }
        self.check_finite()?;
        if self.kind()? == Kind::Delta {
            for key in [META_SOURCE_FINETUNED, META_SOURCE_BASE] {
                match self.meta.get(key) {
                    Some(d) => {
                        d.parse::<Digest>()?;
                    }
                    None => {
                        return Err(Error::InvalidMeta(format!("delta checkpoint lacks {key:?}")))
                    }
                }
            }
        }
        self.stage()?;
        Ok(())
    }

    /// Writes the canonical container and returns the number of bytes written.
    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<u64> {
        let bytes = self.to_bytes()?;
        sink.write_all(&bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_invariants()?;
        Ok(encode(&self.tensors, &self.meta))
    }

    pub fn read_from<R: Read>(mut source: R) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        decode(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }

    /// FNV-1a over the canonical serialization with an empty meta map.
    pub fn digest(&self) -> Result<Digest> {
        self.check_invariants()?;
        Ok(Digest(fnv1a64(&encode(&self.tensors, &BTreeMap::new()))))
    }
}

/// Succeeds iff both checkpoints have the same tensor names and shapes.
pub fn validate_compatible(a: &Checkpoint, b: &Checkpoint) -> Result<()> {
    let left: BTreeSet<&String> = a.tensors.keys().collect();
    let right: BTreeSet<&String> = b.tensors.keys().collect();
    let missing: Vec<String> = left
        .symmetric_difference(&right)
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingTensors(missing));
    }
    for (name, ta) in &a.tensors {
        let tb = &b.tensors[name];
        if ta.shape != tb.shape {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    tensors: BTreeMap<String, HeaderEntry>,
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<u64>,
    offset: u64,
    nbytes: u64,
}

fn align8(n: usize) -> usize {
    n.div_ceil(8) * 8
}

fn header_for(tensors: &BTreeMap<String, Tensor>, meta: &BTreeMap<String, String>) -> Header {
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let nbytes = 4 * t.values.len() as u64;
            let entry = HeaderEntry {
                dtype: "f32".to_string(),
                shape: t.shape.iter().map(|&d| d as u64).collect(),
                offset,
                nbytes,
            };
            offset += nbytes;
            (name.clone(), entry)
        })
        .collect();
    Header {
        version: FORMAT_VERSION,
        tensors: entries,
        meta: meta.clone(),
    }
}

fn encode(tensors: &BTreeMap<String, Tensor>, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let header = serde_json::to_vec(&header_for(tensors, meta)).expect("header serializes");
    let data_start = align8(16 + header.len());
    let data_len: usize = tensors.values().map(|t| 4 * t.values.len()).sum();
    let mut out = Vec::with_capacity(data_start + data_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.resize(data_start, 0);
    for t in tensors.values() {
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::LengthMismatch("file ends inside the header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| {
            Error::LengthMismatch(format!(
                "header declares {header_len} bytes but only {} follow",
                bytes.len().saturating_sub(16)
            ))
        })? as usize;
    let header_bytes = &bytes[16..header_end];
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {}",
            header.version
        )));
    }
    if header.tensors.is_empty() {
        return Err(Error::EmptyCheckpoint);
    }

    let data_start = align8(header_end);
    if data_start > bytes.len() {
        return Err(Error::LengthMismatch("file ends inside header padding".into()));
    }
    if bytes[header_end..data_start].iter().any(|&b| b != 0) {
        return Err(Error::NonCanonical("non-zero header padding".into()));
    }
    let data = &bytes[data_start..];
    let data_len = data.len() as u64;

    let mut declared = 0u64;
    for (name, e) in &header.tensors {
        if name.is_empty() {
            return Err(Error::InvalidName(name.clone()));
        }
        if e.dtype != "f32" {
            return Err(Error::MalformedHeader(format!(
                "tensor {name:?} has unsupported dtype {:?}",
                e.dtype
            )));
        }
        if e.shape.contains(&0) {
            return Err(Error::MalformedHeader(format!(
                "tensor {name:?} has a zero dimension"
            )));
        }
        let count = e
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::MalformedHeader(format!("tensor {name:?} is too large")))?;
        if count != e.nbytes {
            return Err(Error::MalformedHeader(format!(
                "tensor {name:?}: nbytes {} does not match shape {:?}",
                e.nbytes, e.shape
            )));
        }
        declared = declared
            .checked_add(e.nbytes)
            .ok_or_else(|| Error::MalformedHeader("total size overflows".into()))?;
    }
    if declared != data_len {
        return Err(Error::LengthMismatch(format!(
            "header declares {declared} data bytes, data section holds {data_len}"
        )));
    }

    let mut extents: Vec<(u64, u64, &String)> = Vec::with_capacity(header.tensors.len());
    for (name, e) in &header.tensors {
        let end = e.offset.saturating_add(e.nbytes);
        if end > data_len {
            return Err(Error::OutOfBounds {
                name: name.clone(),
                offset: e.offset,
                end,
                data_len,
            });
        }
        extents.push((e.offset, end, name));
    }
    extents.sort();
    for pair in extents.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::Overlap {
                first: pair[0].2.clone(),
                second: pair[1].2.clone(),
            });
        }
    }

    let mut tensors = BTreeMap::new();
    let mut expected_offset = 0u64;
    for (name, e) in &header.tensors {
        if e.offset != expected_offset {
            return Err(Error::NonCanonical(format!(
                "tensor {name:?} is not stored contiguously in name order"
            )));
        }
        expected_offset += e.nbytes;
        let raw = &data[e.offset as usize..(e.offset + e.nbytes) as usize];
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                name: name.clone(),
                index,
            });
        }
        let shape = e.shape.iter().map(|&d| d as usize).collect();
        tensors.insert(name.clone(), Tensor { shape, values });
    }

    let canonical = serde_json::to_vec(&header_for(&tensors, &header.meta)).expect("header");
    if canonical != header_bytes {
        return Err(Error::NonCanonical(
            "header is not in compact canonical JSON form".into(),
        ));
    }

    let ckpt = Checkpoint {
        tensors,
        meta: header.meta,
    };
    ckpt.check_invariants()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> Checkpoint {
        Checkpoint::new([
            ("b", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap()),
            ("a", Tensor::vector(&[0.5])),
            ("c.weight", Tensor::new(vec![3], vec![-0.0, 1e-30, 7.0]).unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn writes_are_deterministic() {
        let c = Checkpoint::new([("w", Tensor::vector(&[0.0]))]).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        let n = c.write_to(&mut a).unwrap();
        c.write_to(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(n as usize, a.len());
    }

    #[test]
    fn layout_matches_container_description() {
        let c = Checkpoint::new([("w", Tensor::vector(&[1.0]))]).unwrap();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"SMECKPT1");
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + h]).unwrap();
        assert_eq!(
            header,
            r#"{"version":1,"tensors":{"w":{"dtype":"f32","shape":[1],"offset":0,"nbytes":4}},"meta":{"kind":"model","stage":"0"}}"#
        );
        let data_start = (16 + h).div_ceil(8) * 8;
        assert!(bytes[16 + h..data_start].iter().all(|&b| b == 0));
        assert_eq!(&bytes[data_start..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn nan_is_refused_with_location() {
        let mut v = vec![0.0; 5];
        v[3] = f32::NAN;
        let c = Checkpoint::new([("w", Tensor::vector(&v))]).unwrap();
        match c.to_bytes() {
            Err(Error::NonFinite { name, index }) => {
                assert_eq!(name, "w");
                assert_eq!(index, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_checkpoint_is_refused() {
        let err = Checkpoint::new(Vec::<(String, Tensor)>::new()).unwrap_err();
        assert_eq!(err.to_string(), "empty checkpoint");
    }

    #[test]
    fn duplicate_and_empty_names_are_refused() {
        let t = Tensor::vector(&[1.0]);
        assert!(matches!(
            Checkpoint::new([("w", t.clone()), ("w", t.clone())]),
            Err(Error::DuplicateName(_))
        ));
        assert!(matches!(
            Checkpoint::new([("", t)]),
            Err(Error::InvalidName(_))
        ));
    }

    #[test]
    fn tensor_shape_is_checked() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::ShapeLength { expected: 6, actual: 5, .. })
        ));
        assert!(matches!(Tensor::new(vec![0], vec![]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn round_trip_three_tensors() {
        let c = three().with_meta("note", "hello");
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        // -0.0 survives bit-for-bit
        assert_eq!(back.get("c.weight").unwrap().values()[0].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn truncated_data_is_a_length_mismatch() {
        let bytes = three().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 6];
        assert!(matches!(Checkpoint::from_bytes(cut), Err(Error::LengthMismatch(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..12]), Err(Error::LengthMismatch(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..40]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = three().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::BadMagic)));
        assert!(matches!(Checkpoint::from_bytes(b"SME"), Err(Error::BadMagic)));
    }

    /// Rebuilds a container around a hand-edited header and raw data.
    fn assemble(header: &str, data: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.resize(align8(out.len()), 0);
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn offset_beyond_data_is_out_of_bounds() {
        let header = r#"{"version":1,"tensors":{"a":{"dtype":"f32","shape":[1],"offset":0,"nbytes":4},"b":{"dtype":"f32","shape":[1],"offset":16,"nbytes":4}},"meta":{}}"#;
        let err = Checkpoint::from_bytes(&assemble(header, &[0u8; 8])).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { ref name, .. } if name == "b"), "{err}");
    }

    #[test]
    fn overlapping_extents_are_rejected() {
        let header = r#"{"version":1,"tensors":{"a":{"dtype":"f32","shape":[2],"offset":0,"nbytes":8},"b":{"dtype":"f32","shape":[1],"offset":4,"nbytes":4}},"meta":{}}"#;
        let err = Checkpoint::from_bytes(&assemble(header, &[0u8; 12])).unwrap_err();
        assert!(matches!(err, Error::Overlap { .. }), "{err}");
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let header = r#"{"version":1,"tensors":{"w":{"dtype":"f32","shape":[2],"offset":0,"nbytes":8}},"meta":{}}"#;
        let mut data = 1.0f32.to_le_bytes().to_vec();
        data.extend_from_slice(&f32::INFINITY.to_le_bytes());
        let err = Checkpoint::from_bytes(&assemble(header, &data)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }), "{err}");
    }

    #[test]
    fn non_canonical_files_are_rejected() {
        // whitespace in header
        let header = r#"{"version":1, "tensors":{"w":{"dtype":"f32","shape":[1],"offset":0,"nbytes":4}},"meta":{}}"#;
        let err = Checkpoint::from_bytes(&assemble(header, &[0u8; 4])).unwrap_err();
        assert!(matches!(err, Error::NonCanonical(_)), "{err}");
        // swapped storage order
        let header = r#"{"version":1,"tensors":{"a":{"dtype":"f32","shape":[1],"offset":4,"nbytes":4},"b":{"dtype":"f32","shape":[1],"offset":0,"nbytes":4}},"meta":{}}"#;
        let err = Checkpoint::from_bytes(&assemble(header, &[0u8; 8])).unwrap_err();
        assert!(matches!(err, Error::NonCanonical(_)), "{err}");
    }

    #[test]
    fn delta_requires_source_digests() {
        let c = Checkpoint::new([("w", Tensor::vector(&[1.0]))])
            .unwrap()
            .with_meta(META_KIND, "delta");
        assert!(matches!(c.to_bytes(), Err(Error::InvalidMeta(_))));
    }

    #[test]
    fn digest_ignores_meta_and_tracks_values() {
        let c = three();
        let d = c.digest().unwrap();
        assert_eq!(d, c.clone().with_meta("stage", "9").with_meta("x", "y").digest().unwrap());
        let mut vals = c.get("b").unwrap().values().to_vec();
        vals[2] = f32::from_bits(vals[2].to_bits() + 1);
        let bumped = Checkpoint::new([
            ("a", c.get("a").unwrap().clone()),
            ("b", Tensor::new(vec![2, 2], vals).unwrap()),
            ("c.weight", c.get("c.weight").unwrap().clone()),
        ])
        .unwrap();
        assert_ne!(d, bumped.digest().unwrap());
    }

    #[test]
    fn digest_golden_value() {
        // Frozen from an independent FNV-1a computation over the canonical bytes
        // (see tests/golden/digest_oracle.py).
        let c = Checkpoint::new([("w", Tensor::vector(&[1.0]))]).unwrap();
        assert_eq!(c.digest().unwrap().to_string(), DIGEST_W_ONE);
    }

    const DIGEST_W_ONE: &str = "50481ff9b2ef25f3";

    #[test]
    fn digest_parses_and_prints() {
        let d: Digest = "00000000000000ff".parse().unwrap();
        assert_eq!(d.0, 255);
        assert_eq!(d.to_string(), "00000000000000ff");
        assert!("xyz".parse::<Digest>().is_err());
        assert!("00000000000000FF".parse::<Digest>().is_err());
    }

    #[test]
    fn compatibility_checks() {
        let a = three();
        validate_compatible(&a, &a).unwrap();
        let b = Checkpoint::new([
            ("a", Tensor::vector(&[0.5])),
            ("b", Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap()),
            ("c.weight", Tensor::vector(&[0.0; 3])),
            ("w2", Tensor::vector(&[0.0])),
        ])
        .unwrap();
        match validate_compatible(&a, &b) {
            Err(Error::MissingTensors(names)) => assert_eq!(names, vec!["w2".to_string()]),
            other => panic!("{other:?}"),
        }
        let x = Checkpoint::new([("w", Tensor::zeros(vec![2, 3]).unwrap())]).unwrap();
        let y = Checkpoint::new([("w", Tensor::zeros(vec![3, 2]).unwrap())]).unwrap();
        match validate_compatible(&x, &y) {
            Err(Error::ShapeMismatch { name, left, right }) => {
                assert_eq!(name, "w");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![3, 2]);
            }
            other => panic!("{other:?}"),
        }
    }
}
