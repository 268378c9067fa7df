//! Self-describing tensor container:
//!
//! ```text
//! [u64 LE: N][N bytes: JSON header][raw little-endian tensor bytes]
//! ```
//!
//! The header maps each tensor name to `{"dtype", "shape", "data_offsets": [begin, end]}`
//! with offsets relative to the first byte after the header. A `__metadata__` key is
//! ignored on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DType, TensorSet};
use crate::error::{Error, Result};
use crate::report::write_atomic;
use crate::tensor::Tensor;

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Container(msg.into())
}

/// Parses a container image held in memory.
pub fn parse_container(bytes: &[u8]) -> Result<TensorSet> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| malformed("file shorter than the 8-byte header length"))?;
    let header_len = u64::from_le_bytes(len_bytes);
    let rest = &bytes[8..];
    if header_len > rest.len() as u64 {
        return Err(malformed(format!(
            "header length {header_len} exceeds remaining {} bytes",
            rest.len()
        )));
    }
    let (header, data) = rest.split_at(header_len as usize);
    let header: BTreeMap<String, Value> = serde_json::from_slice(header)
        .map_err(|e| malformed(format!("header is not a JSON object: {e}")))?;

    let mut parsed = Vec::with_capacity(header.len());
    for (name, value) in header {
        if name == METADATA_KEY {
            continue;
        }
        let entry: HeaderEntry = serde_json::from_value(value)
            .map_err(|e| malformed(format!("tensor `{name}`: {e}")))?;
        let dtype = DType::parse(&entry.dtype).ok_or_else(|| {
            malformed(format!("tensor `{name}`: unknown dtype `{}`", entry.dtype))
        })?;
        let [begin, end] = entry.data_offsets;
        if begin > end || end > data.len() {
            return Err(malformed(format!(
                "tensor `{name}`: data_offsets [{begin}, {end}) out of bounds for {} data bytes",
                data.len()
            )));
        }
        let numel = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| malformed(format!("tensor `{name}`: shape overflows")))?;
        let expected = numel
            .checked_mul(dtype.size())
            .ok_or_else(|| malformed(format!("tensor `{name}`: shape overflows")))?;
        if end - begin != expected {
            return Err(malformed(format!(
                "tensor `{name}`: {} bytes for shape {:?} of {}, expected {expected}",
                end - begin,
                entry.shape,
                dtype.name()
            )));
        }
        parsed.push((name, dtype, entry.shape, begin, end));
    }

    let mut spans: Vec<(usize, usize, &str)> = parsed
        .iter()
        .filter(|p| p.4 > p.3)
        .map(|p| (p.3, p.4, p.0.as_str()))
        .collect();
    spans.sort_unstable();
    if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
        return Err(malformed(format!(
            "overlapping data_offsets between `{}` and `{}`",
            w[0].2, w[1].2
        )));
    }

    let mut set = TensorSet::new();
    for (name, dtype, shape, begin, end) in parsed {
        let values = decode_values(&data[begin..end], dtype);
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTensor { name, index });
        }
        set.insert(
            name,
            dtype,
            Tensor {
                shape,
                data: values,
            },
        )?;
    }
    Ok(set)
}

fn decode_values(raw: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        DType::F16 => raw
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f64())
            .collect(),
        DType::BF16 => raw
            .chunks_exact(2)
            .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f64())
            .collect(),
    }
}

fn encode_values(values: &[f64], dtype: DType, out: &mut Vec<u8>) {
    match dtype {
        DType::F64 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => values
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F16 => values
            .iter()
            .for_each(|&v| out.extend_from_slice(&f16::from_f64(v).to_le_bytes())),
        DType::BF16 => values
            .iter()
            .for_each(|&v| out.extend_from_slice(&bf16::from_f64(v).to_le_bytes())),
    }
}

/// Serializes `set` with tensors laid out contiguously in name order. Values are
/// narrowed to each entry's dtype.
pub fn serialize_container(set: &TensorSet) -> Result<Vec<u8>> {
    let mut header = BTreeMap::new();
    let mut data = Vec::new();
    for (name, entry) in set.iter() {
        let begin = data.len();
        encode_values(&entry.tensor.data, entry.dtype, &mut data);
        header.insert(
            name.clone(),
            HeaderEntry {
                dtype: entry.dtype.name().to_string(),
                shape: entry.tensor.shape.clone(),
                data_offsets: [begin, data.len()],
            },
        );
    }
    let mut json = serde_json::to_vec(&header)?;
    // Pad with JSON whitespace so the data section starts 8-byte aligned.
    while json.len() % 8 != 0 {
        json.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + json.len() + data.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn load_container(path: impl AsRef<Path>) -> Result<TensorSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::ReadFile {
        path: path.to_path_buf(),
        source,
    })?;
    parse_container(&bytes)
}

/// Writes the container atomically (sibling temp file, then rename).
pub fn save_container(set: &TensorSet, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &serialize_container(set)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(header: &str, data: &[u8]) -> Vec<u8> {
        let mut v = (header.len() as u64).to_le_bytes().to_vec();
        v.extend_from_slice(header.as_bytes());
        v.extend_from_slice(data);
        v
    }

    fn f32_bytes(vals: &[f32]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn minimal_f32_file() {
        let bytes = image(
            r#"{"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"__metadata__":{"format":"pt"}}"#,
            &f32_bytes(&[1.0, 2.0]),
        );
        let set = parse_container(&bytes).unwrap();
        assert_eq!(set.len(), 1);
        let w = set.get("w").unwrap();
        assert_eq!(w.dtype, DType::F32);
        assert_eq!(w.tensor.shape, vec![2]);
        assert_eq!(w.tensor.data, vec![1.0, 2.0]);
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let bytes = image(
            r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}"#,
            &f32_bytes(&[1.0, 2.0, 3.0]),
        );
        let err = parse_container(&bytes).unwrap_err().to_string();
        assert!(err.contains("overlapping data_offsets"), "{err}");
    }

    #[test]
    fn malformed_inputs_rejected() {
        let cases: Vec<(Vec<u8>, &str)> = vec![
            (vec![1, 2, 3], "shorter"),
            (image("{}", &[]).into_iter().take(9).collect(), "exceeds"),
            (image("[1,2]", &[]), "not a JSON object"),
            (
                image(
                    r#"{"a":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}}"#,
                    &[0],
                ),
                "unknown dtype",
            ),
            (
                image(
                    r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,4]}}"#,
                    &[0; 4],
                ),
                "expected 8",
            ),
            (
                image(
                    r#"{"a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}"#,
                    &[0; 4],
                ),
                "out of bounds",
            ),
            (
                image(r#"{"a":{"dtype":"F32","shape":[1]}}"#, &[0; 4]),
                "data_offsets",
            ),
        ];
        for (bytes, needle) in cases {
            let err = parse_container(&bytes).unwrap_err().to_string();
            assert!(err.contains(needle), "expected `{needle}` in `{err}`");
        }
    }

    #[test]
    fn non_finite_values_rejected_with_name() {
        let bytes = image(
            r#"{"bad":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}}"#,
            &f32_bytes(&[1.0, f32::NAN]),
        );
        match parse_container(&bytes) {
            Err(Error::NonFiniteTensor { name, index }) => {
                assert_eq!((name.as_str(), index), ("bad", 1))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_set_and_zero_length_tensor() {
        let empty = serialize_container(&TensorSet::new()).unwrap();
        assert!(parse_container(&empty).unwrap().is_empty());

        let mut set = TensorSet::new();
        set.insert(
            "empty",
            DType::F32,
            Tensor::new(vec![0, 3], vec![]).unwrap(),
        )
        .unwrap();
        set.insert("one", DType::F32, Tensor::from_vec(vec![1.5]))
            .unwrap();
        let bytes = serialize_container(&set).unwrap();
        let back = parse_container(&bytes).unwrap();
        assert_eq!(back, set);
        let json_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: Value = serde_json::from_slice(&bytes[8..8 + json_len]).unwrap();
        assert_eq!(header["empty"]["data_offsets"], serde_json::json!([0, 0]));
    }

    #[test]
    fn half_precision_widens_exactly() {
        let vals = [0.5f64, -2.0, 65504.0, 1.0 / 1024.0];
        for dtype in [DType::F16, DType::BF16] {
            let mut set = TensorSet::new();
            set.insert("h", dtype, Tensor::from_vec(vals.to_vec()))
                .unwrap();
            let back = parse_container(&serialize_container(&set).unwrap()).unwrap();
            let got = &back.get("h").unwrap().tensor.data;
            for (g, v) in got.iter().zip(vals) {
                let expect = match dtype {
                    DType::F16 => f16::from_f64(v).to_f64(),
                    _ => bf16::from_f64(v).to_f64(),
                };
                assert_eq!(*g, expect);
            }
        }
    }

    #[test]
    fn header_is_sorted_and_aligned() {
        let mut set = TensorSet::new();
        set.insert_f64("b", Tensor::from_vec(vec![1.0])).unwrap();
        set.insert_f64("a", Tensor::from_vec(vec![2.0, 3.0]))
            .unwrap();
        let bytes = serialize_container(&set).unwrap();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert_eq!(n % 8, 0);
        let text = std::str::from_utf8(&bytes[8..8 + n]).unwrap();
        assert!(text.find("\"a\"").unwrap() < text.find("\"b\"").unwrap());
        assert_eq!(serialize_container(&set).unwrap(), bytes);
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.st");
        let mut set = TensorSet::new();
        set.insert_f64(
            "x",
            Tensor::new(vec![2, 2], vec![0.1, -0.2, 0.3, 1e-300]).unwrap(),
        )
        .unwrap();
        save_container(&set, &path).unwrap();
        assert_eq!(load_container(&path).unwrap(), set);
        assert!(load_container(dir.path().join("missing.st")).is_err());
    }
}
