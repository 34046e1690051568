// SPDX-License-Identifier: Apache-2.0

//! `NTM1` files: the 4-byte magic, a little-endian u64 header length, a
//! UTF-8 JSON header mapping each name to
//! `{"dtype":"f32","shape":[..],"offset":N,"nbytes":M}` (offsets relative to
//! the data region), then the data region of little-endian f32 values.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MergeError, NamedTensorMap, Tensor};

pub const MAGIC: &[u8; 4] = b"NTM1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

fn corrupt(msg: impl Into<String>) -> MergeError {
    MergeError::CorruptFile(msg.into())
}

pub fn write_tensor_map<W: Write>(map: &NamedTensorMap, mut out: W) -> Result<(), MergeError> {
    let mut header = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in map.iter() {
        let nbytes = 4 * t.numel() as u64;
        header.insert(name.clone(), Entry { dtype: "f32".into(), shape: t.shape().to_vec(), offset, nbytes });
        offset += nbytes;
    }
    let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, t) in map.iter() {
        let mut buf = Vec::with_capacity(4 * t.numel());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_tensor_map(bytes: &[u8]) -> Result<NamedTensorMap, MergeError> {
    if bytes.len() < 12 {
        return Err(corrupt("file shorter than the fixed preamble"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let header_end = 12u64
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| corrupt("header runs past end of file"))? as usize;
    let header: BTreeMap<String, Entry> =
        serde_json::from_slice(&bytes[12..header_end]).map_err(|e| corrupt(format!("header: {e}")))?;
    let data = &bytes[header_end..];

    let mut regions: Vec<(u64, u64, &str)> = Vec::with_capacity(header.len());
    let mut map = NamedTensorMap::new();
    for (name, e) in &header {
        if e.dtype != "f32" {
            return Err(corrupt(format!("{name}: unsupported dtype {}", e.dtype)));
        }
        let numel = e.shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        if numel.and_then(|n| n.checked_mul(4)) != Some(e.nbytes) {
            return Err(corrupt(format!("{name}: nbytes {} does not match shape {:?}", e.nbytes, e.shape)));
        }
        let end = e.offset.checked_add(e.nbytes).filter(|&x| x <= data.len() as u64);
        let Some(end) = end else {
            return Err(corrupt(format!("{name}: payload truncated")));
        };
        regions.push((e.offset, end, name));
        let values = data[e.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::new(e.shape.clone(), values).map_err(|m| corrupt(format!("{name}: {m}")))?;
        map.insert(name.clone(), tensor);
    }
    regions.sort();
    for w in regions.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(corrupt(format!("{} and {} overlap", w[0].2, w[1].2)));
        }
    }
    Ok(map)
}

pub fn save_tensor_map(map: &NamedTensorMap, path: impl AsRef<Path>) -> Result<(), MergeError> {
    let mut buf = Vec::new();
    write_tensor_map(map, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensor_map(path: impl AsRef<Path>) -> Result<NamedTensorMap, MergeError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_tensor_map(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensorMap {
        let mut m = NamedTensorMap::new();
        m.insert("b", Tensor::new(vec![3], vec![1.5, f32::MIN_POSITIVE, -0.0]).unwrap());
        m.insert("a", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap());
        m
    }

    fn bytes(map: &NamedTensorMap) -> Vec<u8> {
        let mut buf = Vec::new();
        write_tensor_map(map, &mut buf).unwrap();
        buf
    }

    #[test]
    fn layout_is_exact() {
        let mut m = NamedTensorMap::new();
        m.insert("w", Tensor::new(vec![1], vec![1.0]).unwrap());
        let b = bytes(&m);
        let header = br#"{"w":{"dtype":"f32","shape":[1],"offset":0,"nbytes":4}}"#;
        assert_eq!(&b[..4], b"NTM1");
        assert_eq!(u64::from_le_bytes(b[4..12].try_into().unwrap()), header.len() as u64);
        assert_eq!(&b[12..12 + header.len()], header);
        assert_eq!(&b[12 + header.len()..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn round_trip_bits() {
        let m = sample();
        let back = read_tensor_map(&bytes(&m)).unwrap();
        for ((n1, t1), (n2, t2)) in m.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        assert_eq!(read_tensor_map(&bytes(&NamedTensorMap::new())).unwrap(), NamedTensorMap::new());
    }

    #[test]
    fn truncated_and_bad_magic() {
        let b = bytes(&sample());
        assert!(matches!(read_tensor_map(&b[..b.len() - 1]), Err(MergeError::CorruptFile(_))));
        assert!(matches!(read_tensor_map(&b[..8]), Err(MergeError::CorruptFile(_))));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor_map(&bad), Err(MergeError::CorruptFile(_))));
        let mut long_header = b.clone();
        long_header[4..12].copy_from_slice(&(u64::MAX - 3).to_le_bytes());
        assert!(matches!(read_tensor_map(&long_header), Err(MergeError::CorruptFile(_))));
    }

    #[test]
    fn overlapping_regions_rejected() {
        let header = br#"{"a":{"dtype":"f32","shape":[2],"offset":0,"nbytes":8},"b":{"dtype":"f32","shape":[1],"offset":4,"nbytes":4}}"#;
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&(header.len() as u64).to_le_bytes());
        b.extend_from_slice(header);
        b.extend_from_slice(&[0u8; 8]);
        let err = read_tensor_map(&b).unwrap_err();
        assert!(matches!(err, MergeError::CorruptFile(ref m) if m.contains("overlap")), "{err}");
    }
}
