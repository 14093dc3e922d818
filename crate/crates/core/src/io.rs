//! On-disk formats.
//!
//! Feature maps: ASCII line `FMAP <H> <W> <D>\n`, then `H*W*D` little-endian
//! binary32 values in row, column, channel order.
//!
//! Masks: ASCII line `MASK <H> <W>\n`, then one byte per pixel holding the
//! object id.
//!
//! Manifests: one relative path per line, in frame order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, ObjectLabelMap};

const MAX_HEADER: usize = 128;

fn split_header<'a>(bytes: &'a [u8], magic: &str, fields: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let end = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader(format!("no {magic} header line")))?;
    let line = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let mut tokens = line.split(' ');
    if tokens.next() != Some(magic) {
        return Err(Error::MalformedHeader(format!("expected `{magic}` magic in {line:?}")));
    }
    let dims = tokens
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::MalformedHeader(format!("bad dimension {t:?} in {line:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if dims.len() != fields {
        return Err(Error::MalformedHeader(format!(
            "expected {fields} dimensions in {line:?}"
        )));
    }
    Ok((dims, &bytes[end + 1..]))
}

pub fn encode_feature_map(map: &FeatureMap) -> Result<Vec<u8>> {
    if map.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let header = format!("FMAP {} {} {}\n", map.height(), map.width(), map.channels());
    let mut out = Vec::with_capacity(header.len() + map.as_slice().len() * 4);
    out.extend_from_slice(header.as_bytes());
    for v in map.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    let (dims, payload) = split_header(bytes, "FMAP", 3)?;
    let (h, w, d) = (dims[0], dims[1], dims[2]);
    let count = h * w * d;
    if count == 0 {
        return Err(Error::EmptyTensor);
    }
    if payload.len() != count * 4 {
        return Err(Error::PayloadLengthMismatch {
            expected: count * 4,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FeatureMap::new(h, w, d, data)
}

pub fn save_feature_map(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_map(map)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_map(&bytes)
}

pub fn encode_mask(mask: &ObjectLabelMap) -> Result<Vec<u8>> {
    if mask.positions() == 0 {
        return Err(Error::EmptyTensor);
    }
    let header = format!("MASK {} {}\n", mask.height(), mask.width());
    let mut out = Vec::with_capacity(header.len() + mask.positions());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(mask.as_slice());
    Ok(out)
}

/// Decodes a mask; the declared object count is the largest id present.
pub fn decode_mask(bytes: &[u8]) -> Result<ObjectLabelMap> {
    let (dims, payload) = split_header(bytes, "MASK", 2)?;
    let (h, w) = (dims[0], dims[1]);
    if h * w == 0 {
        return Err(Error::EmptyTensor);
    }
    if payload.len() != h * w {
        return Err(Error::PayloadLengthMismatch {
            expected: h * w,
            found: payload.len(),
        });
    }
    ObjectLabelMap::from_labels(h, w, payload.to_vec())
}

pub fn save_mask(mask: &ObjectLabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_mask(mask)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<ObjectLabelMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for e in entries {
        text.push_str(e);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a manifest and resolves each entry relative to the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect())
}

/// Mask path paired with a manifest entry: same stem, `.mask` extension.
pub fn mask_path_for(entry: &Path) -> PathBuf {
    entry.with_extension("mask")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_two_by_two() {
        let mut bytes = b"FMAP 2 2 1\n".to_vec();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let map = decode_feature_map(&bytes).unwrap();
        assert_eq!((map.height(), map.width(), map.channels()), (2, 2, 1));
        assert_eq!(map.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn short_payload_is_rejected() {
        let mut bytes = b"FMAP 2 2 1\n".to_vec();
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let err = decode_feature_map(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");
    }

    #[test]
    fn malformed_headers() {
        for bad in [&b"FMAQ 1 1 1\n"[..], b"FMAP 1 1\n", b"FMAP a 1 1\n", b"FMAP 1 1 1"] {
            assert!(matches!(decode_feature_map(bad), Err(Error::MalformedHeader(_))));
        }
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut bytes = b"FMAP 1 1 2\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_feature_map(&bytes), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn empty_map_cannot_be_saved() {
        let dir = tempfile::tempdir().unwrap();
        let err = save_feature_map(&FeatureMap::zeros(0, 0, 1), dir.path().join("e.fmap")).unwrap_err();
        assert_eq!(err.to_string(), "empty tensor");
    }

    #[test]
    fn mask_header_and_payload() {
        let mask = ObjectLabelMap::new(2, 3, 2, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let bytes = encode_mask(&mask).unwrap();
        assert!(bytes.starts_with(b"MASK 2 3\n"));
        assert_eq!(&bytes[9..], &[0, 1, 2, 2, 1, 0]);
        assert_eq!(decode_mask(&bytes).unwrap(), mask);
    }

    #[test]
    fn manifest_resolves_relative_to_its_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        write_manifest(&path, &["a.fmap".into(), "b.fmap".into()]).unwrap();
        let entries = read_manifest(&path).unwrap();
        assert_eq!(entries, vec![dir.path().join("a.fmap"), dir.path().join("b.fmap")]);
        assert_eq!(mask_path_for(&entries[0]), dir.path().join("a.mask"));
    }
}
