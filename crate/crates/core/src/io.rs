//! Binary file formats: activation dumps and checkpoint containers.
//!
//! ## Activation dump (`ACTV`)
//!
//! Little-endian layout:
//!
//! ```text
//! magic   : 4 bytes  "ACTV"
//! version : u32      (1)
//! n       : u64      sample count
//! d       : u32      activation dimension
//! dtype   : u8       0 = f32
//! data    : n * d    row-major f32
//! ```
//!
//! A sidecar text document with the same basename and a `.meta` extension
//! records the label, the source model name, and the layer index.
//!
//! ## Checkpoint container (`SAE1` / `PLM1`)
//!
//! ```text
//! magic      : 4 bytes
//! version    : u32   (1)
//! header_len : u32
//! header     : structured text (TOML), includes tensor byte offsets
//!              relative to the start of the tensor section
//! tensors    : little-endian floats, back to back
//! crc32      : u32   CRC-32 of every preceding byte
//! ```
//!
//! Loads verify the trailing checksum before any field is interpreted, so a
//! truncated or corrupted file fails loudly instead of partially loading.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationMatrix;
use crate::error::{CoreError, Result};

const ACTV_MAGIC: &[u8; 4] = b"ACTV";
const ACTV_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Sidecar metadata for an activation dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActvMeta {
    pub label: String,
    pub source_model: String,
    pub layer_index: u32,
}

/// Path of the sidecar metadata document for a dump file.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Write an activation dump plus its sidecar metadata document.
pub fn write_activations(path: &Path, m: &ActivationMatrix, meta: &ActvMeta) -> Result<()> {
    m.validate()?;
    let mut bytes = Vec::with_capacity(21 + m.n() * m.d() * 4);
    bytes.extend_from_slice(ACTV_MAGIC);
    bytes.extend_from_slice(&ACTV_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(m.n() as u64).to_le_bytes());
    bytes.extend_from_slice(&(m.d() as u32).to_le_bytes());
    bytes.push(DTYPE_F32);
    for v in m.data.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)?;
    let meta_text = toml::to_string(meta)
        .map_err(|e| CoreError::Format(format!("meta serialization: {e}")))?;
    atomic_write(&meta_path(path), meta_text.as_bytes())?;
    Ok(())
}

/// Read an activation dump and its sidecar metadata.
pub fn read_activations(path: &Path) -> Result<(ActivationMatrix, ActvMeta)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 21 {
        return Err(CoreError::Format(format!(
            "{}: too short for an ACTV header",
            path.display()
        )));
    }
    if &bytes[0..4] != ACTV_MAGIC {
        return Err(CoreError::Format(format!(
            "{}: bad magic, expected ACTV",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ACTV_VERSION {
        return Err(CoreError::FormatVersionMismatch {
            expected: ACTV_VERSION,
            got: version,
        });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let dtype = bytes[20];
    if dtype != DTYPE_F32 {
        return Err(CoreError::Format(format!("unsupported dtype code {dtype}")));
    }
    let expected_len = 21 + n * d * 4;
    if bytes.len() != expected_len {
        return Err(CoreError::Format(format!(
            "{}: expected {expected_len} bytes for {n}x{d} f32, got {}",
            path.display(),
            bytes.len()
        )));
    }
    let data = f32s_from_le(&bytes[21..]);
    let arr = Array2::from_shape_vec((n, d), data)
        .map_err(|e| CoreError::Format(format!("shape: {e}")))?;

    let meta_text = fs::read_to_string(meta_path(path))?;
    let meta: ActvMeta = toml::from_str(&meta_text)
        .map_err(|e| CoreError::Format(format!("meta parse: {e}")))?;
    let m = ActivationMatrix::new(arr, meta.label.clone())?;
    Ok((m, meta))
}

/// Write a checksummed container: magic, version, text header, raw payload.
pub fn write_framed(path: &Path, magic: &[u8; 4], version: u32, header: &str, payload: &[u8]) -> Result<()> {
    let header_bytes = header.as_bytes();
    let mut bytes = Vec::with_capacity(12 + header_bytes.len() + payload.len() + 4);
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&version.to_le_bytes());
    bytes.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header_bytes);
    bytes.extend_from_slice(payload);
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    atomic_write(path, &bytes)
}

/// Read a checksummed container; returns the text header and the payload.
///
/// The checksum is verified over the whole prefix before anything else is
/// interpreted.
pub fn read_framed(path: &Path, magic: &[u8; 4], version: u32) -> Result<(String, Vec<u8>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(CoreError::Format(format!(
            "{}: too short for a container",
            path.display()
        )));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CoreError::ChecksumMismatch { stored, computed });
    }
    if &body[0..4] != magic {
        return Err(CoreError::Format(format!(
            "{}: bad magic, expected {}",
            path.display(),
            String::from_utf8_lossy(magic)
        )));
    }
    let got_version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if got_version != version {
        return Err(CoreError::FormatVersionMismatch {
            expected: version,
            got: got_version,
        });
    }
    let header_len = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    if body.len() < 12 + header_len {
        return Err(CoreError::Format(format!(
            "{}: header length {header_len} exceeds file size",
            path.display()
        )));
    }
    let header = String::from_utf8(body[12..12 + header_len].to_vec())
        .map_err(|e| CoreError::Format(format!("header not utf-8: {e}")))?;
    let payload = body[12 + header_len..].to_vec();
    Ok((header, payload))
}

/// Encode a slice of `f32` as little-endian bytes.
pub fn f32s_to_le(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode little-endian bytes into `f32` values.
pub fn f32s_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Encode a slice of `f64` as little-endian bytes.
pub fn f64s_to_le(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode little-endian bytes into `f64` values.
pub fn f64s_from_le(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect()
}

/// Format a float with nine significant digits for CSV output.
pub fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Write bytes to a temporary file and rename it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample_matrix() -> ActivationMatrix {
        ActivationMatrix::new(array![[1.5_f32, -2.0, 0.25], [0.0, 3.5, -1.0]], "harm").unwrap()
    }

    #[test]
    fn actv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.actv");
        let m = sample_matrix();
        let meta = ActvMeta {
            label: "harm".into(),
            source_model: "planted".into(),
            layer_index: 0,
        };
        write_activations(&path, &m, &meta).unwrap();
        let (m2, meta2) = read_activations(&path).unwrap();
        assert_eq!(m.data, m2.data);
        assert_eq!(meta, meta2);
    }

    #[test]
    fn actv_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.actv");
        fs::write(&path, b"NOPE0000000000000000000000").unwrap();
        assert!(matches!(read_activations(&path), Err(CoreError::Format(_))));
    }

    #[test]
    fn framed_detects_truncation_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        write_framed(&path, b"SAE1", 1, "d = 3\n", &[1, 2, 3, 4]).unwrap();

        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 3]).unwrap();
        assert!(matches!(
            read_framed(&path, b"SAE1", 1),
            Err(CoreError::ChecksumMismatch { .. })
        ));

        let mut corrupted = full.clone();
        corrupted[14] ^= 0xff;
        fs::write(&path, &corrupted).unwrap();
        assert!(matches!(
            read_framed(&path, b"SAE1", 1),
            Err(CoreError::ChecksumMismatch { .. })
        ));

        fs::write(&path, &full).unwrap();
        let (header, payload) = read_framed(&path, b"SAE1", 1).unwrap();
        assert_eq!(header, "d = 3\n");
        assert_eq!(payload, vec![1, 2, 3, 4]);
    }

    #[test]
    fn framed_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        write_framed(&path, b"SAE1", 2, "", &[]).unwrap();
        assert!(matches!(
            read_framed(&path, b"SAE1", 1),
            Err(CoreError::FormatVersionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn sig9_has_nine_significant_digits() {
        assert_eq!(sig9(0.5), "5.00000000e-1");
        assert_eq!(sig9(123.456), "1.23456000e2");
    }
}
