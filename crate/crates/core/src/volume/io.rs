//! JSON header + raw little-endian float32 payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Grid, VolumeKind, VoxelVolume};
use crate::error::{Error, Result};

pub const DTYPE_F32LE: &str = "f32le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub kind: VolumeKind,
    pub dtype: String,
    pub data: String,
}

impl VolumeHeader {
    pub fn for_volume(v: &VoxelVolume, data_file: impl Into<String>) -> Self {
        VolumeHeader {
            dims: v.dims(),
            spacing_mm: v.spacing(),
            kind: v.kind(),
            dtype: DTYPE_F32LE.to_string(),
            data: data_file.into(),
        }
    }
}

/// Resolves `<name>` / `<name>.json` to the header path.
pub fn header_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.to_path_buf()
    } else {
        path.with_extension("json")
    }
}

pub fn encode_payload(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_payload(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Header(format!(
            "payload size {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Builds a volume from an already-parsed header and payload bytes.
pub fn volume_from_parts(header: &VolumeHeader, payload: &[u8]) -> Result<VoxelVolume> {
    if header.dtype != DTYPE_F32LE {
        return Err(Error::Header(format!("unsupported dtype {:?}", header.dtype)));
    }
    let grid = Grid::new(header.dims, header.spacing_mm)?;
    let data = decode_payload(payload)?;
    VoxelVolume::new(grid, header.kind, data)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<VoxelVolume> {
    let hpath = header_path(path.as_ref());
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| Error::Header(e.to_string()))?;
    let dir = hpath.parent().unwrap_or_else(|| Path::new("."));
    let dpath = dir.join(&header.data);
    let bytes = fs::read(&dpath).map_err(|e| Error::io(&dpath, e))?;
    volume_from_parts(&header, &bytes)
}

/// Writes `<stem>.json` and `<stem>.raw`; returns the header path.
pub fn save_volume(v: &VoxelVolume, path: impl AsRef<Path>) -> Result<PathBuf> {
    let hpath = header_path(path.as_ref());
    let dpath = hpath.with_extension("raw");
    let data_name = dpath
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Header(format!("bad output path {}", hpath.display())))?
        .to_string();
    let header = VolumeHeader::for_volume(v, data_name);
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(&hpath, text).map_err(|e| Error::io(&hpath, e))?;
    fs::write(&dpath, encode_payload(v.data())).map_err(|e| Error::io(&dpath, e))?;
    Ok(hpath)
}
