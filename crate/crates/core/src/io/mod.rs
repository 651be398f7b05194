//! File formats: PFM and PNG maps, PLY and OBJ meshes.

mod obj;
mod pfm;
mod ply;
mod png;

use std::path::Path;

pub use obj::{read_obj, write_obj};
pub use pfm::{read_pfm, write_pfm, PfmImage};
pub use ply::{read_ply, write_ply, PlyFormat};
pub use png::{
    load_depth_png16, load_image, load_mask_png, save_depth_png16, save_image_png, save_mask_png,
};

use crate::geometry::{DepthMap, Mesh, NormalMap, OrthoFrame, Side};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed {format} data: {message}")]
    Format { format: &'static str, message: String },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unsupported mesh extension: {0}")]
    UnsupportedExtension(String),
}

pub(crate) fn format_err(format: &'static str, message: impl Into<String>) -> IoError {
    IoError::Format { format, message: message.into() }
}

pub(crate) fn open(path: &Path) -> Result<std::fs::File, IoError> {
    std::fs::File::open(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

pub(crate) fn create(path: &Path) -> Result<std::fs::File, IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| IoError::File { path: parent.display().to_string(), source })?;
        }
    }
    std::fs::File::create(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

/// Loads an OBJ or PLY mesh by extension.
pub fn read_mesh(path: &Path) -> Result<Mesh, IoError> {
    match extension(path).as_str() {
        "obj" => read_obj(path),
        "ply" => read_ply(path),
        other => Err(IoError::UnsupportedExtension(other.to_string())),
    }
}

/// Saves a mesh by extension; PLY output is binary little-endian.
pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<(), IoError> {
    match extension(path).as_str() {
        "obj" => write_obj(path, mesh),
        "ply" => write_ply(path, mesh, PlyFormat::BinaryLittleEndian),
        other => Err(IoError::UnsupportedExtension(other.to_string())),
    }
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase()
}

/// Writes normalized depth values (background 0) as single-channel PFM.
pub fn save_depth_pfm(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    write_pfm(path, &PfmImage { height: depth.height(), width: depth.width(), channels: 1, data: depth.values.clone() })
}

/// Reads a normalized depth PFM; every positive value is foreground.
pub fn load_depth_pfm(path: &Path, side: Side, frame: OrthoFrame, near: f64, far: f64) -> Result<DepthMap, IoError> {
    let pfm = read_pfm(path)?;
    if pfm.channels != 1 {
        return Err(format_err("pfm", "depth map must have one channel"));
    }
    let frame = if (pfm.height, pfm.width) == (frame.height, frame.width) {
        frame
    } else {
        frame.resampled(pfm.height, pfm.width)
    };
    Ok(DepthMap::from_normalized(side, frame, near, far, &pfm.data, 0.0))
}

/// Writes normal vectors as three-channel PFM (background 0).
pub fn save_normal_pfm(path: &Path, normals: &NormalMap) -> Result<(), IoError> {
    let data = normals.values.iter().flatten().copied().collect();
    write_pfm(path, &PfmImage { height: normals.height, width: normals.width, channels: 3, data })
}

pub fn load_normal_pfm(path: &Path, side: Side) -> Result<NormalMap, IoError> {
    let pfm = read_pfm(path)?;
    if pfm.channels != 3 {
        return Err(format_err("pfm", "normal map must have three channels"));
    }
    let mut out = NormalMap::new(side, pfm.height, pfm.width);
    for (k, v) in pfm.data.chunks_exact(3).enumerate() {
        if v.iter().any(|&c| c != 0.0) {
            out.values[k] = [v[0], v[1], v[2]];
            out.mask.data[k] = true;
        }
    }
    Ok(out)
}
