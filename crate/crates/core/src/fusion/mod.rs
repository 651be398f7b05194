//! Depth pair to signed volume to colored mesh.
//!
//! The front and back depth maps share one pixel grid, so each pixel column is bounded by
//! its two depths and carving is column-independent. Only the first and last surfaces
//! along a column survive: anything between them, such as an arm in front of the torso,
//! is filled in.

mod extract;
mod volume;

pub use extract::{extract_surface, MIN_TRIANGLE_AREA};
pub use volume::{carve_volume, VolumeGrid};

use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, Image, MapPair, Mask, Mesh, OrthoFrame, OrthographicCamera, DepthMap};
use crate::networks::{NetworkError, PipelineOutput};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("front and back maps are not aligned: {0}")]
    MaskMismatch(String),
    #[error("back depth {back} is in front of front depth {front} at ({row}, {col})")]
    OrderViolation { row: usize, col: usize, front: f64, back: f64 },
    #[error("volume has no sign change at the iso level")]
    NoSurface,
    #[error("invalid reconstruction config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// Samples along z.
    pub z_resolution: usize,
    pub iso_level: f32,
    /// Truncation distance in z samples.
    pub truncation: f64,
    pub colorize: bool,
    /// Normalized depth at or below which a predicted pixel is background.
    pub mask_eps: f32,
    /// Clamp columns with back < front to zero thickness instead of failing.
    pub clamp_order: bool,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self { z_resolution: 256, iso_level: 0.0, truncation: 3.0, colorize: true, mask_eps: 0.02, clamp_order: true }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        // Two margin samples on each side of the foreground leave at least two inside.
        if self.z_resolution < 6 {
            return Err(FusionError::InvalidConfig(format!("z_resolution {} must be at least 6", self.z_resolution)));
        }
        if !(self.truncation >= 1.0) {
            return Err(FusionError::InvalidConfig(format!("truncation {} must be at least 1 voxel", self.truncation)));
        }
        if !self.iso_level.is_finite() || !(0.0..1.0).contains(&self.mask_eps) {
            return Err(FusionError::InvalidConfig("iso_level must be finite and mask_eps in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Bilinear lookup at continuous `(col, row)`, weighting taps by `mask` when given. Falls
/// back to the nearest in-frame pixel when no tap is usable.
fn sample_bilinear(img: &Image, mask: Option<&Mask>, col: f64, row: f64) -> [f32; 3] {
    let (h, w) = (img.height as f64, img.width as f64);
    let (c, r) = (col.clamp(0.0, w - 1.0), row.clamp(0.0, h - 1.0));
    let (c0, r0) = (c.floor() as usize, r.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(img.width - 1), (r0 + 1).min(img.height - 1));
    let (fc, fr) = (c - c0 as f64, r - r0 as f64);
    let taps = [(r0, c0, (1.0 - fr) * (1.0 - fc)), (r0, c1, (1.0 - fr) * fc), (r1, c0, fr * (1.0 - fc)), (r1, c1, fr * fc)];
    let mut acc = [0f64; 3];
    let mut total = 0.0;
    for (i, j, wt) in taps {
        if wt <= 0.0 || mask.is_some_and(|m| !m.get(i, j)) {
            continue;
        }
        let p = img.pixel(i, j);
        for ch in 0..3 {
            acc[ch] += wt * p[ch] as f64;
        }
        total += wt;
    }
    if total <= 0.0 {
        let p = img.pixel(r.round() as usize, c.round() as usize);
        return [p[0], p[1], p[2]];
    }
    acc.map(|v| (v / total) as f32)
}

/// Assigns each vertex the color of the view that sees it: the front image when its outward
/// normal has `n_z < 0`, the back image otherwise, sampled bilinearly at the vertex's
/// `(x, y)`. With a `mask`, background pixels do not contribute.
pub fn colorize_mesh(mut mesh: Mesh, colors: &MapPair<Image>, frame: &OrthoFrame, mask: Option<&Mask>) -> Result<Mesh, FusionError> {
    for img in [&colors.front, &colors.back] {
        if (img.height, img.width) != (frame.height, frame.width) || img.channels < 3 {
            return Err(FusionError::MaskMismatch(format!(
                "color image {}x{}x{} does not match frame {}x{}",
                img.height, img.width, img.channels, frame.height, frame.width
            )));
        }
    }
    let normals = mesh.vertex_normals.take().unwrap_or_else(|| mesh.compute_vertex_normals());
    let vertex_colors = mesh
        .vertices
        .iter()
        .zip(&normals)
        .map(|(v, n)| {
            let img = if n.z < 0.0 { &colors.front } else { &colors.back };
            let (col, row) = frame.to_pixel(v.x, v.y);
            sample_bilinear(img, mask, col, row)
        })
        .collect();
    mesh.vertex_normals = Some(normals);
    Ok(mesh.with_colors(vertex_colors)?)
}

/// Carves, extracts and optionally colors a mesh from an aligned depth pair.
pub fn reconstruct_maps(depths: &MapPair<DepthMap>, colors: Option<&MapPair<Image>>, cfg: &ReconstructionConfig) -> Result<Mesh, FusionError> {
    let grid = carve_volume(&depths.front, &depths.back, cfg)?;
    let mesh = extract_surface(&grid, cfg.iso_level)?.with_computed_normals();
    match colors {
        Some(c) if cfg.colorize => colorize_mesh(mesh, c, &grid.frame, Some(&depths.front.mask)),
        _ => Ok(mesh),
    }
}

/// Mesh for batch item `item` of a pipeline output. Pixels where either predicted depth is
/// at or below `cfg.mask_eps` are background; depths are un-normalized over the camera's
/// `[near, far]`.
pub fn reconstruct(pred: &PipelineOutput, item: usize, camera: &OrthographicCamera, cfg: &ReconstructionConfig) -> Result<Mesh, FusionError> {
    cfg.validate()?;
    let maps = pred.to_maps(item, camera, cfg.mask_eps)?;
    reconstruct_maps(&maps.depths, maps.colors.as_ref(), cfg)
}
