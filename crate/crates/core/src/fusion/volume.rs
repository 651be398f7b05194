use rayon::prelude::*;

use super::{FusionError, ReconstructionConfig};
use crate::geometry::{DepthMap, OrthoFrame, Vec3};

/// Signed samples on the orthographic pixel grid extended along z: negative inside,
/// positive outside. Sample `(row, col, k)` sits at the pixel center of `(row, col)` and
/// `z = z0 + k * dz`.
#[derive(Debug, Clone)]
pub struct VolumeGrid {
    pub frame: OrthoFrame,
    pub z0: f64,
    pub dz: f64,
    pub nz: usize,
    /// Row-major over `(row, col)`, contiguous along z.
    pub values: Vec<f32>,
    /// Columns whose back depth was in front of the front depth.
    pub order_violations: usize,
}

impl VolumeGrid {
    /// Constant-valued grid.
    pub fn filled(frame: OrthoFrame, z0: f64, dz: f64, nz: usize, value: f32) -> Self {
        Self { frame, z0, dz, nz, values: vec![value; frame.len() * nz], order_violations: 0 }
    }

    /// Grid sampled from a scalar field in world coordinates.
    pub fn from_fn(frame: OrthoFrame, z0: f64, dz: f64, nz: usize, f: impl Fn(Vec3) -> f64 + Sync) -> Self {
        let mut grid = Self::filled(frame, z0, dz, nz, 0.0);
        grid.values.par_chunks_mut(nz).enumerate().for_each(|(c, col)| {
            let (x, y) = frame.pixel_center(c / frame.width, c % frame.width);
            for (k, v) in col.iter_mut().enumerate() {
                *v = f(Vec3::new(x, y, z0 + k as f64 * dz)) as f32;
            }
        });
        grid
    }

    pub fn rows(&self) -> usize {
        self.frame.height
    }

    pub fn cols(&self) -> usize {
        self.frame.width
    }

    pub fn index(&self, row: usize, col: usize, k: usize) -> usize {
        (row * self.frame.width + col) * self.nz + k
    }

    pub fn get(&self, row: usize, col: usize, k: usize) -> f32 {
        self.values[self.index(row, col, k)]
    }

    pub fn position(&self, row: usize, col: usize, k: usize) -> Vec3 {
        let (x, y) = self.frame.pixel_center(row, col);
        Vec3::new(x, y, self.z0 + k as f64 * self.dz)
    }

    /// Largest sample spacing over the three axes.
    pub fn voxel_size(&self) -> f64 {
        self.frame.pixel_pitch.max(self.dz)
    }

    pub fn column(&self, row: usize, col: usize) -> &[f32] {
        let start = self.index(row, col, 0);
        &self.values[start..start + self.nz]
    }
}

/// Interval `[front, back]` in meters for every foreground column.
fn column_intervals(front: &DepthMap, back: &DepthMap, clamp_order: bool) -> Result<(Vec<Option<(f64, f64)>>, usize), FusionError> {
    if front.frame != back.frame {
        return Err(FusionError::MaskMismatch(format!("frames differ: {:?} vs {:?}", front.frame, back.frame)));
    }
    if front.mask != back.mask {
        let differing = front.mask.data.iter().zip(&back.mask.data).filter(|(a, b)| a != b).count();
        return Err(FusionError::MaskMismatch(format!("{differing} pixels differ between the front and back masks")));
    }
    let (h, w) = (front.height(), front.width());
    let mut violations = 0;
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            out.push(match (front.meters(i, j), back.meters(i, j)) {
                (Some(f), Some(b)) if b < f => {
                    violations += 1;
                    if !clamp_order {
                        return Err(FusionError::OrderViolation { row: i, col: j, front: f, back: b });
                    }
                    Some((f, f))
                }
                (Some(f), Some(b)) => Some((f, b)),
                _ => None,
            });
        }
    }
    if violations > 0 {
        log::warn!("{violations} columns had back depth in front of front depth; clamped to zero thickness");
    }
    Ok((out, violations))
}

/// Fuses an aligned depth pair into a signed volume.
///
/// Each foreground column gets `max(front - z, z - back)`, truncated to
/// `truncation * dz`; background columns hold `+truncation * dz` everywhere. The z range
/// spans the foreground with two samples of margin on each side.
pub fn carve_volume(front: &DepthMap, back: &DepthMap, cfg: &ReconstructionConfig) -> Result<VolumeGrid, FusionError> {
    cfg.validate()?;
    let (intervals, violations) = column_intervals(front, back, cfg.clamp_order)?;
    let lo = intervals.iter().flatten().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = intervals.iter().flatten().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let nz = cfg.z_resolution;
    let (z0, dz) = if lo.is_finite() {
        const MARGIN: usize = 2;
        let span = (hi - lo).max(front.frame.pixel_pitch);
        let dz = span / (nz - 1 - 2 * MARGIN) as f64;
        (lo - MARGIN as f64 * dz, dz)
    } else {
        (front.near, (front.far - front.near) / (nz - 1) as f64)
    };
    let limit = (cfg.truncation * dz) as f32;
    let mut grid = VolumeGrid::filled(front.frame, z0, dz, nz, limit);
    grid.order_violations = violations;
    grid.values.par_chunks_mut(nz).zip(intervals.par_iter()).for_each(|(col, interval)| {
        if let Some((f, b)) = *interval {
            for (k, v) in col.iter_mut().enumerate() {
                let z = z0 + k as f64 * dz;
                *v = ((f - z).max(z - b) as f32).clamp(-limit, limit);
            }
        }
    });
    Ok(grid)
}
