//! Training-sample synthesis from colored meshes and background photos.
//!
//! Each sample pairs a perspective, lit, background-composited input image with six
//! orthographic targets on one shared pixel grid: front/back depth, front/back normals
//! (derived from the depth maps) and front/back shade-free color.

mod dataset;
mod lights;
mod sample;

pub use dataset::{
    build_dataset, load_backgrounds_dir, load_meshes_dir, procedural_background, DatasetManifest, ManifestRecord, MODEL_UNITS,
    Named, Split,
};
pub use lights::{place_lights, Light, LightSet};
pub use sample::{
    composite_background, denormalize_input, fit_background, make_sample, normalize_input, prepare_mesh,
    render_shadefree, Sample, SampleMeta, SampleTargets, VGG_MEAN, VGG_STD,
};

use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, OrthoFrame, OrthographicCamera, PerspectiveCamera, Side};
use crate::io::IoError;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("no meshes given")]
    NoMeshes,
    #[error("duplicate mesh id {0:?}")]
    DuplicateMeshId(String),
    #[error("invalid rotation sweep: {0}")]
    InvalidRotations(String),
    #[error("sample {path}: {message}")]
    CorruptSample { path: String, message: String },
}

/// Camera, lighting and depth-range settings shared by every rendered sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    pub vertical_fov: f64,
    pub camera_position: [f64; 3],
    pub light_count: usize,
    /// Total radiance budget split evenly over the lights.
    pub light_intensity: f32,
    pub near: f64,
    pub far: f64,
    /// Meshes are rescaled to this bounding-box height after centering; `None` keeps scale.
    pub target_height: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height: 512,
            width: 256,
            vertical_fov: 50.0,
            camera_position: [0.0, 0.0, -1.0],
            light_count: 180,
            light_intensity: 4.0,
            near: -1.0,
            far: 1.0,
            target_height: Some(0.85),
        }
    }
}

impl RenderConfig {
    pub fn perspective(&self) -> PerspectiveCamera {
        PerspectiveCamera {
            position: self.camera_position,
            look_at: [0.0, 0.0, 0.0],
            vertical_fov: self.vertical_fov,
            height: self.height,
            width: self.width,
        }
    }

    pub fn frame(&self) -> OrthoFrame {
        OrthoFrame::matching(&self.perspective())
    }

    pub fn ortho(&self, side: Side) -> OrthographicCamera {
        OrthographicCamera { side, frame: self.frame(), near: self.near, far: self.far }
    }
}

/// Inclusive rotation sweep in degrees, written `start:stop:step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationSweep {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for RotationSweep {
    fn default() -> Self {
        Self { start: -40.0, stop: 40.0, step: 10.0 }
    }
}

impl RotationSweep {
    pub fn angles(&self) -> Vec<f64> {
        if self.step <= 0.0 || self.stop < self.start {
            return vec![self.start];
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.start + k as f64 * self.step).collect()
    }
}

impl std::str::FromStr for RotationSweep {
    type Err = DatagenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatagenError::InvalidRotations(s.to_string());
        let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let sweep = match parts.as_slice() {
            [a] => Self { start: *a, stop: *a, step: 1.0 },
            [a, b, c] => Self { start: *a, stop: *b, step: *c },
            _ => return Err(bad()),
        };
        if !(sweep.step > 0.0) || sweep.stop < sweep.start {
            return Err(bad());
        }
        Ok(sweep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    pub render: RenderConfig,
    pub rotations: RotationSweep,
    pub seed: u64,
    /// Fraction of meshes held out for validation. At least one mesh always stays in train.
    pub val_fraction: f64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self { render: RenderConfig::default(), rotations: RotationSweep::default(), seed: 0, val_fraction: 0.0 }
    }
}
