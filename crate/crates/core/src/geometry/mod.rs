//! Coordinate conventions, meshes, cameras and map types.
//!
//! World frame is right-handed with +y up. Models sit at the origin. The input
//! camera looks from `[0, 0, -1]` toward the origin. The front orthographic
//! camera looks along +z and the back camera along -z, but both render onto the
//! same pixel grid and report depth as the world z coordinate, so pixel `(row,
//! col)` of the front and back maps lies on one ray. Image columns grow toward
//! -x, matching the view of the input camera.

mod camera;
mod convert;
mod maps;
mod mesh;
pub mod primitives;
mod raster;

pub use camera::{OrthoFrame, OrthographicCamera, PerspectiveCamera, Side};
pub use convert::{depth_pair_to_points, depth_to_normal, rotate_mesh_y, PointCloud};
pub use maps::{DepthMap, Image, MapPair, Mask, NormalMap};
pub use mesh::Mesh;
pub use raster::{
    cast_orthographic, render_depth_ortho, render_perspective_image, Hit, LightSource, OrthoHits,
};

pub(crate) use raster::depth_from_hits;

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("face {face} references vertex {index}, mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, index: u32, count: usize },
    #[error("face {0} is degenerate (zero area)")]
    DegenerateFace(usize),
    #[error("vertex normal {0} is not unit length")]
    NonUnitNormal(usize),
    #[error("{attribute} has {got} entries, expected {expected}")]
    AttributeLength { attribute: &'static str, got: usize, expected: usize },
    #[error("mesh has no vertex colors")]
    MissingColors,
    #[error("no pixel hits the mesh")]
    EmptyRender,
    #[error("front and back masks differ")]
    MaskMismatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}
