use serde::{Deserialize, Serialize};

use super::{GeometryError, Vec3};

/// Which of the two aligned orthographic views a map belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Front,
    Back,
}

impl Side {
    pub fn suffix(self) -> &'static str {
        match self {
            Side::Front => "f",
            Side::Back => "b",
        }
    }

    /// Sign of the z component of a surface normal facing this side's camera.
    pub fn facing_sign(self) -> f64 {
        match self {
            Side::Front => -1.0,
            Side::Back => 1.0,
        }
    }
}

/// Pinhole camera used for the shaded input image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveCamera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for PerspectiveCamera {
    fn default() -> Self {
        Self { position: [0.0, 0.0, -1.0], look_at: [0.0; 3], vertical_fov: 50.0, height: 512, width: 256 }
    }
}

/// Camera-space axes of a [`PerspectiveCamera`] plus its focal length in pixels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CameraBasis {
    pub origin: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub focal: f64,
}

impl PerspectiveCamera {
    pub fn with_resolution(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(GeometryError::InvalidCamera(format!("fov {} outside (0, 180)", self.vertical_fov)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(GeometryError::InvalidCamera("resolution must be positive".into()));
        }
        let forward = Vec3::from(self.look_at) - Vec3::from(self.position);
        if forward.norm() == 0.0 || forward.normalize().cross(&Vec3::y()).norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera("view direction is zero or parallel to +y".into()));
        }
        Ok(())
    }

    /// Distance from the camera to its look-at point.
    pub fn target_distance(&self) -> f64 {
        (Vec3::from(self.look_at) - Vec3::from(self.position)).norm()
    }

    pub(crate) fn basis(&self) -> CameraBasis {
        let origin = Vec3::from(self.position);
        let forward = (Vec3::from(self.look_at) - origin).normalize();
        let right = forward.cross(&Vec3::y()).normalize();
        let up = right.cross(&forward);
        let focal = 0.5 * self.height as f64 / (0.5 * self.vertical_fov.to_radians()).tan();
        CameraBasis { origin, right, up, forward, focal }
    }
}

impl CameraBasis {
    /// Continuous pixel coordinates `(col, row)` and view depth. Pixel `(i, j)` has its
    /// center at `(j + 0.5, i + 0.5)`.
    pub fn project(&self, p: &Vec3, height: usize, width: usize) -> Option<(f64, f64, f64)> {
        let d = p - self.origin;
        let z = d.dot(&self.forward);
        if z <= 1e-9 {
            return None;
        }
        let x = d.dot(&self.right);
        let y = d.dot(&self.up);
        Some((0.5 * width as f64 + self.focal * x / z, 0.5 * height as f64 - self.focal * y / z, z))
    }
}

/// Pixel grid shared by the front and back orthographic views.
///
/// Pixel `(row i, col j)` has its center at
/// `x = cx - (j + 0.5 - W/2) * pitch`, `y = cy + (H/2 - i - 0.5) * pitch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoFrame {
    pub center: [f64; 2],
    /// Side length of one pixel in meters.
    pub pixel_pitch: f64,
    pub height: usize,
    pub width: usize,
}

impl OrthoFrame {
    /// Frame whose vertical extent equals what `camera` sees on the plane through its
    /// look-at point, at the camera's own resolution.
    pub fn matching(camera: &PerspectiveCamera) -> Self {
        let extent = 2.0 * camera.target_distance() * (0.5 * camera.vertical_fov.to_radians()).tan();
        Self {
            center: [camera.look_at[0], camera.look_at[1]],
            pixel_pitch: extent / camera.height as f64,
            height: camera.height,
            width: camera.width,
        }
    }

    /// Same metric extent, different pixel count. The pitch follows the height.
    pub fn resampled(&self, height: usize, width: usize) -> Self {
        let extent = self.pixel_pitch * self.height as f64;
        Self { center: self.center, pixel_pitch: extent / height as f64, height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let x = self.center[0] - (col as f64 + 0.5 - 0.5 * self.width as f64) * self.pixel_pitch;
        let y = self.center[1] + (0.5 * self.height as f64 - row as f64 - 0.5) * self.pixel_pitch;
        (x, y)
    }

    /// Continuous `(col, row)` coordinates where integer values are pixel centers.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let col = (self.center[0] - x) / self.pixel_pitch + 0.5 * self.width as f64 - 0.5;
        let row = (self.center[1] - y) / self.pixel_pitch + 0.5 * self.height as f64 - 0.5;
        (col, row)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.height == 0 || self.width == 0 || !(self.pixel_pitch > 0.0) {
            return Err(GeometryError::InvalidCamera("orthographic frame must have positive size and pitch".into()));
        }
        Ok(())
    }
}

/// Orthographic camera looking along +z (front) or -z (back).
///
/// Depth is the world z coordinate of the hit, mapped to `(0, 1)` over `[near, far]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthographicCamera {
    pub side: Side,
    pub frame: OrthoFrame,
    pub near: f64,
    pub far: f64,
}

impl OrthographicCamera {
    pub fn new(side: Side, frame: OrthoFrame, near: f64, far: f64) -> Result<Self, GeometryError> {
        frame.validate()?;
        if !(far > near) {
            return Err(GeometryError::InvalidCamera(format!("far {far} must exceed near {near}")));
        }
        Ok(Self { side, frame, near, far })
    }

    /// Front camera over the default depth box `[-1, 1]` m.
    pub fn front(frame: OrthoFrame) -> Self {
        Self { side: Side::Front, frame, near: -1.0, far: 1.0 }
    }

    pub fn back(frame: OrthoFrame) -> Self {
        Self { side: Side::Back, ..Self::front(frame) }
    }

    pub fn for_side(side: Side, frame: OrthoFrame) -> Self {
        Self { side, ..Self::front(frame) }
    }

    pub fn view_direction(&self) -> Vec3 {
        match self.side {
            Side::Front => Vec3::z(),
            Side::Back => -Vec3::z(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_center_round_trip() {
        let f = OrthoFrame { center: [0.1, -0.2], pixel_pitch: 0.01, height: 8, width: 4 };
        for (i, j) in [(0, 0), (7, 3), (3, 2)] {
            let (x, y) = f.pixel_center(i, j);
            let (c, r) = f.to_pixel(x, y);
            assert!((c - j as f64).abs() < 1e-9 && (r - i as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn columns_grow_toward_negative_x() {
        let f = OrthoFrame { center: [0.0, 0.0], pixel_pitch: 1.0, height: 2, width: 2 };
        assert!(f.pixel_center(0, 0).0 > f.pixel_center(0, 1).0);
        assert!(f.pixel_center(0, 0).1 > f.pixel_center(1, 0).1);
    }

    #[test]
    fn default_camera_extent() {
        let cam = PerspectiveCamera::default();
        let f = OrthoFrame::matching(&cam);
        let extent = f.pixel_pitch * f.height as f64;
        assert!((extent - 2.0 * 25f64.to_radians().tan()).abs() < 1e-12);
        assert!(extent > 0.9);
    }

    #[test]
    fn perspective_projects_look_at_to_center() {
        let cam = PerspectiveCamera::default();
        let (u, v, z) = cam.basis().project(&Vec3::zeros(), cam.height, cam.width).unwrap();
        assert_eq!((u, v), (128.0, 256.0));
        assert!((z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_cameras() {
        let mut cam = PerspectiveCamera::default();
        cam.vertical_fov = 180.0;
        assert!(cam.validate().is_err());
        let f = OrthoFrame::matching(&PerspectiveCamera::default());
        assert!(OrthographicCamera::new(Side::Front, f, 1.0, 1.0).is_err());
    }
}
