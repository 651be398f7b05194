use nalgebra::Rotation3;

use super::maps::check_same_mask;
use super::{DepthMap, GeometryError, Image, Mesh, NormalMap, Side, Vec3};

/// Rotates about the vertical axis through the origin (right-handed, so +90° takes +x to -z).
pub fn rotate_mesh_y(mesh: &Mesh, degrees: f64) -> Mesh {
    let rot = Rotation3::from_axis_angle(&Vec3::y_axis(), degrees.to_radians());
    let mut out = mesh.clone();
    out.vertices.iter_mut().for_each(|v| *v = rot * *v);
    if let Some(normals) = out.vertex_normals.as_mut() {
        normals.iter_mut().for_each(|n| *n = (rot * *n).normalize());
    }
    out
}

/// Per-pixel surface normals from an orthographic depth map.
///
/// Derivatives use central differences, falling back to one-sided differences where a
/// neighbor is background. Normals face the map's camera: `n_z < 0` on the front map,
/// `n_z > 0` on the back map. An isolated pixel gets the camera-facing default.
pub fn depth_to_normal(depth: &DepthMap) -> NormalMap {
    let (h, w) = (depth.height(), depth.width());
    let pitch = depth.frame.pixel_pitch;
    let sign = depth.side.facing_sign();
    let mut out = NormalMap::new(depth.side, h, w);
    for i in 0..h {
        for j in 0..w {
            let Some(z) = depth.meters(i, j) else { continue };
            let at = |r: isize, c: isize| -> Option<f64> {
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    return None;
                }
                depth.meters(r as usize, c as usize)
            };
            let diff = |prev: Option<f64>, next: Option<f64>| match (prev, next) {
                (Some(p), Some(n)) => 0.5 * (n - p),
                (None, Some(n)) => n - z,
                (Some(p), None) => z - p,
                (None, None) => 0.0,
            };
            let (i, j) = (i as isize, j as isize);
            let dz_dcol = diff(at(i, j - 1), at(i, j + 1));
            let dz_drow = diff(at(i - 1, j), at(i + 1, j));
            // Columns run toward -x and rows toward -y.
            let fx = -dz_dcol / pitch;
            let fy = -dz_drow / pitch;
            let n = Vec3::new(-sign * fx, -sign * fy, sign).normalize();
            out.set(i as usize, j as usize, n);
        }
    }
    out
}

/// Colored points sampled from an aligned depth pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub colors: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One world-space point per foreground pixel per side. Front points take their color from
/// `front_img`, back points from `back_img`.
pub fn depth_pair_to_points(
    front: &DepthMap,
    back: &DepthMap,
    front_img: &Image,
    back_img: &Image,
) -> Result<PointCloud, GeometryError> {
    check_same_mask(&front.mask, &back.mask)?;
    for img in [front_img, back_img] {
        if img.height != front.height() || img.width != front.width() || img.channels < 3 {
            return Err(GeometryError::ShapeMismatch(format!(
                "color image {}x{}x{} vs depth {}x{}",
                img.height,
                img.width,
                img.channels,
                front.height(),
                front.width()
            )));
        }
    }
    let mut cloud = PointCloud::default();
    for (depth, img) in [(front, front_img), (back, back_img)] {
        debug_assert!(matches!(depth.side, Side::Front | Side::Back));
        for i in 0..depth.height() {
            for j in 0..depth.width() {
                if let Some(z) = depth.meters(i, j) {
                    let (x, y) = depth.frame.pixel_center(i, j);
                    cloud.points.push(Vec3::new(x, y, z));
                    let px = img.pixel(i, j);
                    cloud.colors.push([px[0], px[1], px[2]]);
                }
            }
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{primitives, render_depth_ortho, Mask, OrthoFrame, OrthographicCamera};

    fn frame() -> OrthoFrame {
        OrthoFrame { center: [0.0, 0.0], pixel_pitch: 0.01, height: 16, width: 16 }
    }

    #[test]
    fn rotation_identity_and_period() {
        let m = primitives::uv_sphere(Vec3::new(0.3, 0.1, -0.2), 0.2, 6, 8);
        assert_eq!(rotate_mesh_y(&m, 0.0).vertices, m.vertices);
        let full = rotate_mesh_y(&m, 360.0);
        for (a, b) in full.vertices.iter().zip(&m.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn rotation_matches_matrix_oracle() {
        let m = Mesh::new(vec![Vec3::x(), Vec3::y(), Vec3::z()], vec![[0, 1, 2]]).unwrap();
        let theta = 90f64.to_radians();
        // Explicit right-handed R_y.
        let r = nalgebra::Matrix3::new(theta.cos(), 0.0, theta.sin(), 0.0, 1.0, 0.0, -theta.sin(), 0.0, theta.cos());
        let out = rotate_mesh_y(&m, 90.0);
        for (v, o) in m.vertices.iter().zip(&out.vertices) {
            assert!((r * v - o).norm() < 1e-12);
        }
        assert!((out.vertices[0] - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn flat_plane_normals() {
        let z = vec![Some(0.1); 256];
        let d = DepthMap::from_meters(Side::Front, frame(), -1.0, 1.0, &z);
        let n = depth_to_normal(&d);
        for v in &n.values {
            assert!((v[0]).abs() < 1e-6 && (v[1]).abs() < 1e-6 && (v[2] + 1.0).abs() < 1e-6);
        }
        let back = depth_to_normal(&DepthMap { side: Side::Back, ..d });
        assert!(back.values.iter().all(|v| (v[2] - 1.0).abs() < 1e-6));
    }

    #[test]
    fn ramp_tilt_matches_analytic_plane() {
        let f = frame();
        let k = 0.004; // meters per column
        let z: Vec<Option<f64>> = (0..f.len()).map(|p| Some(k * (p % f.width) as f64)).collect();
        let d = DepthMap::from_meters(Side::Front, f, -1.0, 1.0, &z);
        let n = depth_to_normal(&d);
        let v = n.get(8, 8);
        let angle = (-(v[2] as f64)).acos();
        assert!((angle - (k / f.pixel_pitch).atan()).abs() < 1e-3);
        // Analytic plane z = k*col with x = -pitch*col + c: normal ∝ (-k/pitch, 0, -1).
        let expect = Vec3::new(-k / f.pixel_pitch, 0.0, -1.0).normalize();
        assert!((Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64) - expect).norm() < 1e-4);
    }

    #[test]
    fn isolated_pixel_gets_default() {
        let mut z = vec![None; 256];
        z[5 * 16 + 5] = Some(0.0);
        let n = depth_to_normal(&DepthMap::from_meters(Side::Front, frame(), -1.0, 1.0, &z));
        assert_eq!(n.get(5, 5), [0.0, 0.0, -1.0]);
        assert_eq!(n.get(0, 0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn sphere_center_normal() {
        let sphere = primitives::uv_sphere(Vec3::zeros(), 0.3, 32, 64);
        let f = OrthoFrame { center: [0.0, 0.0], pixel_pitch: 0.02, height: 41, width: 41 };
        let d = render_depth_ortho(&sphere, &OrthographicCamera::front(f)).unwrap();
        let n = depth_to_normal(&d).get(20, 20);
        assert!((n[2] + 1.0).abs() < 1e-4, "{n:?}");
    }

    #[test]
    fn point_pair_from_cube() {
        let cube = primitives::cuboid(Vec3::zeros(), Vec3::new(0.05, 0.05, 0.05));
        let f = frame();
        let front = render_depth_ortho(&cube, &OrthographicCamera::front(f)).unwrap();
        let back = render_depth_ortho(&cube, &OrthographicCamera::back(f)).unwrap();
        let img = Image::filled(16, 16, &[1.0, 0.0, 0.0]);
        let bimg = Image::filled(16, 16, &[0.0, 0.0, 1.0]);
        let cloud = depth_pair_to_points(&front, &back, &img, &bimg).unwrap();
        assert_eq!(cloud.len(), 2 * front.mask.count());
        let half = f.pixel_pitch / 2.0;
        for (p, c) in cloud.points.iter().zip(&cloud.colors) {
            // Analytic cube: |x|,|y| <= 0.05 and z on one of the two faces.
            assert!(p.x.abs() <= 0.05 + half && p.y.abs() <= 0.05 + half);
            assert!((p.z.abs() - 0.05).abs() < 1e-6);
            assert_eq!(*c, if p.z < 0.0 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] });
        }
    }

    #[test]
    fn point_pair_edge_cases() {
        let f = frame();
        let empty = DepthMap::from_meters(Side::Front, f, -1.0, 1.0, &vec![None; 256]);
        let img = Image::new(16, 16, 3);
        let cloud = depth_pair_to_points(&empty, &DepthMap { side: Side::Back, ..empty.clone() }, &img, &img).unwrap();
        assert!(cloud.is_empty());

        let mut z = vec![None; 256];
        z[3 * 16 + 7] = Some(-0.1);
        let front = DepthMap::from_meters(Side::Front, f, -1.0, 1.0, &z);
        z[3 * 16 + 7] = Some(0.1);
        let back = DepthMap::from_meters(Side::Back, f, -1.0, 1.0, &z);
        let cloud = depth_pair_to_points(&front, &back, &img, &img).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!((cloud.points[0].x, cloud.points[0].y), (cloud.points[1].x, cloud.points[1].y));

        let other = back.clone().with_mask(Mask::new(16, 16));
        assert!(matches!(depth_pair_to_points(&front, &other, &img, &img), Err(GeometryError::MaskMismatch)));
    }
}
