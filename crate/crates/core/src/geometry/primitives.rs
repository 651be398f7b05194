//! Closed analytic meshes used as fixtures and toy training subjects.
//!
//! All generators produce outward-wound triangles with vertex normals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mesh, Vec3};

/// Axis-aligned box with 12 triangles.
pub fn cuboid(center: Vec3, half: Vec3) -> Mesh {
    let vertices = (0..8)
        .map(|i| {
            let s = |bit: usize| if i & bit != 0 { 1.0 } else { -1.0 };
            center + Vec3::new(s(1) * half.x, s(2) * half.y, s(4) * half.z)
        })
        .collect();
    let faces = vec![
        [0, 2, 1], [1, 2, 3], // -z
        [4, 5, 6], [5, 7, 6], // +z
        [0, 1, 4], [1, 5, 4], // -y
        [2, 6, 3], [3, 6, 7], // +y
        [0, 4, 2], [2, 4, 6], // -x
        [1, 3, 5], [3, 7, 5], // +x
    ];
    Mesh { vertices, faces, vertex_colors: None, vertex_normals: None }.with_computed_normals()
}

/// Surface of revolution about the vertical axis through `center`.
///
/// `profile` lists `(y, radius)` rings from top to bottom; the two poles close the ends.
fn lathe(center: Vec3, top: f64, bottom: f64, profile: &[(f64, f64)], segments: usize) -> Mesh {
    let mut vertices = vec![center + Vec3::new(0.0, top, 0.0)];
    for &(y, rho) in profile {
        for s in 0..segments {
            let theta = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(center + Vec3::new(rho * theta.cos(), y, rho * theta.sin()));
        }
    }
    let bottom_pole = vertices.len() as u32;
    vertices.push(center + Vec3::new(0.0, bottom, 0.0));

    let ring = |r: usize, s: usize| (1 + r * segments + s % segments) as u32;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(0, s + 1), ring(0, s)]);
    }
    for r in 0..profile.len() - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, b, c]);
            faces.push([b, d, c]);
        }
    }
    let last = profile.len() - 1;
    for s in 0..segments {
        faces.push([ring(last, s), ring(last, s + 1), bottom_pole]);
    }
    Mesh { vertices, faces, vertex_colors: None, vertex_normals: None }
}

/// UV sphere with poles on the y axis. `rings` latitude bands, `segments` longitude steps.
///
/// With even `rings` and `segments` divisible by 4, vertices sit at `(0, 0, ±radius)`
/// relative to the center.
pub fn uv_sphere(center: Vec3, radius: f64, rings: usize, segments: usize) -> Mesh {
    assert!(rings >= 2 && segments >= 3);
    let profile: Vec<(f64, f64)> = (1..rings)
        .map(|i| {
            let phi = std::f64::consts::PI * i as f64 / rings as f64;
            (radius * phi.cos(), radius * phi.sin())
        })
        .collect();
    let mut mesh = lathe(center, radius, -radius, &profile, segments);
    mesh.vertex_normals = Some(mesh.vertices.iter().map(|v| (v - center).normalize()).collect());
    mesh
}

/// Vertical capsule: a cylinder of half length `half_length` capped by hemispheres.
pub fn capsule(center: Vec3, radius: f64, half_length: f64, rings: usize, segments: usize) -> Mesh {
    assert!(rings >= 2 && rings.is_multiple_of(2) && segments >= 3 && half_length > 0.0);
    let mut profile = Vec::new();
    for i in 1..=rings / 2 {
        let phi = std::f64::consts::PI * i as f64 / rings as f64;
        profile.push((half_length + radius * phi.cos(), radius * phi.sin()));
    }
    for i in rings / 2..rings {
        let phi = std::f64::consts::PI * i as f64 / rings as f64;
        profile.push((-half_length + radius * phi.cos(), radius * phi.sin()));
    }
    let mut mesh = lathe(center, half_length + radius, -half_length - radius, &profile, segments);
    let normals = mesh
        .vertices
        .iter()
        .map(|v| {
            let local = v - center;
            let axis_y = local.y.clamp(-half_length, half_length);
            (local - Vec3::new(0.0, axis_y, 0.0)).normalize()
        })
        .collect();
    mesh.vertex_normals = Some(normals);
    mesh
}

/// Exact distance from `p` to the surface of the capsule produced by [`capsule`].
pub fn capsule_distance(center: Vec3, radius: f64, half_length: f64, p: &Vec3) -> f64 {
    let local = p - center;
    let axis_y = local.y.clamp(-half_length, half_length);
    ((local - Vec3::new(0.0, axis_y, 0.0)).norm() - radius).abs()
}

/// Star-shaped blob: a sphere whose radius is modulated by a few random low-order harmonics.
/// Watertight and free of self-intersections for `amplitude < 0.5`.
pub fn random_blob(seed: u64, center: Vec3, radius: f64, amplitude: f64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(1..=3) as f64,
                rng.random_range(1..=3) as f64,
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(-1.0..1.0) * amplitude / 4.0,
            )
        })
        .collect();
    let stretch = Vec3::new(rng.random_range(0.7..1.3), rng.random_range(0.7..1.3), rng.random_range(0.7..1.3));
    let base = uv_sphere(Vec3::zeros(), 1.0, 24, 48);
    let vertices = base
        .vertices
        .iter()
        .map(|v| {
            let phi = v.y.clamp(-1.0, 1.0).acos();
            let theta = v.z.atan2(v.x);
            let r = 1.0 + terms.iter().map(|&(a, b, p, w)| w * (a * theta + p).sin() * (b * phi).sin()).sum::<f64>();
            center + v.component_mul(&stretch) * (radius * r)
        })
        .collect();
    Mesh { vertices, faces: base.faces, vertex_colors: None, vertex_normals: None }.with_computed_normals()
}

fn rotated_z(mesh: Mesh, pivot: Vec3, degrees: f64) -> Mesh {
    let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), degrees.to_radians());
    let mut out = mesh;
    out.vertices.iter_mut().for_each(|v| *v = pivot + rot * (*v - pivot));
    if let Some(n) = out.vertex_normals.as_mut() {
        n.iter_mut().for_each(|v| *v = rot * *v);
    }
    out
}

/// Colored stick figure about 0.85 m tall, standing in an A pose at the origin.
/// Mirror-symmetric under `x -> -x`.
pub fn mannequin() -> Mesh {
    const SKIN: [f32; 3] = [0.9, 0.72, 0.58];
    const SHIRT: [f32; 3] = [0.2, 0.45, 0.8];
    const PANTS: [f32; 3] = [0.25, 0.25, 0.32];
    let mut parts = vec![
        uv_sphere(Vec3::new(0.0, 0.33, 0.0), 0.08, 16, 32).painted(SKIN),
        capsule(Vec3::new(0.0, 0.08, 0.0), 0.11, 0.1, 16, 32).painted(SHIRT),
    ];
    for sign in [-1.0, 1.0] {
        let shoulder = Vec3::new(sign * 0.15, 0.2, 0.0);
        let arm = capsule(Vec3::new(sign * 0.15, 0.06, 0.0), 0.035, 0.13, 8, 16);
        parts.push(rotated_z(arm, shoulder, sign * 12.0).painted(SKIN));
        parts.push(capsule(Vec3::new(sign * 0.06, -0.25, 0.0), 0.05, 0.14, 8, 16).painted(PANTS));
    }
    Mesh::merge(&parts)
}
