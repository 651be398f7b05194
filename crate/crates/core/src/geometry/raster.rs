use super::{DepthMap, GeometryError, Image, Mask, Mesh, OrthoFrame, OrthographicCamera, PerspectiveCamera, Side, Vec3};

/// Barycentric tolerance for the inside test; keeps shared edges crack-free.
const INSIDE_EPS: f64 = 1e-9;

/// Ray hit on a triangle: world z, face index and barycentric weights of the face's vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub z: f64,
    pub face: u32,
    pub bary: [f64; 3],
}

/// Nearest and farthest hit of the z-parallel ray through every pixel center.
#[derive(Debug, Clone)]
pub struct OrthoHits {
    pub frame: OrthoFrame,
    pub nearest: Vec<Option<Hit>>,
    pub farthest: Vec<Option<Hit>>,
}

impl OrthoHits {
    pub fn side(&self, side: Side) -> &[Option<Hit>] {
        match side {
            Side::Front => &self.nearest,
            Side::Back => &self.farthest,
        }
    }

    pub fn mask(&self) -> Mask {
        Mask {
            height: self.frame.height,
            width: self.frame.width,
            data: self.nearest.iter().map(Option::is_some).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nearest.iter().all(Option::is_none)
    }
}

/// Casts one ray along z through every pixel center of `frame` and records the first and
/// last surface met. Both sides share the ray set, so their masks are identical.
pub fn cast_orthographic(mesh: &Mesh, frame: &OrthoFrame) -> OrthoHits {
    let (h, w) = (frame.height, frame.width);
    let mut nearest: Vec<Option<Hit>> = vec![None; h * w];
    let mut farthest: Vec<Option<Hit>> = vec![None; h * w];
    let min_area = 1e-12 * frame.pixel_pitch * frame.pixel_pitch;

    for (f, tri) in mesh.faces.iter().enumerate() {
        let [a, b, c] = tri.map(|i| mesh.vertices[i as usize]);
        let denom = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        if denom.abs() < min_area {
            // Edge-on to the rays.
            continue;
        }
        let pa = frame.to_pixel(a.x, a.y);
        let pb = frame.to_pixel(b.x, b.y);
        let pc = frame.to_pixel(c.x, c.y);
        let Some((c0, c1)) = pixel_span(pa.0.min(pb.0).min(pc.0), pa.0.max(pb.0).max(pc.0), w) else {
            continue;
        };
        let Some((r0, r1)) = pixel_span(pa.1.min(pb.1).min(pc.1), pa.1.max(pb.1).max(pc.1), h) else {
            continue;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (px, py) = frame.pixel_center(row, col);
                let wb = ((px - a.x) * (c.y - a.y) - (c.x - a.x) * (py - a.y)) / denom;
                let wc = ((b.x - a.x) * (py - a.y) - (px - a.x) * (b.y - a.y)) / denom;
                let wa = 1.0 - wb - wc;
                if wa < -INSIDE_EPS || wb < -INSIDE_EPS || wc < -INSIDE_EPS {
                    continue;
                }
                let z = wa * a.z + wb * b.z + wc * c.z;
                let hit = Hit { z, face: f as u32, bary: [wa, wb, wc] };
                let k = row * w + col;
                if nearest[k].is_none_or(|n| z < n.z) {
                    nearest[k] = Some(hit);
                }
                if farthest[k].is_none_or(|n| z > n.z) {
                    farthest[k] = Some(hit);
                }
            }
        }
    }
    OrthoHits { frame: *frame, nearest, farthest }
}

/// Integer pixel-center range covered by the continuous interval `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, size: usize) -> Option<(usize, usize)> {
    let first = (lo - 1e-9).ceil().max(0.0);
    let last = (hi + 1e-9).floor().min(size as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

/// Orthographic depth render: the front map holds the nearest surface along +z and the back
/// map the farthest one, both as world z on the shared pixel grid. Background is 0.
pub fn render_depth_ortho(mesh: &Mesh, camera: &OrthographicCamera) -> Result<DepthMap, GeometryError> {
    let hits = cast_orthographic(mesh, &camera.frame);
    depth_from_hits(&hits, camera)
}

pub(crate) fn depth_from_hits(hits: &OrthoHits, camera: &OrthographicCamera) -> Result<DepthMap, GeometryError> {
    if hits.is_empty() {
        return Err(GeometryError::EmptyRender);
    }
    let z: Vec<Option<f64>> = hits.side(camera.side).iter().map(|h| h.map(|h| h.z)).collect();
    Ok(DepthMap::from_meters(camera.side, camera.frame, camera.near, camera.far, &z))
}

/// Directional light: `direction` points from the surface toward the light.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightSource {
    pub direction: Vec3,
    pub radiance: [f32; 3],
}

/// Lambertian render of a vertex-colored mesh through a pinhole camera.
///
/// Each pixel gets `albedo * sum_i max(0, n . l_i) * radiance_i`, clamped to `[0, 1]`.
/// The normal is interpolated from vertex normals when present, else the face normal.
pub fn render_perspective_image(
    mesh: &Mesh,
    lights: &[LightSource],
    camera: &PerspectiveCamera,
) -> Result<(Image, Mask), GeometryError> {
    camera.validate()?;
    let colors = mesh.vertex_colors.as_ref().ok_or(GeometryError::MissingColors)?;
    let (h, w) = (camera.height, camera.width);
    let basis = camera.basis();
    let projected: Vec<Option<(f64, f64, f64)>> = mesh.vertices.iter().map(|v| basis.project(v, h, w)).collect();

    let mut depth = vec![f64::INFINITY; h * w];
    let mut hit: Vec<Option<(u32, [f64; 3])>> = vec![None; h * w];
    for (f, tri) in mesh.faces.iter().enumerate() {
        let [Some(p0), Some(p1), Some(p2)] = tri.map(|i| projected[i as usize]) else {
            continue;
        };
        rasterize_perspective([p0, p1, p2], h, w, |k, d, bary| {
            if d < depth[k] {
                depth[k] = d;
                hit[k] = Some((f as u32, bary));
            }
        });
    }

    let mut image = Image::new(h, w, 3);
    let mut mask = Mask::new(h, w);
    for (k, entry) in hit.iter().enumerate() {
        let Some((f, bary)) = *entry else { continue };
        mask.data[k] = true;
        let tri = mesh.faces[f as usize];
        let mut albedo = [0f32; 3];
        for (v, &b) in tri.iter().zip(&bary) {
            for c in 0..3 {
                albedo[c] += b as f32 * colors[*v as usize][c];
            }
        }
        let normal = match &mesh.vertex_normals {
            Some(normals) => {
                let n: Vec3 = tri.iter().zip(&bary).map(|(v, &b)| normals[*v as usize] * b).sum();
                if n.norm() > 1e-12 {
                    n.normalize()
                } else {
                    mesh.face_normal(f as usize)
                }
            }
            None => mesh.face_normal(f as usize),
        };
        let mut radiance = [0f32; 3];
        for light in lights {
            let cos = normal.dot(&light.direction).max(0.0) as f32;
            for c in 0..3 {
                radiance[c] += cos * light.radiance[c];
            }
        }
        let px = image.pixel_mut(k / w, k % w);
        for c in 0..3 {
            px[c] = (albedo[c] * radiance[c]).clamp(0.0, 1.0);
        }
    }
    if mask.count() == 0 {
        return Err(GeometryError::EmptyRender);
    }
    Ok((image, mask))
}

/// Scan-converts one projected triangle, calling `emit(pixel, view_depth, bary)` with
/// perspective-correct barycentrics for every covered pixel center.
fn rasterize_perspective(
    p: [(f64, f64, f64); 3],
    h: usize,
    w: usize,
    mut emit: impl FnMut(usize, f64, [f64; 3]),
) {
    let edge = |a: (f64, f64, f64), b: (f64, f64, f64), x: f64, y: f64| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
    let area = edge(p[0], p[1], p[2].0, p[2].1);
    if area.abs() < 1e-12 {
        return;
    }
    let min_u = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
    let max_u = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
    let min_v = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
    let max_v = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
    // Pixel j covers [j, j+1) with its center at j + 0.5.
    let Some((c0, c1)) = pixel_span(min_u - 0.5, max_u - 0.5, w) else { return };
    let Some((r0, r1)) = pixel_span(min_v - 0.5, max_v - 0.5, h) else { return };
    for row in r0..=r1 {
        for col in c0..=c1 {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            let w0 = edge(p[1], p[2], x, y) / area;
            let w1 = edge(p[2], p[0], x, y) / area;
            let w2 = edge(p[0], p[1], x, y) / area;
            if w0 < -INSIDE_EPS || w1 < -INSIDE_EPS || w2 < -INSIDE_EPS {
                continue;
            }
            let q = [w0 / p[0].2, w1 / p[1].2, w2 / p[2].2];
            let s = q[0] + q[1] + q[2];
            emit(row * w + col, 1.0 / s, [q[0] / s, q[1] / s, q[2] / s]);
        }
    }
}
