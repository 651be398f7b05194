//! Surface and normal-map metrics for comparing a reconstruction with ground truth.
//!
//! Distances are reported in centimeters, normal error in radians. Meshes must share one
//! frame and be in meters.

mod bvh;

pub use bvh::{closest_point_on_triangle, TriangleBvh};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{cast_orthographic, GeometryError, MapPair, Mesh, NormalMap, OrthoFrame, Side, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0} mesh has no faces")]
    EmptyMesh(&'static str),
    #[error("normal maps have no foreground pixel in common")]
    EmptyOverlap,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Chamfer is the mean of the two directed P2S means.
pub const CHAMFER_CONVENTION: &str = "mean of directed P2S means";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean distance from reconstruction samples to the ground-truth surface.
    pub p2s_cm: f64,
    pub chamfer_cm: f64,
    /// Mean over the foreground pixels of both views.
    pub normal_err_rad: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Surface samples per direction.
    pub n_samples: usize,
    pub seed: u64,
    /// Normal-map grid. `None` fits a 256x128 grid around both meshes.
    pub frame: Option<OrthoFrame>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_samples: 100_000, seed: 0, frame: None }
    }
}

/// Metrics plus the rendered normal maps they were computed from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub frame: OrthoFrame,
    pub recon_normals: MapPair<NormalMap>,
    pub gt_normals: MapPair<NormalMap>,
    /// Per-pixel angular error in radians, on the mask intersection; `None` elsewhere.
    pub normal_error_maps: MapPair<Vec<Option<f64>>>,
}

/// `n` points distributed uniformly by area over the surface.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<Vec<Vec3>, EvalError> {
    if mesh.faces.is_empty() {
        return Err(EvalError::EmptyMesh("sampled"));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random_range(0.0..total);
            let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
            if r1 + r2 > 1.0 {
                (r1, r2) = (1.0 - r1, 1.0 - r2);
            }
            a + (b - a) * r1 + (c - a) * r2
        })
        .collect())
}

fn mean_distance(points: &[Vec3], bvh: &TriangleBvh) -> f64 {
    let sum: f64 = points.par_iter().map(|p| bvh.distance(p)).sum();
    sum / points.len() as f64
}

fn directed_p2s(source: &Mesh, target: &TriangleBvh, n: usize, seed: u64) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::ShapeMismatch("n_samples must be positive".into()));
    }
    Ok(100.0 * mean_distance(&sample_surface(source, n, seed)?, target))
}

/// Mean exact distance from `n_samples` surface samples of `source` to the surface of
/// `target`, in centimeters.
pub fn p2s(source: &Mesh, target: &Mesh, n_samples: usize, seed: u64) -> Result<f64, EvalError> {
    if target.faces.is_empty() {
        return Err(EvalError::EmptyMesh("target"));
    }
    directed_p2s(source, &TriangleBvh::new(target), n_samples, seed)
}

/// Mean of the two directed P2S distances, in centimeters. Both directions use `seed`, so
/// the result is symmetric in `a` and `b`.
pub fn chamfer(a: &Mesh, b: &Mesh, n_samples: usize, seed: u64) -> Result<f64, EvalError> {
    let ab = p2s(a, b, n_samples, seed)?;
    let ba = p2s(b, a, n_samples, seed)?;
    Ok(0.5 * (ab + ba))
}

/// Per-pixel angle between aligned normal maps on the intersection of their masks.
pub fn normal_error_map(pred: &NormalMap, gt: &NormalMap) -> Result<Vec<Option<f64>>, EvalError> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(EvalError::ShapeMismatch(format!("{}x{} vs {}x{}", pred.height, pred.width, gt.height, gt.width)));
    }
    let to_vec = |n: [f32; 3]| Vec3::new(n[0] as f64, n[1] as f64, n[2] as f64);
    Ok((0..pred.values.len())
        .map(|k| {
            (pred.mask.data[k] && gt.mask.data[k]).then(|| {
                let (a, b) = (to_vec(pred.values[k]), to_vec(gt.values[k]));
                // atan2 stays accurate near 0 and pi where acos of a rounded cosine does not.
                a.cross(&b).norm().atan2(a.dot(&b))
            })
        })
        .collect())
}

/// Mean angle in radians between aligned normal maps, over the intersection of their masks.
pub fn normal_error(pred: &NormalMap, gt: &NormalMap) -> Result<f64, EvalError> {
    let errors: Vec<f64> = normal_error_map(pred, gt)?.into_iter().flatten().collect();
    if errors.is_empty() {
        return Err(EvalError::EmptyOverlap);
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Face normals of the first (front) and last (back) surface along each pixel column of
/// `frame`, in the world frame. Background stays zero.
pub fn render_mesh_normals_ortho(mesh: &Mesh, frame: &OrthoFrame) -> Result<MapPair<NormalMap>, EvalError> {
    if mesh.faces.is_empty() {
        return Err(EvalError::EmptyMesh("rendered"));
    }
    let hits = cast_orthographic(mesh, frame);
    if hits.is_empty() {
        return Err(GeometryError::EmptyRender.into());
    }
    Ok(MapPair::new(Side::Front, Side::Back).map(|&side| {
        let mut map = NormalMap::new(side, frame.height, frame.width);
        for (k, hit) in hits.side(side).iter().enumerate() {
            if let Some(h) = hit {
                map.set(k / frame.width, k % frame.width, mesh.face_normal(h.face as usize));
            }
        }
        map
    }))
}

/// Grid of `height x width` pixels centered on the union of both meshes' bounds with a 5%
/// margin.
pub fn fit_frame(meshes: &[&Mesh], height: usize, width: usize) -> Result<OrthoFrame, EvalError> {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for m in meshes {
        let (a, b) = m.bounds().ok_or(EvalError::EmptyMesh("framed"))?;
        lo = lo.inf(&a);
        hi = hi.sup(&b);
    }
    let ext = hi - lo;
    let pitch = (1.05 * (ext.y / height as f64).max(ext.x / width as f64)).max(f64::EPSILON);
    Ok(OrthoFrame { center: [0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y)], pixel_pitch: pitch, height, width })
}

/// P2S (reconstruction to ground truth), Chamfer and front/back normal error.
pub fn evaluate_model(recon: &Mesh, gt: &Mesh, cfg: &EvalConfig) -> Result<Evaluation, EvalError> {
    if recon.faces.is_empty() {
        return Err(EvalError::EmptyMesh("reconstructed"));
    }
    if gt.faces.is_empty() {
        return Err(EvalError::EmptyMesh("ground-truth"));
    }
    let (recon_bvh, gt_bvh) = (TriangleBvh::new(recon), TriangleBvh::new(gt));
    let p2s_cm = directed_p2s(recon, &gt_bvh, cfg.n_samples, cfg.seed)?;
    let back = directed_p2s(gt, &recon_bvh, cfg.n_samples, cfg.seed)?;

    let frame = match cfg.frame {
        Some(f) => f,
        None => fit_frame(&[recon, gt], 256, 128)?,
    };
    let recon_normals = render_mesh_normals_ortho(recon, &frame)?;
    let gt_normals = render_mesh_normals_ortho(gt, &frame)?;
    let normal_error_maps = MapPair::new(
        normal_error_map(&recon_normals.front, &gt_normals.front)?,
        normal_error_map(&recon_normals.back, &gt_normals.back)?,
    );
    let all: Vec<f64> = normal_error_maps.front.iter().chain(&normal_error_maps.back).flatten().copied().collect();
    if all.is_empty() {
        return Err(EvalError::EmptyOverlap);
    }
    let metrics = Metrics {
        p2s_cm,
        chamfer_cm: 0.5 * (p2s_cm + back),
        normal_err_rad: all.iter().sum::<f64>() / all.len() as f64,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
    };
    Ok(Evaluation { metrics, frame, recon_normals, gt_normals, normal_error_maps })
}
