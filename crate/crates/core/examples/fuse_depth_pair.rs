//! Carves a volume from the front/back depth pair of a capsule, meshes it and writes a PLY.
//!
//! `cargo run --example fuse_depth_pair [OUT.ply]`

use std::path::PathBuf;

use orthohuman::fusion::{carve_volume, reconstruct_maps};
use orthohuman::geometry::primitives::capsule;
use orthohuman::geometry::{render_depth_ortho, MapPair, OrthoFrame, OrthographicCamera, Vec3};
use orthohuman::{io, ReconstructionConfig};

fn main() -> orthohuman::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("orthohuman-capsule.ply"));
    let gt = capsule(Vec3::zeros(), 0.15, 0.3, 32, 48);
    let frame = OrthoFrame { center: [0.0, 0.0], pixel_pitch: 0.008, height: 128, width: 64 };
    let depths = MapPair::new(
        render_depth_ortho(&gt, &OrthographicCamera::front(frame))?,
        render_depth_ortho(&gt, &OrthographicCamera::back(frame))?,
    );
    let cfg = ReconstructionConfig { z_resolution: 128, ..Default::default() };
    let voxel = carve_volume(&depths.front, &depths.back, &cfg)?.voxel_size();
    let mesh = reconstruct_maps(&depths, None, &cfg)?;
    io::write_mesh(&out, &mesh)?;
    println!(
        "{} vertices, {} faces, volume {:.4} m^3 (analytic {:.4}), voxel {:.4} m -> {}",
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.signed_volume().abs(),
        std::f64::consts::PI * 0.15f64.powi(2) * (0.6 + 4.0 / 3.0 * 0.15),
        voxel,
        out.display()
    );
    Ok(())
}
