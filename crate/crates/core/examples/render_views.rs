//! Renders a mannequin through the perspective input camera and the pixel-aligned
//! orthographic front/back cameras, then writes the maps as images.
//!
//! `cargo run --example render_views [OUT_DIR]`

use std::path::PathBuf;

use orthohuman::datagen::{place_lights, prepare_mesh, RenderConfig};
use orthohuman::geometry::primitives::mannequin;
use orthohuman::geometry::{depth_to_normal, render_depth_ortho, render_perspective_image, Side};
use orthohuman::io;

fn main() -> orthohuman::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("orthohuman-render"));
    std::fs::create_dir_all(&out).map_err(io::IoError::from)?;
    let cfg = RenderConfig { height: 256, width: 128, light_count: 32, ..Default::default() };
    let mesh = prepare_mesh(&mannequin(), &cfg);

    let lights = place_lights(cfg.light_count, 0).sources(cfg.light_intensity);
    let (shaded, silhouette) = render_perspective_image(&mesh, &lights, &cfg.perspective())?;
    io::save_image_png(&out.join("perspective.png"), &shaded)?;

    for side in [Side::Front, Side::Back] {
        let depth = render_depth_ortho(&mesh, &cfg.ortho(side))?;
        let s = side.suffix();
        io::save_depth_png16(&out.join(format!("depth_{s}.png")), &depth)?;
        io::save_image_png(&out.join(format!("normal_{s}.png")), &depth_to_normal(&depth).to_image())?;
        if side == Side::Front {
            println!("perspective vs orthographic silhouette IoU: {:.3}", silhouette.iou(&depth.mask));
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
