//! Reconstructs a mannequin from its ground-truth depth pair and scores it with P2S,
//! Chamfer and normal error.
//!
//! `cargo run --example evaluate_reconstruction`

use orthohuman::datagen::{prepare_mesh, RenderConfig};
use orthohuman::geometry::primitives::mannequin;
use orthohuman::geometry::{render_depth_ortho, MapPair, Side};
use orthohuman::{evaluate_model, EvalConfig, ReconstructionConfig};

fn main() -> orthohuman::Result<()> {
    let render = RenderConfig { height: 256, width: 128, ..Default::default() };
    let gt = prepare_mesh(&mannequin(), &render);
    let depths = MapPair::new(render_depth_ortho(&gt, &render.ortho(Side::Front))?, render_depth_ortho(&gt, &render.ortho(Side::Back))?);
    let recon = orthohuman::fusion::reconstruct_maps(&depths, None, &ReconstructionConfig::default())?;
    let eval = evaluate_model(&recon, &gt, &EvalConfig { n_samples: 20_000, ..Default::default() })?;
    println!("{}", serde_json::to_string_pretty(&eval.metrics).unwrap_or_default());
    Ok(())
}
