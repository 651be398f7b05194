//! Builds a small training set from procedural meshes and backgrounds.
//!
//! `cargo run --example generate_dataset [OUT_DIR]`

use std::path::PathBuf;

use orthohuman::datagen::{Named, RotationSweep, Split};
use orthohuman::geometry::primitives::{mannequin, random_blob};
use orthohuman::geometry::Vec3;
use orthohuman::{build_dataset, DatagenConfig};

fn main() -> orthohuman::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("orthohuman-dataset"));
    let meshes = vec![
        Named { id: "mannequin".to_string(), value: mannequin() },
        Named { id: "blob".to_string(), value: random_blob(7, Vec3::zeros(), 0.3, 0.3).painted([0.7, 0.4, 0.3]) },
    ];
    let mut cfg = DatagenConfig { rotations: "-20:20:20".parse::<RotationSweep>()?, val_fraction: 0.5, ..Default::default() };
    cfg.render.height = 128;
    cfg.render.width = 64;
    cfg.render.light_count = 32;
    // No photos: every sample gets a seeded procedural background.
    let manifest = build_dataset(&meshes, &[], &cfg, &out)?;
    println!("{} train / {} val samples in {}", manifest.count(Split::Train), manifest.count(Split::Val), out.display());
    for r in &manifest.records {
        println!("  {:<20} {:?} rot {:+}", r.path, r.split, r.rotation_deg);
    }
    Ok(())
}
