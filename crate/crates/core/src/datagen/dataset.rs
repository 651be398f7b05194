use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_sample, DatagenConfig, DatagenError, Sample};
use crate::geometry::{Image, Mesh};
use crate::io;

/// Item with a stable identifier (file stem or caller-chosen name).
#[derive(Debug, Clone)]
pub struct Named<T> {
    pub id: String,
    pub value: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Sample directory relative to the manifest.
    pub path: String,
    pub split: Split,
    pub mesh_id: String,
    pub rotation_deg: f64,
    pub background_id: String,
    pub seed: u64,
    /// Length unit of the rendered world; meshes are rescaled into it before rendering.
    #[serde(default = "default_units")]
    pub units: String,
}

pub const MODEL_UNITS: &str = "m";

fn default_units() -> String {
    MODEL_UNITS.to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn sample_dir(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn load_sample(&self, record: &ManifestRecord) -> Result<Sample, DatagenError> {
        Sample::load(&self.sample_dir(record))
    }

    /// Accepts either the dataset directory or the manifest file itself.
    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let reader = BufReader::new(io::open(&file)?);
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(io::IoError::from)?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(io::IoError::from)?);
        }
        Ok(Self { root, records })
    }

    pub fn write(&self) -> Result<(), io::IoError> {
        let mut out = std::io::BufWriter::new(io::create(&self.root.join(MANIFEST_FILE))?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Smooth two-color gradient with a low-frequency ripple, for runs without photos.
pub fn procedural_background(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: [f32; 3] = std::array::from_fn(|_| rng.random());
    let b: [f32; 3] = std::array::from_fn(|_| rng.random());
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let freq: f32 = rng.random_range(1.0..4.0);
    let (ca, sa) = (angle.cos(), angle.sin());
    Image::from_fn(height, width, 3, |i, j, c| {
        let u = i as f32 / height.max(1) as f32;
        let v = j as f32 / width.max(1) as f32;
        let t = (0.5 + 0.5 * (ca * u + sa * v)).clamp(0.0, 1.0);
        let ripple = 0.1 * (freq * std::f32::consts::TAU * (u + v)).sin();
        (a[c] * (1.0 - t) + b[c] * t + ripple).clamp(0.0, 1.0)
    })
}

/// Renders one sample per (mesh, rotation) into `out_dir` and writes `manifest.jsonl`.
///
/// Backgrounds are drawn at random per sample; with no backgrounds a seeded procedural one
/// is used. Whole meshes are assigned to a split, so train and val never share a mesh.
pub fn build_dataset(
    meshes: &[Named<Mesh>],
    backgrounds: &[Named<Image>],
    config: &DatagenConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, DatagenError> {
    if meshes.is_empty() {
        return Err(DatagenError::NoMeshes);
    }
    let mut seen = HashSet::new();
    for m in meshes {
        if !seen.insert(m.id.as_str()) {
            return Err(DatagenError::DuplicateMeshId(m.id.clone()));
        }
    }
    let angles = config.rotations.angles();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut order: Vec<usize> = (0..meshes.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((meshes.len() as f64 * config.val_fraction).round() as usize).min(meshes.len() - 1);
    let val: HashSet<usize> = order[..n_val].iter().copied().collect();

    struct Task {
        mesh: usize,
        record: ManifestRecord,
        background: Option<usize>,
    }
    let mut tasks = Vec::new();
    for (mi, mesh) in meshes.iter().enumerate() {
        for &angle in &angles {
            let seed = rng.next_u64();
            let (background, background_id) = if backgrounds.is_empty() {
                (None, format!("procedural-{seed:016x}"))
            } else {
                let b = rng.random_range(0..backgrounds.len());
                (Some(b), backgrounds[b].id.clone())
            };
            let path = format!("{}_rot{:+04}", sanitize(&mesh.id), angle.round() as i64);
            let split = if val.contains(&mi) { Split::Val } else { Split::Train };
            tasks.push(Task {
                mesh: mi,
                background,
                record: ManifestRecord { path, split, mesh_id: mesh.id.clone(), rotation_deg: angle, background_id, seed, units: default_units() },
            });
        }
    }

    std::fs::create_dir_all(out_dir).map_err(io::IoError::from)?;
    let render = &config.render;
    tasks.par_iter().try_for_each(|t| -> Result<(), DatagenError> {
        let procedural;
        let bg = match t.background {
            Some(b) => &backgrounds[b].value,
            None => {
                procedural = procedural_background(t.record.seed, render.height, render.width);
                &procedural
            }
        };
        let mut sample = make_sample(&meshes[t.mesh].value, t.record.rotation_deg, bg, t.record.seed, render)?;
        sample.meta.mesh_id = t.record.mesh_id.clone();
        sample.meta.background_id = t.record.background_id.clone();
        sample.save(&out_dir.join(&t.record.path))?;
        log::info!("wrote sample {}", t.record.path);
        Ok(())
    })?;

    let manifest = DatasetManifest { root: out_dir.to_path_buf(), records: tasks.into_iter().map(|t| t.record).collect() };
    manifest.write()?;
    Ok(manifest)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn sorted_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>, io::IoError> {
    let entries = std::fs::read_dir(dir).map_err(|source| io::IoError::File { path: dir.display().to_string(), source })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| extensions.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Every `.obj` and `.ply` in `dir`, sorted by file name, identified by file stem.
pub fn load_meshes_dir(dir: &Path) -> Result<Vec<Named<Mesh>>, io::IoError> {
    sorted_files(dir, &["obj", "ply"])?
        .into_iter()
        .map(|p| Ok(Named { id: stem(&p), value: io::read_mesh(&p)? }))
        .collect()
}

/// Every `.png`/`.jpg`/`.jpeg` in `dir`, sorted by file name.
pub fn load_backgrounds_dir(dir: &Path) -> Result<Vec<Named<Image>>, io::IoError> {
    sorted_files(dir, &["png", "jpg", "jpeg"])?
        .into_iter()
        .map(|p| Ok(Named { id: stem(&p), value: io::load_image(&p)? }))
        .collect()
}
