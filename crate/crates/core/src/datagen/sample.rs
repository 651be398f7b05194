use std::path::Path;

use image::{imageops, Rgb32FImage};
use serde::{Deserialize, Serialize};

use super::{place_lights, DatagenError, RenderConfig};
use crate::geometry::{
    cast_orthographic, depth_to_normal, render_perspective_image, rotate_mesh_y, DepthMap, GeometryError, Image,
    MapPair, Mask, Mesh, NormalMap, OrthoHits, OrthographicCamera, Side,
};
use crate::geometry::{depth_from_hits, Vec3};
use crate::io;

pub const VGG_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const VGG_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTargets {
    pub normals: MapPair<NormalMap>,
    pub colors: MapPair<Image>,
    pub depths: MapPair<DepthMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub mesh_id: String,
    pub rotation_deg: f64,
    pub background_id: String,
    pub seed: u64,
    /// Front camera; the back camera shares its frame and depth range.
    pub camera: OrthographicCamera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input_image: Image,
    /// Foreground of every target.
    pub mask: Mask,
    pub targets: SampleTargets,
    pub meta: SampleMeta,
}

/// Per-pixel selection: foreground where `mask`, background elsewhere.
pub fn composite_background(foreground: &Image, mask: &Mask, background: &Image) -> Result<Image, GeometryError> {
    if !foreground.same_shape(background) || mask.height != foreground.height || mask.width != foreground.width {
        return Err(GeometryError::ShapeMismatch(format!(
            "foreground {}x{}x{}, mask {}x{}, background {}x{}x{}",
            foreground.height,
            foreground.width,
            foreground.channels,
            mask.height,
            mask.width,
            background.height,
            background.width,
            background.channels
        )));
    }
    let mut out = background.clone();
    let c = foreground.channels;
    for (k, &m) in mask.data.iter().enumerate() {
        if m {
            out.data[k * c..(k + 1) * c].copy_from_slice(&foreground.data[k * c..(k + 1) * c]);
        }
    }
    Ok(out)
}

/// Center-crops to the target aspect ratio, then resizes bilinearly to `height x width`.
pub fn fit_background(background: &Image, height: usize, width: usize) -> Image {
    let img = background;
    if img.height == height && img.width == width && img.channels == 3 {
        return img.clone();
    }
    let rgb = Rgb32FImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let p = img.pixel(y as usize, x as usize);
        image::Rgb([p[0], p[1], p.get(2).copied().unwrap_or(p[0])])
    });
    let target_aspect = width as f64 / height as f64;
    let (src_w, src_h) = (img.width as f64, img.height as f64);
    let (cw, ch) = if src_w / src_h > target_aspect {
        ((src_h * target_aspect).round().max(1.0), src_h)
    } else {
        (src_w, (src_w / target_aspect).round().max(1.0))
    };
    let x0 = ((src_w - cw) / 2.0).floor() as u32;
    let y0 = ((src_h - ch) / 2.0).floor() as u32;
    let cropped = imageops::crop_imm(&rgb, x0, y0, cw as u32, ch as u32).to_image();
    let resized = imageops::resize(&cropped, width as u32, height as u32, imageops::FilterType::Triangle);
    Image { height, width, channels: 3, data: resized.into_raw() }
}

/// Unlit albedo seen by an orthographic camera: vertex colors interpolated at the ray hit.
pub fn render_shadefree(mesh: &Mesh, camera: &OrthographicCamera) -> Result<Image, GeometryError> {
    let hits = cast_orthographic(mesh, &camera.frame);
    shadefree_from_hits(mesh, &hits, camera.side)
}

fn shadefree_from_hits(mesh: &Mesh, hits: &OrthoHits, side: Side) -> Result<Image, GeometryError> {
    let colors = mesh.vertex_colors.as_ref().ok_or(GeometryError::MissingColors)?;
    if hits.is_empty() {
        return Err(GeometryError::EmptyRender);
    }
    let mut img = Image::new(hits.frame.height, hits.frame.width, 3);
    for (k, hit) in hits.side(side).iter().enumerate() {
        let Some(hit) = hit else { continue };
        let face = mesh.faces[hit.face as usize];
        let px = &mut img.data[3 * k..3 * k + 3];
        for (c, out) in px.iter_mut().enumerate() {
            let v: f64 = (0..3).map(|i| hit.bary[i] * colors[face[i] as usize][c] as f64).sum();
            *out = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(img)
}

/// Moves the surface centroid to the origin and optionally rescales to `target_height`.
pub fn prepare_mesh(mesh: &Mesh, config: &RenderConfig) -> Mesh {
    let centered = mesh.translated(-mesh.surface_centroid());
    match (config.target_height, centered.bounds()) {
        (Some(h), Some((lo, hi))) if hi.y > lo.y => centered.scaled(h / (hi.y - lo.y)),
        _ => centered,
    }
}

/// Renders one sample. The mesh is centered (see [`prepare_mesh`]), rotated about y,
/// lit with a fresh light set drawn from `seed`, composited over `background`, and
/// rendered into the six orthographic targets.
pub fn make_sample(
    mesh: &Mesh,
    rotation_deg: f64,
    background: &Image,
    seed: u64,
    config: &RenderConfig,
) -> Result<Sample, DatagenError> {
    let subject = rotate_mesh_y(&prepare_mesh(mesh, config), rotation_deg);
    if subject.vertex_colors.is_none() {
        return Err(GeometryError::MissingColors.into());
    }
    let lights = place_lights(config.light_count, seed).sources(config.light_intensity);
    let (shaded, silhouette) = render_perspective_image(&subject, &lights, &config.perspective())?;
    let bg = fit_background(background, config.height, config.width);
    let input_image = composite_background(&shaded, &silhouette, &bg)?;

    let front_cam = config.ortho(Side::Front);
    let hits = cast_orthographic(&subject, &front_cam.frame);
    let depths = MapPair::new(
        depth_from_hits(&hits, &front_cam)?,
        depth_from_hits(&hits, &config.ortho(Side::Back))?,
    );
    let colors = MapPair::new(
        shadefree_from_hits(&subject, &hits, Side::Front)?,
        shadefree_from_hits(&subject, &hits, Side::Back)?,
    );
    let normals = depths.map(depth_to_normal);
    Ok(Sample {
        input_image,
        mask: hits.mask(),
        targets: SampleTargets { normals, colors, depths },
        meta: SampleMeta {
            mesh_id: String::new(),
            rotation_deg,
            background_id: String::new(),
            seed,
            camera: front_cam,
        },
    })
}

/// Per-channel `(x - mean) / std` with the ImageNet statistics.
pub fn normalize_input(img: &Image) -> Image {
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(img.channels) {
        for c in 0..3.min(img.channels) {
            px[c] = (px[c] - VGG_MEAN[c]) / VGG_STD[c];
        }
    }
    out
}

pub fn denormalize_input(img: &Image) -> Image {
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(img.channels) {
        for c in 0..3.min(img.channels) {
            px[c] = px[c] * VGG_STD[c] + VGG_MEAN[c];
        }
    }
    out
}

const FILES: [&str; 9] =
    ["input.png", "mask.png", "depth_f.pfm", "depth_b.pfm", "normal_f.pfm", "normal_b.pfm", "color_f.png", "color_b.png", "meta.json"];

impl Sample {
    /// Writes the sample directory; every file is a deterministic function of the sample.
    pub fn save(&self, dir: &Path) -> Result<(), io::IoError> {
        std::fs::create_dir_all(dir)?;
        io::save_image_png(&dir.join("input.png"), &self.input_image)?;
        io::save_mask_png(&dir.join("mask.png"), &self.mask)?;
        for side in [Side::Front, Side::Back] {
            let s = side.suffix();
            io::save_depth_pfm(&dir.join(format!("depth_{s}.pfm")), self.targets.depths.get(side))?;
            io::save_normal_pfm(&dir.join(format!("normal_{s}.pfm")), self.targets.normals.get(side))?;
            io::save_image_png(&dir.join(format!("color_{s}.png")), self.targets.colors.get(side))?;
        }
        std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DatagenError> {
        let corrupt = |message: String| DatagenError::CorruptSample { path: dir.display().to_string(), message };
        for f in FILES {
            if !dir.join(f).is_file() {
                return Err(corrupt(format!("missing {f}")));
            }
        }
        let meta: SampleMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json")).map_err(io::IoError::from)?)
            .map_err(io::IoError::from)?;
        let input_image = io::load_image(&dir.join("input.png"))?;
        let mask = io::load_mask_png(&dir.join("mask.png"))?;
        let cam = meta.camera;
        let load_side = |side: Side| -> Result<(DepthMap, NormalMap, Image), DatagenError> {
            let s = side.suffix();
            let depth = io::load_depth_pfm(&dir.join(format!("depth_{s}.pfm")), side, cam.frame, cam.near, cam.far)?;
            let normal = io::load_normal_pfm(&dir.join(format!("normal_{s}.pfm")), side)?;
            let color = io::load_image(&dir.join(format!("color_{s}.png")))?.masked(&mask);
            Ok((depth, normal, color))
        };
        let (df, nf, cf) = load_side(Side::Front)?;
        let (db, nb, cb) = load_side(Side::Back)?;
        for (name, m) in [("depth_f", &df.mask), ("depth_b", &db.mask), ("normal_f", &nf.mask), ("normal_b", &nb.mask)] {
            if *m != mask {
                return Err(corrupt(format!("{name} foreground differs from mask.png")));
            }
        }
        if input_image.height != mask.height || input_image.width != mask.width {
            return Err(corrupt("input size differs from mask".into()));
        }
        Ok(Sample {
            input_image,
            mask,
            targets: SampleTargets {
                normals: MapPair::new(nf, nb),
                colors: MapPair::new(cf, cb),
                depths: MapPair::new(df, db),
            },
            meta,
        })
    }

    /// Projects the orthographic foreground into the perspective input view.
    pub fn input_silhouette_estimate(&self, config: &RenderConfig) -> Mask {
        let basis = config.perspective().basis();
        let mut out = Mask::new(config.height, config.width);
        for side in [Side::Front, Side::Back] {
            let d = self.targets.depths.get(side);
            for i in 0..d.height() {
                for j in 0..d.width() {
                    let Some(z) = d.meters(i, j) else { continue };
                    let (x, y) = d.frame.pixel_center(i, j);
                    if let Some((col, row, _)) = basis.project(&Vec3::new(x, y, z), config.height, config.width) {
                        let (r, c) = (row.floor(), col.floor());
                        if r >= 0.0 && c >= 0.0 && (r as usize) < config.height && (c as usize) < config.width {
                            out.set(r as usize, c as usize, true);
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{primitives, OrthoFrame};

    fn small_config() -> RenderConfig {
        RenderConfig { height: 64, width: 32, light_count: 12, ..RenderConfig::default() }
    }

    #[test]
    fn composite_selects_per_pixel() {
        let fg = Image::filled(4, 4, &[1.0, 0.0, 0.0]);
        let bg = Image::filled(4, 4, &[0.0, 0.0, 1.0]);
        assert_eq!(composite_background(&fg, &Mask::from_fn(4, 4, |_, _| true), &bg).unwrap(), fg);
        assert_eq!(composite_background(&fg, &Mask::new(4, 4), &bg).unwrap(), bg);
        let checker = Mask::from_fn(4, 4, |i, j| (i + j) % 2 == 0);
        let out = composite_background(&fg, &checker, &bg).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(out.pixel(i, j), if checker.get(i, j) { fg.pixel(i, j) } else { bg.pixel(i, j) });
            }
        }
        assert!(composite_background(&fg, &Mask::new(3, 4), &bg).is_err());
    }

    #[test]
    fn fit_background_crops_center() {
        // Left half red, right half green, 8 wide by 2 tall, fitted to 2x4: the center crop
        // keeps columns 2..6, so each half of the output keeps its color.
        let src = Image::from_fn(2, 8, 3, |_, j, c| if (j < 4) == (c == 0) && c < 2 { 1.0 } else { 0.0 });
        let out = fit_background(&src, 2, 4);
        assert_eq!((out.height, out.width), (2, 4));
        assert_eq!(out.pixel(1, 1), &[1.0, 0.0, 0.0]);
        assert_eq!(out.pixel(1, 2), &[0.0, 1.0, 0.0]);
        // Upscaling a tall source keeps the full width.
        let tall = fit_background(&Image::filled(10, 2, &[0.2, 0.4, 0.6]), 8, 4);
        assert!(tall.data.chunks(3).all(|p| (p[1] - 0.4).abs() < 1e-6));
    }

    #[test]
    fn shadefree_uniform_and_light_invariant() {
        let frame = OrthoFrame { center: [0.0, 0.0], pixel_pitch: 0.01, height: 20, width: 20 };
        let m = primitives::uv_sphere(Vec3::zeros(), 0.07, 12, 24).painted([1.0, 0.0, 0.0]);
        let img = render_shadefree(&m, &OrthographicCamera::front(frame)).unwrap();
        let hits = cast_orthographic(&m, &frame).mask();
        for k in 0..frame.len() {
            let px = &img.data[3 * k..3 * k + 3];
            if hits.data[k] {
                assert_eq!(px, [1.0, 0.0, 0.0]);
            } else {
                assert_eq!(px, [0.0, 0.0, 0.0]);
            }
        }
        let bare = primitives::uv_sphere(Vec3::zeros(), 0.07, 12, 24);
        assert!(matches!(render_shadefree(&bare, &OrthographicCamera::front(frame)), Err(GeometryError::MissingColors)));
    }

    #[test]
    fn shadefree_two_color_interpolation() {
        // One triangle with red, green and blue corners facing the front camera.
        let verts = vec![Vec3::new(0.1, -0.1, 0.0), Vec3::new(-0.1, -0.1, 0.0), Vec3::new(0.0, 0.1, 0.0)];
        let m = Mesh::new(verts.clone(), vec![[0, 1, 2]])
            .unwrap()
            .with_colors(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
            .unwrap();
        let frame = OrthoFrame { center: [0.0, 0.0], pixel_pitch: 0.02, height: 10, width: 10 };
        let img = render_shadefree(&m, &OrthographicCamera::front(frame)).unwrap();
        let mask = cast_orthographic(&m, &frame).mask();
        let mut checked = 0;
        for i in 0..10 {
            for j in 0..10 {
                if !mask.get(i, j) {
                    continue;
                }
                let (x, y) = frame.pixel_center(i, j);
                // Barycentric oracle by area ratios.
                let area = |a: Vec3, b: Vec3, c: Vec3| ((b - a).cross(&(c - a))).z / 2.0;
                let p = Vec3::new(x, y, 0.0);
                let total = area(verts[0], verts[1], verts[2]);
                let w = [area(p, verts[1], verts[2]) / total, area(verts[0], p, verts[2]) / total, area(verts[0], verts[1], p) / total];
                let px = img.pixel(i, j);
                for c in 0..3 {
                    assert!((px[c] as f64 - w[c]).abs() < 1e-6);
                }
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn normalize_constants_and_inverse() {
        let img = Image::from_fn(1, 2, 3, |_, j, c| if j == 0 { VGG_MEAN[c] } else { 1.0 });
        let n = normalize_input(&img);
        assert_eq!(&n.data[..3], &[0.0, 0.0, 0.0]);
        for (got, want) in n.data[3..].iter().zip([2.249, 2.429, 2.640]) {
            assert!((got - want).abs() < 1e-3);
        }
        let back = denormalize_input(&n);
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn sample_invariants_and_determinism() {
        let cfg = small_config();
        let mesh = primitives::mannequin();
        let bg = Image::filled(10, 10, &[0.3, 0.6, 0.1]);
        let s = make_sample(&mesh, 20.0, &bg, 5, &cfg).unwrap();
        assert_eq!(s, make_sample(&mesh, 20.0, &bg, 5, &cfg).unwrap());
        let m = &s.mask;
        assert!(m.count() > 50);
        for side in [Side::Front, Side::Back] {
            assert_eq!(&s.targets.depths.get(side).mask, m);
            assert_eq!(&s.targets.normals.get(side).mask, m);
            let c = s.targets.colors.get(side);
            for k in 0..m.data.len() {
                if !m.data[k] {
                    assert!(c.data[3 * k..3 * k + 3].iter().all(|&v| v == 0.0));
                }
            }
        }
        // Background visible in the input.
        assert_eq!(s.input_image.pixel(0, 0), &[0.3, 0.6, 0.1]);
        // Shade-free targets ignore the light seed; the input does not.
        let other = make_sample(&mesh, 20.0, &bg, 6, &cfg).unwrap();
        assert_eq!(other.targets, s.targets);
        assert_ne!(other.input_image, s.input_image);
    }

    #[test]
    fn silhouette_overlap_with_input() {
        let cfg = small_config();
        let s = make_sample(&primitives::mannequin(), 0.0, &Image::new(4, 4, 3), 1, &cfg).unwrap();
        let (_, input_mask) =
            render_perspective_image(&rotate_mesh_y(&prepare_mesh(&primitives::mannequin(), &cfg), 0.0), &[], &cfg.perspective())
                .unwrap();
        let projected = s.input_silhouette_estimate(&cfg);
        assert!(projected.iou(&input_mask) > 0.7, "{}", projected.iou(&input_mask));
    }

    #[test]
    fn mirrored_rotations_give_mirrored_depth() {
        let cfg = small_config();
        let mesh = primitives::mannequin();
        let bg = Image::new(4, 4, 3);
        let a = make_sample(&mesh, -40.0, &bg, 1, &cfg).unwrap();
        let b = make_sample(&mesh, 40.0, &bg, 1, &cfg).unwrap();
        let w = cfg.width;
        for side in [Side::Front, Side::Back] {
            let (da, db) = (a.targets.depths.get(side), b.targets.depths.get(side));
            let mut mismatched = 0;
            for i in 0..cfg.height {
                for j in 0..w {
                    match (da.meters(i, j), db.meters(i, w - 1 - j)) {
                        (Some(x), Some(y)) => assert!((x - y).abs() < 1e-3, "{x} {y}"),
                        (None, None) => {}
                        _ => mismatched += 1,
                    }
                }
            }
            // Pixel centers on the mirror line are exact; silhouettes may differ by a few edge pixels.
            assert!(mismatched <= 4, "{mismatched}");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = small_config();
        let mut s = make_sample(&primitives::mannequin(), 10.0, &Image::filled(4, 4, &[0.5, 0.5, 0.5]), 2, &cfg).unwrap();
        s.meta.mesh_id = "m".into();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = Sample::load(dir.path()).unwrap();
        assert_eq!(back.meta, s.meta);
        assert_eq!(back.mask, s.mask);
        assert_eq!(back.targets.depths, s.targets.depths);
        assert_eq!(back.targets.normals, s.targets.normals);
        for (a, b) in back.input_image.data.iter().zip(&s.input_image.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        std::fs::remove_file(dir.path().join("normal_b.pfm")).unwrap();
        assert!(matches!(Sample::load(dir.path()), Err(DatagenError::CorruptSample { .. })));
    }
}
