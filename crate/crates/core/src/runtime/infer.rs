use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

use super::{Checkpoint, RuntimeError};
use crate::datagen::{normalize_input, RenderConfig};
use crate::fusion::{reconstruct_maps, ReconstructionConfig};
use crate::geometry::{Image, Mesh, OrthoFrame, OrthographicCamera, Side};
use crate::io;
use crate::networks::{image_to_tensor, OrthoHumanNet, PipelineOutput, PredictedMaps};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    /// Working `[height, width]`. Inputs that do not pad up to it are resized to it first.
    /// `None` keeps the input size and only pads.
    pub resolution: Option<[usize; 2]>,
    pub reconstruct: bool,
    pub fusion: ReconstructionConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { resolution: None, reconstruct: true, fusion: ReconstructionConfig::default() }
    }
}

/// Predictions for one image at its working size.
#[derive(Debug, Clone)]
pub struct Inference {
    /// Batch of one, cropped to the working size.
    pub output: PipelineOutput,
    pub maps: PredictedMaps,
    pub mesh: Option<Mesh>,
    /// Front camera whose frame matches the cropped maps.
    pub camera: OrthographicCamera,
}

/// Frame covering the top-left `height x width` pixels of `frame`.
pub fn crop_frame(frame: &OrthoFrame, height: usize, width: usize) -> OrthoFrame {
    let p = frame.pixel_pitch;
    OrthoFrame {
        center: [
            frame.center[0] + 0.5 * (frame.width as f64 - width as f64) * p,
            frame.center[1] + 0.5 * (frame.height as f64 - height as f64) * p,
        ],
        pixel_pitch: p,
        height,
        width,
    }
}

fn to_rgb(img: &Image) -> Result<Image, RuntimeError> {
    match img.channels {
        3 => Ok(img.clone()),
        1 => Ok(Image::from_fn(img.height, img.width, 3, |i, j, _| img.pixel(i, j)[0])),
        c if c > 3 => Ok(Image::from_fn(img.height, img.width, 3, |i, j, ch| img.pixel(i, j)[ch])),
        c => Err(RuntimeError::BadImage(format!("{c}-channel image"))),
    }
}

fn resize(img: &Image, height: usize, width: usize) -> Result<Image, RuntimeError> {
    let buf = image::Rgb32FImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .ok_or_else(|| RuntimeError::BadImage("pixel buffer does not match its size".into()))?;
    let out = image::imageops::resize(&buf, width as u32, height as u32, image::imageops::FilterType::Triangle);
    Ok(Image { height, width, channels: 3, data: out.into_raw() })
}

/// Edge-replicating pad on the bottom and right.
fn pad(img: &Image, height: usize, width: usize) -> Image {
    Image::from_fn(height, width, img.channels, |i, j, c| img.pixel(i.min(img.height - 1), j.min(img.width - 1))[c])
}

/// Runs the stack on one image in `[0, 1]`.
///
/// The image is resized to `cfg.resolution` unless padding alone reaches it, padded up
/// to the network's size multiple, normalized, and the outputs are cropped back to the
/// working size. `camera` describes the orthographic grid at the model resolution.
pub fn infer_image(net: &OrthoHumanNet, image: &Image, camera: &OrthographicCamera, cfg: &InferConfig) -> Result<Inference, RuntimeError> {
    if image.height == 0 || image.width == 0 {
        return Err(RuntimeError::BadImage("empty image".into()));
    }
    let m = net.config().multiple();
    let up = |x: usize| x.div_ceil(m) * m;
    let mut work = to_rgb(image)?;
    if let Some([h, w]) = cfg.resolution {
        if h % m != 0 || w % m != 0 {
            return Err(RuntimeError::Shape(format!("resolution {h}x{w} is not a multiple of {m}")));
        }
        if (up(work.height), up(work.width)) != (h, w) {
            work = resize(&work, h, w)?;
        }
    }
    let (h, w) = (work.height, work.width);
    let (hp, wp) = (up(h), up(w));
    let padded = if (hp, wp) == (h, w) { work } else { pad(&work, hp, wp) };
    let x = image_to_tensor(&normalize_input(&padded), DType::F32, net.device())?;
    let out = net.forward(&x)?;
    let crop = |t: Option<candle_core::Tensor>| -> Result<Option<candle_core::Tensor>, RuntimeError> {
        Ok(t.map(|t| t.narrow(2, 0, h)?.narrow(3, 0, w)).transpose()?)
    };
    let output = PipelineOutput {
        normals: crop(out.normals)?,
        colors: crop(out.colors)?,
        depths: crop(Some(out.depths))?.expect("depths are always present"),
        phi_color: crop(out.phi_color)?,
        phi_normal: crop(out.phi_normal)?,
    };
    let padded_frame = if (camera.frame.height, camera.frame.width) == (hp, wp) {
        camera.frame
    } else {
        camera.frame.resampled(hp, wp)
    };
    let camera = OrthographicCamera { frame: crop_frame(&padded_frame, h, w), ..*camera };
    let maps = output.to_maps(0, &camera, cfg.fusion.mask_eps)?;
    let mesh = if cfg.reconstruct {
        cfg.fusion.validate()?;
        match reconstruct_maps(&maps.depths, maps.colors.as_ref(), &cfg.fusion) {
            Ok(mesh) => Some(mesh),
            Err(crate::fusion::FusionError::NoSurface) => {
                log::warn!("prediction has no foreground; skipping the mesh");
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    Ok(Inference { output, maps, mesh, camera })
}

/// Loads an image file and runs the checkpointed model on it.
pub fn infer(image_path: &Path, checkpoint: &Checkpoint, cfg: &InferConfig) -> Result<Inference, RuntimeError> {
    let image = io::load_image(image_path).map_err(|e| RuntimeError::BadImage(format!("{}: {e}", image_path.display())))?;
    let net = checkpoint.build_model(&Device::Cpu)?;
    let camera = checkpoint.camera.unwrap_or_else(|| RenderConfig::default().ortho(Side::Front));
    let cfg = InferConfig { resolution: cfg.resolution.or(Some(checkpoint.train.resolution)), ..cfg.clone() };
    infer_image(&net, &image, &camera, &cfg)
}

/// Writes depth, normal and color maps for both sides, the shared mask and the mesh.
pub fn write_inference(dir: &Path, result: &Inference) -> Result<Vec<PathBuf>, RuntimeError> {
    std::fs::create_dir_all(dir).map_err(io::IoError::from)?;
    let mut written = Vec::new();
    let mut out = |name: String| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    for side in [Side::Front, Side::Back] {
        let s = side.suffix();
        let depth = result.maps.depths.get(side);
        io::save_depth_pfm(&out(format!("depth_{s}.pfm")), depth)?;
        io::save_depth_png16(&out(format!("depth_{s}.png")), depth)?;
        if let Some(n) = &result.maps.normals {
            io::save_normal_pfm(&out(format!("normal_{s}.pfm")), n.get(side))?;
            io::save_image_png(&out(format!("normal_{s}.png")), &n.get(side).to_image())?;
        }
        if let Some(c) = &result.maps.colors {
            io::save_image_png(&out(format!("color_{s}.png")), c.get(side))?;
        }
    }
    io::save_mask_png(&out("mask.png".into()), &result.maps.mask)?;
    if let Some(mesh) = &result.mesh {
        io::write_mesh(&out("mesh.ply".into()), mesh)?;
    }
    std::fs::write(out("camera.json".into()), serde_json::to_string_pretty(&result.camera).unwrap_or_default()).map_err(io::IoError::from)?;
    Ok(written)
}
