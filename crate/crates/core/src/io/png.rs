use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use super::{format_err, IoError};
use crate::geometry::{DepthMap, Image, Mask, OrthoFrame, Side};

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the first three channels as 8-bit RGB.
pub fn save_image_png(path: &Path, img: &Image) -> Result<(), IoError> {
    if img.channels < 3 {
        return Err(format_err("png", "need at least three channels"));
    }
    let out = RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let p = img.pixel(y as usize, x as usize);
        image::Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
    });
    super::create(path)?;
    out.save(path)?;
    Ok(())
}

/// Loads any supported raster image as three-channel floats in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image, IoError> {
    let rgb = image::open(path)?.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Ok(Image { height: h as usize, width: w as usize, channels: 3, data: rgb.into_raw() })
}

pub fn save_mask_png(path: &Path, mask: &Mask) -> Result<(), IoError> {
    let out = GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    super::create(path)?;
    out.save(path)?;
    Ok(())
}

pub fn load_mask_png(path: &Path) -> Result<Mask, IoError> {
    let gray = image::open(path)?.to_luma8();
    let (w, h) = gray.dimensions();
    Ok(Mask { height: h as usize, width: w as usize, data: gray.into_raw().into_iter().map(|v| v >= 128).collect() })
}

/// 16-bit grayscale export: stored value = `round(depth_norm * 65535)`, background 0.
pub fn save_depth_png16(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    let w = depth.width();
    let out: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, depth.height() as u32, |x, y| {
        let v = depth.values[y as usize * w + x as usize];
        Luma([(v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16])
    });
    super::create(path)?;
    out.save(path)?;
    Ok(())
}

pub fn load_depth_png16(path: &Path, side: Side, frame: OrthoFrame, near: f64, far: f64) -> Result<DepthMap, IoError> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let frame = frame.resampled(h as usize, w as usize);
    let values: Vec<f32> = img.into_raw().into_iter().map(|v| (v as f64 / 65535.0) as f32).collect();
    Ok(DepthMap::from_normalized(side, frame, near, far, &values, 0.0))
}
