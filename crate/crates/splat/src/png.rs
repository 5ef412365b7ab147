use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Result, SplatError};
use crate::raster::RenderOutput;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb_png(path: &Path, width: usize, height: usize, rgb: &[f32]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(SplatError::Shape(format!("{} rgb values for {width}x{height}", rgb.len())));
    }
    let img = RgbImage::from_raw(width as u32, height as u32, rgb.iter().map(|&v| to_u8(v)).collect())
        .expect("buffer size checked");
    img.save(path)?;
    Ok(())
}

pub fn save_gray_png(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(SplatError::Shape(format!("{} values for {width}x{height}", values.len())));
    }
    let img = GrayImage::from_raw(width as u32, height as u32, values.iter().map(|&v| to_u8(v)).collect())
        .expect("buffer size checked");
    img.save(path)?;
    Ok(())
}

/// Returns `(width, height, H×W×3 values in [0, 1])`.
pub fn load_rgb_png(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()))
}

pub fn load_gray_png(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()))
}

impl RenderOutput {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_rgb_png(path, self.width, self.height, &self.rgb)
    }

    pub fn save_opacity_png(&self, path: &Path) -> Result<()> {
        save_gray_png(path, self.width, self.height, &self.opacity)
    }
}
