//! PNG encoding for color, depth (16-bit, 5000 counts per meter) and mask images.

use std::path::Path;

use image::{GrayImage as Luma8Image, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{ColorImage, DepthImage, Grid};
use crate::mask::StaticMask;

pub const DEPTH_COUNTS_PER_METER: f64 = 5000.0;

fn check_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

pub fn read_color_png(path: &Path) -> Result<ColorImage> {
    check_exists(path)?;
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Ok(Grid::from_vec(w, h, data))
}

pub fn read_depth_png(path: &Path) -> Result<DepthImage> {
    check_exists(path)?;
    let img = image::open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| p[0] as f64 / DEPTH_COUNTS_PER_METER)
        .collect();
    Ok(Grid::from_vec(w, h, data))
}

pub fn read_mask_png(path: &Path) -> Result<StaticMask> {
    check_exists(path)?;
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| u8::from(p[0] >= 128)).collect();
    Ok(StaticMask::from_grid(Grid::from_vec(w, h, data)))
}

pub fn write_color_png(path: &Path, img: &ColorImage) -> Result<()> {
    let (w, h) = img.dims();
    let buf: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let c = img.get(x as usize, y as usize);
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    buf.save(path)?;
    Ok(())
}

pub fn write_depth_png(path: &Path, depth: &DepthImage) -> Result<()> {
    let (w, h) = depth.dims();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let d = depth.get(x as usize, y as usize) * DEPTH_COUNTS_PER_METER;
        Luma([d.round().clamp(0.0, u16::MAX as f64) as u16])
    });
    buf.save(path)?;
    Ok(())
}

pub fn write_mask_png(path: &Path, mask: &StaticMask) -> Result<()> {
    let (w, h) = mask.dims();
    let buf = Luma8Image::from_raw(w as u32, h as u32, mask.to_luma8())
        .expect("mask buffer size matches dimensions");
    buf.save(path)?;
    Ok(())
}
