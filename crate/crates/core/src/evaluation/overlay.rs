//! Colour-coded slice overlays: true positives green, false negatives yellow,
//! false positives blue, ground-truth outline red, over the grey-scale image.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::data::{slice_buffer, Axis, LabelMap, Volume};
use crate::error::{Error, Result};

pub const TRUE_POSITIVE: Rgb<u8> = Rgb([0, 200, 0]);
pub const FALSE_NEGATIVE: Rgb<u8> = Rgb([255, 255, 0]);
pub const FALSE_POSITIVE: Rgb<u8> = Rgb([0, 0, 255]);
pub const OUTLINE: Rgb<u8> = Rgb([255, 0, 0]);

/// One `h × w` slice, each pixel drawn as a `scale × scale` block.
pub fn overlay_slice(
    image: &[f64],
    pred: &[u8],
    gt: &[u8],
    h: usize,
    w: usize,
    scale: u32,
) -> RgbImage {
    let lo = image.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let outline = |y: usize, x: usize| {
        gt[y * w + x] != 0
            && [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|&(dy, dx)| {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    ny < 0
                        || nx < 0
                        || ny >= h as isize
                        || nx >= w as isize
                        || gt[ny as usize * w + nx as usize] == 0
                })
    };
    let s = scale.max(1);
    let mut img = RgbImage::new(w as u32 * s, h as u32 * s);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let grey = (((image[i] - lo) / range) * 255.0).round() as u8;
            let colour = match (pred[i] != 0, gt[i] != 0) {
                _ if outline(y, x) => OUTLINE,
                (true, true) => TRUE_POSITIVE,
                (false, true) => FALSE_NEGATIVE,
                (true, false) => FALSE_POSITIVE,
                (false, false) => Rgb([grey; 3]),
            };
            for dy in 0..s {
                for dx in 0..s {
                    img.put_pixel(x as u32 * s + dx, y as u32 * s + dy, colour);
                }
            }
        }
    }
    img
}

/// Write one PNG per slice as `<dir>/<prefix>_<index>.png`.
pub fn write_overlays(
    volume: &Volume,
    pred: &LabelMap,
    gt: &LabelMap,
    axis: Axis,
    dir: &Path,
    prefix: &str,
    scale: u32,
) -> Result<Vec<PathBuf>> {
    if pred.dims() != volume.dims() || gt.dims() != volume.dims() {
        return Err(Error::Contract("overlay inputs differ in shape".into()));
    }
    std::fs::create_dir_all(dir)?;
    let images = slice_buffer(volume.voxels(), volume.dims(), axis);
    let preds = slice_buffer(pred.read(), volume.dims(), axis);
    let gts = slice_buffer(gt.read(), volume.dims(), axis);
    let (h, w) = crate::protocols::plane_shape(volume.dims(), axis);
    let mut paths = Vec::with_capacity(images.len());
    for (k, ((im, p), g)) in images.iter().zip(&preds).zip(&gts).enumerate() {
        let path = dir.join(format!("{prefix}_{k:03}.png"));
        overlay_slice(im, p, g, h, w, scale)
            .save(&path)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        paths.push(path);
    }
    Ok(paths)
}
