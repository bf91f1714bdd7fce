use std::fs;
use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Decodes a PNG/PPM file, center-crops to a square and resizes to `size`,
/// returning `[3,size,size]` values in `[0, 1]`.
pub fn decode_image_file(path: &Path, size: usize) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(to_tensor(&img, size))
}

/// Decodes an image at its own resolution as `[3,H,W]`.
pub fn decode_image_native(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(planar(&rgb, h, w))
}

fn planar(rgb: &RgbImage, h: usize, w: usize) -> Tensor {
    let n = h * w;
    let mut data = vec![0f32; 3 * n];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("buffer sized for 3 planes")
}

fn to_tensor(img: &DynamicImage, size: usize) -> Tensor {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let side = w.min(h);
    let (x0, y0) = ((w - side) / 2, (h - side) / 2);
    let cropped = image::imageops::crop_imm(&rgb, x0, y0, side, side).to_image();
    let resized = if side as usize == size {
        cropped
    } else {
        image::imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle)
    };
    planar(&resized, size, size)
}

/// Writes a `[3,H,W]` (or `[1,3,H,W]`) tensor in `[0,1]` as PNG or PPM,
/// chosen by extension.
pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = match *image.shape() {
        [3, h, w] | [1, 3, h, w] => (h, w),
        ref s => return Err(Error::shape("write_image", format!("expected [3,H,W], got {s:?}"))),
    };
    let n = h * w;
    let d = image.data();
    let buf = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|c| (d[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub(super) fn load_dir(dir: &Path, size: usize) -> Result<Vec<(String, Tensor)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        match decode_image_file(&p, size) {
            Ok(t) => out.push((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), t)),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    Ok(out)
}

/// Sorted list -> (train, test); the last tenth (at least one file when two
/// or more exist) is held out.
pub(super) fn split_files<T>(mut files: Vec<T>) -> (Vec<T>, Vec<T>) {
    let held = if files.len() < 2 { 0 } else { files.len().div_ceil(10) };
    let test = files.split_off(files.len() - held);
    (files, test)
}
